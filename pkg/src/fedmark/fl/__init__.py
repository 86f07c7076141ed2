"""Federated training orchestrator."""

from fedmark.fl.core import (
    FLConfig,
    FLState,
    ROUND_CSV_HEADER,
    RoundMetrics,
    apply_global,
    init_fl,
    run_round,
    run_rounds,
    scaling_factor,
    secure_transmit,
    select_clients,
)
from fedmark.fl.server import aggregate_round

__all__ = [
    "FLConfig",
    "FLState",
    "ROUND_CSV_HEADER",
    "RoundMetrics",
    "aggregate_round",
    "apply_global",
    "init_fl",
    "run_round",
    "run_rounds",
    "scaling_factor",
    "secure_transmit",
    "select_clients",
]
