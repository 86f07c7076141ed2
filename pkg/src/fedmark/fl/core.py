"""Federated training rounds: selection, local training, scaled secure
transmission, blind aggregation, and the global model update.

Every round draws its client selection, training shuffles, and batch mixing
from streams derived deterministically from (config seed, round, role), so a
run is reproducible end to end and a plaintext twin run sees identical data
order.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from fedmark.data import ClientShards, Dataset
from fedmark.errors import ConfigurationError, DimensionError, InputError
from fedmark.fl import server
from fedmark.he.scheme import Ciphertext, HEKeyPair, decrypt, encrypt, he_keygen
from fedmark.nn.arch import Arch, Gradient, ModelParams
from fedmark.nn.engine import evaluate, init_model, train_local
from fedmark.trigger import TriggerSet
from fedmark.watermark import train_with_trigger

# Stream tags keep the per-purpose RNG draws independent of each other.
_TAG_INIT, _TAG_HE, _TAG_SELECT, _TAG_TRAIN, _TAG_MIX = range(5)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class FLConfig:
    total_clients: int  # N
    clients_per_round: int  # n
    rounds: int
    client_lr: float = 0.01
    server_lr: float = 1.0
    local_epochs: int = 2
    scaling: float | None = None  # None -> N / n
    initiator: int = 0
    seed: int = 0
    batch_size: int = 32
    trigger_per_batch: int | None = None  # None -> max(1, batch_size // 4)
    he_scale_bits: int = 20
    use_he: bool = True
    force_initiator: bool = False  # initiator always among the selected clients

    def __post_init__(self):
        if not 1 <= self.clients_per_round <= self.total_clients:
            raise ConfigurationError(
                f"need 1 <= n <= N, got n={self.clients_per_round}, N={self.total_clients}"
            )
        if self.client_lr <= 0 or self.server_lr <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.scaling is not None and self.scaling < 1:
            raise ConfigurationError(f"scaling factor must be >= 1, got {self.scaling}")
        if not 0 <= self.initiator < self.total_clients:
            raise ConfigurationError(
                f"initiator index {self.initiator} out of range for N={self.total_clients}"
            )
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")

    @property
    def resolved_scaling(self) -> float:
        if self.scaling is not None:
            return self.scaling
        return scaling_factor(self.total_clients, self.clients_per_round)


@dataclass
class RoundMetrics:
    round: int
    test_acc: float | None
    wm_acc: float | None
    selected: tuple[int, ...]
    wall_ms: float

    def csv_row(self) -> list:
        fmt = lambda a: "" if a is None else f"{a:.6f}"
        return [
            self.round,
            fmt(self.test_acc),
            fmt(self.wm_acc),
            ",".join(str(i) for i in self.selected),
            f"{self.wall_ms:.1f}",
        ]


ROUND_CSV_HEADER = ["round", "test_acc", "wm_acc", "selected_clients", "wall_ms"]


@dataclass
class FLState:
    round_idx: int
    model: ModelParams
    shards: ClientShards
    he_key: HEKeyPair
    history: list[RoundMetrics] = field(default_factory=list)
    test_data: Dataset | None = None
    wm_eval: Dataset | None = None


def scaling_factor(total_clients: int, clients_per_round: int) -> float:
    """The initiator's gradient boost: total clients over clients per round."""
    if clients_per_round < 1:
        raise InputError(f"clients per round must be >= 1, got {clients_per_round}")
    if clients_per_round > total_clients:
        raise InputError(
            f"cannot select {clients_per_round} of {total_clients} clients"
        )
    return total_clients / clients_per_round


def secure_transmit(
    grad: Gradient, is_initiator: bool, scaling: float, key: HEKeyPair
) -> Ciphertext:
    """Encrypt the update; the initiator's is scaled before encryption."""
    if scaling < 1:
        raise InputError(f"scaling factor must be >= 1, got {scaling}")
    if is_initiator:
        grad = Gradient(grad.values * scaling)
    return encrypt(key, grad)


def apply_global(model: ModelParams, grad: Gradient, server_lr: float) -> ModelParams:
    """M - server_lr * G, without mutating the input."""
    if grad.dim != model.dim:
        raise DimensionError(f"gradient dim {grad.dim} != model dim {model.dim}")
    updated = model.values.astype(np.float64) - server_lr * grad.values.astype(np.float64)
    return model.with_values(updated.astype(model.values.dtype))


def init_fl(
    cfg: FLConfig,
    arch: Arch,
    input_shape: tuple[int, int, int],
    shards: ClientShards,
    test_data: Dataset | None = None,
    wm_eval: Dataset | None = None,
) -> FLState:
    if len(shards.shards) != cfg.total_clients:
        raise ConfigurationError(
            f"{len(shards.shards)} shards for {cfg.total_clients} clients"
        )
    model = init_model(arch, input_shape, _derived_seed(cfg.seed, _TAG_INIT))
    he_key = he_keygen(
        cfg.he_scale_bits, _derived_seed(cfg.seed, _TAG_HE), dim=model.dim
    )
    return FLState(0, model, shards, he_key, [], test_data, wm_eval)


def select_clients(cfg: FLConfig, round_idx: int) -> np.ndarray:
    """Uniform draw of n distinct clients for one round (seeded).

    With force_initiator the initiator occupies one slot every round and the
    remaining n-1 are drawn uniformly from the other clients.
    """
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((cfg.seed, _TAG_SELECT, round_idx)))
    )
    if not cfg.force_initiator:
        return rng.choice(cfg.total_clients, size=cfg.clients_per_round, replace=False)
    others = np.delete(np.arange(cfg.total_clients), cfg.initiator)
    picked = rng.choice(others, size=cfg.clients_per_round - 1, replace=False)
    return np.concatenate([[cfg.initiator], picked])


def _local_update(
    state: FLState, cfg: FLConfig, client: int, trigger: TriggerSet | None
) -> Gradient:
    shard = state.shards.shards[client]
    train_seed = _derived_seed(cfg.seed, _TAG_TRAIN, state.round_idx, client)
    if client == cfg.initiator and trigger is not None and len(trigger) > 0:
        return train_with_trigger(
            state.model,
            shard,
            trigger,
            lr=cfg.client_lr,
            local_epochs=cfg.local_epochs,
            batch_size=cfg.batch_size,
            trigger_per_batch=cfg.trigger_per_batch,
            seed=_derived_seed(cfg.seed, _TAG_MIX, state.round_idx, client),
        )
    return train_local(
        state.model, shard, cfg.client_lr, cfg.local_epochs, cfg.batch_size, train_seed
    )


def run_round(state: FLState, cfg: FLConfig, trigger: TriggerSet | None = None) -> FLState:
    """One federated round; returns the advanced state (input untouched)."""
    start = time.perf_counter()
    selected = select_clients(cfg, state.round_idx)
    updates: list[Gradient] = []
    weights: list[int] = []
    contributors: list[int] = []
    for client in selected:
        client = int(client)
        if len(state.shards.shards[client]) == 0:
            continue  # no local data this round; contributes nothing
        updates.append(_local_update(state, cfg, client, trigger))
        weights.append(state.shards.counts[client])
        contributors.append(client)
    if not updates:
        raise ConfigurationError(
            f"round {state.round_idx}: every selected client has an empty shard"
        )

    lam = cfg.resolved_scaling
    if cfg.use_he:
        cts = [
            secure_transmit(g, client == cfg.initiator, lam, state.he_key)
            for g, client in zip(updates, contributors)
        ]
        agg_ct = server.aggregate_round(cts, weights)
        global_grad = decrypt(state.he_key, agg_ct)
    else:
        total = float(sum(weights))
        acc = np.zeros(state.model.dim, dtype=np.float64)
        for g, client, q in zip(updates, contributors, weights):
            scale = lam if client == cfg.initiator else 1.0
            acc += (q / total) * scale * g.values.astype(np.float64)
        global_grad = Gradient(acc)

    model = apply_global(state.model, global_grad, cfg.server_lr)
    wall_ms = (time.perf_counter() - start) * 1000.0
    metrics = RoundMetrics(
        round=state.round_idx,
        test_acc=evaluate(model, state.test_data) if state.test_data is not None else None,
        wm_acc=evaluate(model, state.wm_eval) if state.wm_eval is not None else None,
        selected=tuple(int(i) for i in selected),
        wall_ms=wall_ms,
    )
    return replace(
        state,
        round_idx=state.round_idx + 1,
        model=model,
        history=state.history + [metrics],
    )


def run_rounds(
    state: FLState,
    cfg: FLConfig,
    trigger: TriggerSet | None = None,
    stream=None,
) -> FLState:
    """Run cfg.rounds rounds, optionally streaming metric rows as CSV."""
    import csv

    writer = None
    if stream is not None:
        writer = csv.writer(stream)
        writer.writerow(ROUND_CSV_HEADER)
    for _ in range(cfg.rounds):
        state = run_round(state, cfg, trigger)
        if writer is not None:
            writer.writerow(state.history[-1].csv_row())
    return state
