"""Weighted ciphertext aggregation.

This module is the only aggregation code path and deliberately imports no
decryption capability: everything here is expressible with ciphertext
addition and plaintext-scalar multiplication alone.
"""

from fedmark.errors import DimensionError, InputError
from fedmark.he.scheme import Ciphertext, ct_add, ct_scale


def secure_aggregate(cts: list[Ciphertext], weights) -> Ciphertext:
    """Weight-averaged ciphertext: sum_i (q_i / sum(q)) * ct_i."""
    if not cts:
        raise InputError("nothing to aggregate")
    weights = [float(w) for w in weights]
    if len(weights) != len(cts):
        raise DimensionError(f"{len(cts)} ciphertexts but {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise InputError("weights must be non-negative")
    total = sum(weights)
    if total <= 0:
        raise InputError("total weight must be positive")
    acc: Ciphertext | None = None
    for ct, w in zip(cts, weights):
        term = ct_scale(ct, w / total)
        acc = term if acc is None else ct_add(acc, term)
    assert acc is not None
    return acc
