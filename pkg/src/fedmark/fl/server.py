"""The aggregation server role.

The server never holds key material: it accepts ciphertexts and weights and
returns the aggregated ciphertext. Nothing in this module (or in the
aggregation path it calls) can decrypt; tests assert this structurally.
"""

from fedmark.he.aggregate import secure_aggregate
from fedmark.he.scheme import Ciphertext


def aggregate_round(ciphertexts: list[Ciphertext], weights) -> Ciphertext:
    """FedAvg over encrypted client updates, weighted by sample counts."""
    for ct in ciphertexts:
        if not isinstance(ct, Ciphertext):
            raise TypeError(
                f"server only operates on ciphertexts, got {type(ct).__name__}"
            )
    return secure_aggregate(ciphertexts, weights)
