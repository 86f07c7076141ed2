"""Homomorphic-encryption boundary: mock scheme plus ciphertext aggregation."""

from fedmark.he.aggregate import secure_aggregate
from fedmark.he.scheme import (
    Ciphertext,
    HEKeyPair,
    MAX_SCALE_BITS,
    MIN_SCALE_BITS,
    SCHEME_ID,
    ct_add,
    ct_from_bytes,
    ct_scale,
    ct_to_bytes,
    decrypt,
    encrypt,
    he_keygen,
)

__all__ = [
    "Ciphertext",
    "HEKeyPair",
    "MAX_SCALE_BITS",
    "MIN_SCALE_BITS",
    "SCHEME_ID",
    "ct_add",
    "ct_from_bytes",
    "ct_scale",
    "ct_to_bytes",
    "decrypt",
    "encrypt",
    "he_keygen",
    "secure_aggregate",
]
