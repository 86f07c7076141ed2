"""Mock additive-homomorphic scheme with a fixed-point noise model.

Plaintexts are fixed-point encoded at 2^scale_bits and offset-masked with a
keyed pseudorandom stream; every ciphertext carries a ledger of (nonce,
coefficient) pairs recording which masks its payload contains. Addition and
plaintext-scalar multiplication are exact: payloads are arbitrary-precision
integers and scalars enter through float.as_integer_ratio(), so the only
approximation in the whole pipeline is the initial encoding step. A real
lattice scheme can replace this module behind the same interface.
"""

import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from fedmark.errors import (
    AuthenticationError,
    ConfigurationError,
    DimensionError,
    FormatError,
    InputError,
    SchemeMismatchError,
)
from fedmark.nn.arch import Gradient

SCHEME_ID = "fedmark-mock-add/1"
_SCHEME_CODE = 1

FMCT_MAGIC = b"FMCT"
FMCT_VERSION = 1

MIN_SCALE_BITS = 8
MAX_SCALE_BITS = 40


@dataclass(frozen=True)
class HEKeyPair:
    """Mock keypair: the mask stream seed is the secret, its hash is public."""

    scale_bits: int
    secret_material: bytes
    fingerprint: int
    dim: int | None = None


@dataclass(frozen=True)
class Ciphertext:
    dim: int
    scale_bits: int
    log2_denom: int  # plaintext = (payload - masks) / 2**log2_denom
    level: int  # number of scalar multiplications absorbed
    fingerprint: int
    payload: np.ndarray  # object dtype, python ints
    mask_ledger: tuple[tuple[int, int], ...]  # (nonce, integer coefficient)
    scheme_id: str = SCHEME_ID


def he_keygen(scale_bits: int, seed: int, dim: int | None = None) -> HEKeyPair:
    if not MIN_SCALE_BITS <= scale_bits <= MAX_SCALE_BITS:
        raise ConfigurationError(
            f"scale_bits must be in [{MIN_SCALE_BITS}, {MAX_SCALE_BITS}], got {scale_bits}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    material = rng.bytes(32)
    fingerprint = int.from_bytes(hashlib.sha256(material).digest()[:8], "little")
    return HEKeyPair(scale_bits, material, fingerprint, dim)


def _mask_stream(material: bytes, nonce: int, dim: int) -> np.ndarray:
    """Keyed pseudorandom mask vector for one nonce (object-dtype ints)."""
    digest = hashlib.sha256(material + nonce.to_bytes(8, "little")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.integers(0, 1 << 62, size=dim, dtype=np.int64).astype(object)


def encrypt(key: HEKeyPair, grad: Gradient) -> Ciphertext:
    values = np.asarray(grad.values, dtype=np.float64)
    if key.dim is not None and len(values) != key.dim:
        raise DimensionError(
            f"gradient has length {len(values)}, key is configured for {key.dim}"
        )
    if not np.all(np.isfinite(values)):
        raise InputError("cannot encrypt non-finite values")
    scale = float(1 << key.scale_bits)
    if np.any(np.abs(values) * scale >= 2**62):
        raise InputError("plaintext magnitude exceeds the fixed-point range")
    x_int = np.rint(values * scale).astype(np.int64).astype(object)
    nonce = int.from_bytes(
        hashlib.sha256(
            key.secret_material + x_int.astype(np.int64).tobytes() + len(values).to_bytes(4, "little")
        ).digest()[:8],
        "little",
    )
    payload = x_int + _mask_stream(key.secret_material, nonce, len(values))
    return Ciphertext(
        dim=len(values),
        scale_bits=key.scale_bits,
        log2_denom=key.scale_bits,
        level=0,
        fingerprint=key.fingerprint,
        payload=payload,
        mask_ledger=((nonce, 1),),
    )


def decrypt(key: HEKeyPair, ct: Ciphertext) -> Gradient:
    if ct.scheme_id != SCHEME_ID:
        raise SchemeMismatchError(f"unknown scheme {ct.scheme_id!r}")
    if ct.fingerprint != key.fingerprint:
        raise AuthenticationError(
            "ciphertext was not produced under this key (fingerprint mismatch)"
        )
    if key.dim is not None and ct.dim != key.dim:
        raise DimensionError(f"ciphertext dim {ct.dim} != key dim {key.dim}")
    acc = ct.payload.copy()
    for nonce, coeff in ct.mask_ledger:
        if coeff:
            acc -= coeff * _mask_stream(key.secret_material, nonce, ct.dim)
    shift = -ct.log2_denom
    values = np.fromiter(
        (math.ldexp(float(v), shift) for v in acc), dtype=np.float64, count=ct.dim
    )
    return Gradient(values)


def _check_compatible(a: Ciphertext, b: Ciphertext) -> None:
    if a.scheme_id != b.scheme_id or a.scale_bits != b.scale_bits:
        raise SchemeMismatchError(
            f"incompatible ciphertexts: {a.scheme_id}@{a.scale_bits} vs "
            f"{b.scheme_id}@{b.scale_bits}"
        )
    if a.fingerprint != b.fingerprint:
        raise SchemeMismatchError("ciphertexts were produced under different keys")
    if a.dim != b.dim:
        raise DimensionError(f"ciphertext dims differ: {a.dim} vs {b.dim}")


def ct_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    _check_compatible(a, b)
    hi = max(a.log2_denom, b.log2_denom)
    pa, la = _lift(a, hi)
    pb, lb = _lift(b, hi)
    ledger: dict[int, int] = dict(la)
    for nonce, coeff in lb:
        ledger[nonce] = ledger.get(nonce, 0) + coeff
    return Ciphertext(
        dim=a.dim,
        scale_bits=a.scale_bits,
        log2_denom=hi,
        level=max(a.level, b.level),
        fingerprint=a.fingerprint,
        payload=pa + pb,
        mask_ledger=tuple(sorted(ledger.items())),
    )


def _lift(ct: Ciphertext, log2_denom: int):
    shift = log2_denom - ct.log2_denom
    if shift == 0:
        return ct.payload, ct.mask_ledger
    factor = 1 << shift
    return ct.payload * factor, tuple((n, c * factor) for n, c in ct.mask_ledger)


def ct_scale(a: Ciphertext, c: float) -> Ciphertext:
    c = float(c)
    if not math.isfinite(c):
        raise InputError(f"scalar must be finite, got {c}")
    num, den = c.as_integer_ratio()  # den is a power of two for finite floats
    return Ciphertext(
        dim=a.dim,
        scale_bits=a.scale_bits,
        log2_denom=a.log2_denom + (den.bit_length() - 1),
        level=a.level + 1,
        fingerprint=a.fingerprint,
        payload=a.payload * num,
        mask_ledger=tuple((n, co * num) for n, co in a.mask_ledger),
    )


def _int_width(values) -> int:
    bits = max((int(v).bit_length() for v in values), default=0)
    return max(1, (bits + 8) // 8)  # +1 sign bit, round up to bytes


def ct_to_bytes(ct: Ciphertext) -> bytes:
    """Serialise to the transport container (little-endian)."""
    if ct.scheme_id != SCHEME_ID:
        raise SchemeMismatchError(f"cannot serialise scheme {ct.scheme_id!r}")
    word = _int_width(ct.payload)
    parts = [
        FMCT_MAGIC,
        struct.pack(
            "<BBIBIHQHH",
            FMCT_VERSION,
            _SCHEME_CODE,
            ct.dim,
            ct.scale_bits,
            ct.log2_denom,
            ct.level,
            ct.fingerprint,
            len(ct.mask_ledger),
            word,
        ),
    ]
    for nonce, coeff in ct.mask_ledger:
        cbytes = int(coeff).to_bytes(_int_width([coeff]), "little", signed=True)
        parts.append(struct.pack("<QH", nonce, len(cbytes)))
        parts.append(cbytes)
    for v in ct.payload:
        parts.append(int(v).to_bytes(word, "little", signed=True))
    return b"".join(parts)


def ct_from_bytes(raw: bytes) -> Ciphertext:
    if raw[:4] != FMCT_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {FMCT_MAGIC!r}", offset=0)
    head = struct.calcsize("<BBIBIHQHH")
    try:
        version, scheme, dim, scale_bits, log2_denom, level, fingerprint, n_ledger, word = (
            struct.unpack_from("<BBIBIHQHH", raw, 4)
        )
    except struct.error:
        raise FormatError("truncated header", offset=len(raw)) from None
    if version != FMCT_VERSION or scheme != _SCHEME_CODE:
        raise FormatError(f"unsupported version/scheme {version}/{scheme}", offset=4)
    offset = 4 + head
    ledger = []
    for _ in range(n_ledger):
        if offset + 10 > len(raw):
            raise FormatError("truncated ledger", offset=len(raw))
        nonce, clen = struct.unpack_from("<QH", raw, offset)
        offset += 10
        if offset + clen > len(raw):
            raise FormatError("truncated ledger coefficient", offset=len(raw))
        coeff = int.from_bytes(raw[offset : offset + clen], "little", signed=True)
        offset += clen
        ledger.append((nonce, coeff))
    need = offset + dim * word
    if len(raw) < need:
        raise FormatError(f"payload needs {need} bytes, file has {len(raw)}", offset=len(raw))
    payload = np.empty(dim, dtype=object)
    for i in range(dim):
        payload[i] = int.from_bytes(raw[offset : offset + word], "little", signed=True)
        offset += word
    return Ciphertext(
        dim=dim,
        scale_bits=scale_bits,
        log2_denom=log2_denom,
        level=level,
        fingerprint=fingerprint,
        payload=payload,
        mask_ledger=tuple(ledger),
    )
