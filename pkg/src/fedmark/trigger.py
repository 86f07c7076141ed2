"""Secret keys and trigger-set construction.

A secret key is a pair of permutations: the location key picks which grid
cells get filled with noise, the classification key picks the label each
fill level receives. The class-l trigger image fills the first l located
cells, so the non-zero pixel sets nest across classes.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from fedmark.data import Dataset
from fedmark.errors import ConfigurationError, FormatError, InputError

FMSK_MAGIC = b"FMSK"
FMSK_VERSION = 1

PATTERN_MEAN = 0.5
PATTERN_STD = 0.25


@dataclass(frozen=True)
class SecretKey:
    lk: tuple[int, ...]  # k distinct cell indices in [0, mu*nu)
    ck: tuple[int, ...]  # permutation of {0..k-1}
    mu: int
    nu: int

    def __post_init__(self):
        k = len(self.lk)
        cells = self.mu * self.nu
        if len(set(self.lk)) != k or any(not 0 <= v < cells for v in self.lk):
            raise ConfigurationError("location key entries must be distinct and < mu*nu")
        if sorted(self.ck) != list(range(k)):
            raise ConfigurationError("classification key must be a permutation of 0..k-1")

    @property
    def k(self) -> int:
        return len(self.lk)


@dataclass
class TriggerSet:
    dataset: Dataset
    t: int  # patterns per class
    pattern_seed: int

    def __len__(self) -> int:
        return len(self.dataset)


def validate_patch_params(k: int, mu: int, nu: int, phi: int, xi: int) -> str | None:
    """None when k <= mu*nu <= phi*xi holds; otherwise the failed inequality."""
    if min(k, mu, nu, phi, xi) < 1:
        return f"all parameters must be positive: k={k}, mu={mu}, nu={nu}, phi={phi}, xi={xi}"
    if k > mu * nu:
        return f"k <= mu*nu violated: {k} > {mu * nu}"
    if mu * nu > phi * xi:
        return f"mu*nu <= phi*xi violated: {mu * nu} > {phi * xi}"
    return None


def check_patch_params(k: int, mu: int, nu: int, phi: int, xi: int) -> None:
    violation = validate_patch_params(k, mu, nu, phi, xi)
    if violation is not None:
        raise ConfigurationError(violation)


def key_gen(k: int, mu: int, nu: int, seed: int) -> SecretKey:
    """Location key = first k cells of a seeded shuffle; classification key = seeded shuffle."""
    if k < 1:
        raise ConfigurationError(f"need at least one class, got k={k}")
    if k > mu * nu:
        raise ConfigurationError(f"k <= mu*nu violated: {k} > {mu * nu}")
    if mu * nu > 0xFFFF:
        raise ConfigurationError(f"mu*nu={mu * nu} exceeds the serialisable cell range")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    lk = tuple(int(v) for v in rng.permutation(mu * nu)[:k])
    ck = tuple(int(v) for v in rng.permutation(k))
    return SecretKey(lk, ck, mu, nu)


def trig_cons(
    sk: SecretKey, t: int, phi: int, xi: int, pattern_seed: int, channels: int = 1
) -> TriggerSet:
    """Build the k*t trigger images for a key.

    The image grid is mu x nu cells of floor(phi/mu) x floor(xi/nu) pixels;
    residual pixels (when the grid does not divide the image) stay zero. The
    same t noise patterns fill every located cell, replicated across channels.
    """
    if t < 1:
        raise ConfigurationError(f"need at least one pattern per class, got t={t}")
    check_patch_params(sk.k, sk.mu, sk.nu, phi, xi)
    cell_h, cell_w = phi // sk.mu, xi // sk.nu
    if cell_h < 1 or cell_w < 1:
        raise ConfigurationError(
            f"grid {sk.mu}x{sk.nu} leaves empty cells on a {phi}x{xi} image"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(pattern_seed)))
    patterns = rng.normal(PATTERN_MEAN, PATTERN_STD, size=(t, cell_h, cell_w))
    patterns = np.clip(patterns, 0.0, 1.0).astype(np.float32)

    k = sk.k
    images = np.zeros((k * t, phi, xi, channels), dtype=np.float32)
    labels = np.empty(k * t, dtype=np.int64)
    for level in range(1, k + 1):
        base = (level - 1) * t
        labels[base : base + t] = sk.ck[level - 1]
        for cell in sk.lk[:level]:
            row, col = divmod(cell, sk.nu)
            r0, c0 = row * cell_h, col * cell_w
            images[base : base + t, r0 : r0 + cell_h, c0 : c0 + cell_w, :] = patterns[
                :, :, :, None
            ]
    return TriggerSet(Dataset(images, labels, k), t, pattern_seed)


def keyspace_size(k: int, mu: int, nu: int) -> int:
    """Exact number of distinct secret keys: P(mu*nu, k) * k!."""
    cells = mu * nu
    if k < 1:
        raise InputError(f"need at least one class, got k={k}")
    if k > cells:
        raise InputError(f"k={k} exceeds mu*nu={cells}")
    return math.perm(cells, k) * math.factorial(k)


def forge_probability(k: int, trigger_size: int) -> float:
    """Chance a random trigger set of the given size verifies against a clean model."""
    if k < 1 or trigger_size < 1:
        raise InputError("k and trigger_size must be >= 1")
    return 1.0 / (trigger_size * k**k)


def save_key(sk: SecretKey, pattern_seed: int, path: str) -> None:
    """Write the key container (little-endian): header, lk, ck, pattern seed."""
    k = sk.k
    with open(path, "wb") as f:
        f.write(FMSK_MAGIC)
        f.write(struct.pack("<BHHH", FMSK_VERSION, k, sk.mu, sk.nu))
        f.write(struct.pack(f"<{k}H", *sk.lk))
        f.write(struct.pack(f"<{k}H", *sk.ck))
        f.write(struct.pack("<Q", pattern_seed))


def load_key(path: str) -> tuple[SecretKey, int]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != FMSK_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FMSK_MAGIC!r}", offset=0)
    try:
        version, k, mu, nu = struct.unpack_from("<BHHH", raw, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header", offset=len(raw)) from None
    if version != FMSK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    offset = 4 + struct.calcsize("<BHHH")
    need = offset + 2 * k + 2 * k + 8
    if len(raw) < need:
        raise FormatError(f"{path}: truncated key data", offset=len(raw))
    lk = struct.unpack_from(f"<{k}H", raw, offset)
    ck = struct.unpack_from(f"<{k}H", raw, offset + 2 * k)
    (pattern_seed,) = struct.unpack_from("<Q", raw, offset + 4 * k)
    return SecretKey(tuple(lk), tuple(ck), mu, nu), pattern_seed
