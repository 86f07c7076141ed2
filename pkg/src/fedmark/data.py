"""Datasets: IDX loading, synthesis, bilinear resizing, federated partitioning.

Images are float32 arrays of shape (n, height, width, channels) with values
in [0, 1]; labels are int64. Partitioning produces disjoint client shards
whose union is the input dataset.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from fedmark.errors import ConfigurationError, FormatError, InputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FMDS_MAGIC = b"FMDS"
FMDS_VERSION = 1


@dataclass
class Dataset:
    """Labelled image set. images: (n, h, w, c) float32 in [0,1]; labels: (n,) int64."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise InputError(f"images must be (n, h, w, c), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InputError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and int(self.labels.max()) >= self.num_classes:
            raise InputError(
                f"label {int(self.labels.max())} out of range for {self.num_classes} classes"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices], self.num_classes)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.image_shape != self.image_shape:
            raise InputError("cannot concatenate datasets with different image shapes")
        return Dataset(
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            max(self.num_classes, other.num_classes),
        )


@dataclass(frozen=True)
class IID:
    pass


@dataclass(frozen=True)
class DirichletNonIID:
    alpha: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"dirichlet alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class PathologicalNonIID:
    labels_per_client: int = 2

    def __post_init__(self):
        if self.labels_per_client < 1:
            raise ConfigurationError(
                f"labels per client must be >= 1, got {self.labels_per_client}"
            )


PartitionKind = IID | DirichletNonIID | PathologicalNonIID


@dataclass(frozen=True)
class PartitionSpec:
    kind: PartitionKind
    num_clients: int
    seed: int

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigurationError(f"need at least one client, got {self.num_clients}")


@dataclass
class ClientShards:
    shards: list[Dataset]
    counts: list[int]
    indices: list[np.ndarray] = field(default_factory=list)


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header", offset=offset)
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair (big-endian, pixel bytes scaled to [0,1])."""
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}",
            offset=0,
        )
    count = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    expected = 16 + count * rows * cols
    if len(raw) < expected:
        raise FormatError(
            f"{images_path}: file holds {len(raw)} bytes, header implies {expected}",
            offset=len(raw),
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = (pixels.reshape(count, rows, cols, 1).astype(np.float32)) / 255.0

    with open(labels_path, "rb") as f:
        raw_l = f.read()
    magic_l = _read_be32(raw_l, 0, labels_path)
    if magic_l != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{magic_l:08x}, expected 0x{IDX_LABELS_MAGIC:08x}",
            offset=0,
        )
    count_l = _read_be32(raw_l, 4, labels_path)
    if count_l != count:
        raise FormatError(
            f"{labels_path}: {count_l} labels but {count} images", offset=4
        )
    if len(raw_l) < 8 + count_l:
        raise FormatError(f"{labels_path}: truncated label data", offset=len(raw_l))
    labels = np.frombuffer(raw_l, dtype=np.uint8, count=count_l, offset=8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count_l else 0
    return Dataset(images, labels, num_classes)


def _axis_positions(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source gather indices and interpolation weights, endpoint-aligned."""
    if dst == 1 or src == 1:
        lo = np.zeros(dst, dtype=np.int64)
        return lo, lo.copy(), np.zeros(dst, dtype=np.float32)
    pos = np.arange(dst, dtype=np.float64) * (src - 1) / (dst - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src - 2)
    frac = (pos - lo).astype(np.float32)
    return lo, lo + 1, frac


def resize_to(dataset: Dataset, height: int, width: int) -> Dataset:
    """Bilinear resize of every image; grid endpoints align with image corners."""
    if height < 1 or width < 1:
        raise InputError(f"target size must be positive, got {height}x{width}")
    n, h, w, c = dataset.images.shape
    if (h, w) == (height, width):
        return Dataset(dataset.images.copy(), dataset.labels.copy(), dataset.num_classes)
    r_lo, r_hi, r_f = _axis_positions(h, height)
    c_lo, c_hi, c_f = _axis_positions(w, width)
    rows_lo = dataset.images[:, r_lo]
    rows_hi = dataset.images[:, r_hi]
    rf = r_f[None, :, None, None]
    rows = rows_lo + rf * (rows_hi - rows_lo)
    cols_lo = rows[:, :, c_lo]
    cols_hi = rows[:, :, c_hi]
    cf = c_f[None, None, :, None]
    out = cols_lo + cf * (cols_hi - cols_lo)
    return Dataset(out.astype(np.float32), dataset.labels.copy(), dataset.num_classes)


def synth_dataset(
    k: int,
    per_class: int,
    height: int,
    width: int,
    seed: int,
    channels: int = 1,
    split: int = 0,
) -> Dataset:
    """Per-class random prototypes plus Gaussian pixel noise, clipped to [0, 1].

    The prototypes depend only on the seed; the noise stream also depends on
    the split index, so train/test splits share class structure without
    sharing samples.
    """
    if k < 2:
        raise InputError(f"need at least 2 classes, got {k}")
    if per_class < 1:
        raise InputError(f"per_class must be >= 1, got {per_class}")
    proto_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0))))
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, 1, split)))
    )
    prototypes = proto_rng.random((k, height, width, channels), dtype=np.float32)
    images = np.repeat(prototypes, per_class, axis=0)
    images = images + noise_rng.normal(0.0, 0.1, size=images.shape).astype(np.float32)
    np.clip(images, 0.0, 1.0, out=images)
    labels = np.repeat(np.arange(k, dtype=np.int64), per_class)
    return Dataset(images, labels, k)


def _partition_iid(n: int, spec: PartitionSpec, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, spec.num_clients)]


def _partition_dirichlet(
    labels: np.ndarray, spec: PartitionSpec, rng: np.random.Generator, alpha: float
) -> list[np.ndarray]:
    n_clients = spec.num_clients
    per_client: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for cls in np.unique(labels):
        cls_idx = rng.permutation(np.flatnonzero(labels == cls))
        props = rng.dirichlet(np.full(n_clients, alpha))
        counts = np.floor(props * len(cls_idx)).astype(int)
        remainder = len(cls_idx) - counts.sum()
        if remainder:
            # leftover samples go to the clients with the largest unmet share
            order = np.argsort(-(props * len(cls_idx) - counts), kind="stable")
            counts[order[:remainder]] += 1
        stops = np.cumsum(counts)
        starts = stops - counts
        for i in range(n_clients):
            per_client[i].append(cls_idx[starts[i] : stops[i]])
    return [np.sort(np.concatenate(parts)) for parts in per_client]


def _partition_pathological(
    labels: np.ndarray, spec: PartitionSpec, rng: np.random.Generator, t: int
) -> list[np.ndarray]:
    n_clients = spec.num_clients
    n_parts = t * n_clients
    classes = np.unique(labels)
    if t > len(classes):
        raise ConfigurationError(
            f"labels-per-client t={t} exceeds the {len(classes)} available classes"
        )
    # Allocate the t*N parts across classes proportionally to class size so
    # every part is single-label, then split each class contiguously.
    sizes = np.array([int((labels == c).sum()) for c in classes], dtype=np.float64)
    quota = sizes / sizes.sum() * n_parts
    counts = np.maximum(np.floor(quota).astype(int), 1)
    while counts.sum() < n_parts:
        counts[np.argmax(quota - counts)] += 1
    while counts.sum() > n_parts:
        reducible = counts > 1
        frac = np.where(reducible, quota - counts, np.inf)
        counts[np.argmin(frac)] -= 1
    parts: list[np.ndarray] = []
    for cls, n_cls_parts in zip(classes, counts):
        cls_idx = np.flatnonzero(labels == cls)  # label-sorted order by construction
        parts.extend(np.array_split(cls_idx, n_cls_parts))
    order = rng.permutation(n_parts)
    out = []
    for i in range(n_clients):
        chosen = [parts[j] for j in order[i * t : (i + 1) * t]]
        out.append(np.sort(np.concatenate(chosen)))
    return out


def partition(dataset: Dataset, spec: PartitionSpec) -> ClientShards:
    """Split a dataset into disjoint client shards per the partition spec."""
    if len(dataset) < spec.num_clients:
        raise InputError(
            f"{len(dataset)} samples cannot cover {spec.num_clients} clients"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    if isinstance(spec.kind, IID):
        idx = _partition_iid(len(dataset), spec, rng)
    elif isinstance(spec.kind, DirichletNonIID):
        idx = _partition_dirichlet(dataset.labels, spec, rng, spec.kind.alpha)
    elif isinstance(spec.kind, PathologicalNonIID):
        idx = _partition_pathological(dataset.labels, spec, rng, spec.kind.labels_per_client)
    else:
        raise ConfigurationError(f"unknown partition kind: {spec.kind!r}")
    shards = [dataset.subset(i) for i in idx]
    return ClientShards(shards, [len(i) for i in idx], idx)


def save_fmds(dataset: Dataset, path: str) -> None:
    """Write the dataset to the binary container (little-endian)."""
    n, h, w, c = dataset.images.shape
    header = FMDS_MAGIC + struct.pack(
        "<BHHHHI", FMDS_VERSION, dataset.num_classes, h, w, c, n
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(dataset.images.astype("<f4").tobytes())
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_fmds(path: str) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != FMDS_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {FMDS_MAGIC!r}", offset=0)
    try:
        version, k, h, w, c, n = struct.unpack_from("<BHHHHI", raw, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header", offset=len(raw)) from None
    if version != FMDS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    body = 4 + struct.calcsize("<BHHHHI")
    n_pix = n * h * w * c
    if len(raw) < body + 4 * n_pix + n:
        raise FormatError(f"{path}: truncated payload", offset=len(raw))
    images = np.frombuffer(raw, dtype="<f4", count=n_pix, offset=body).reshape(n, h, w, c)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=body + 4 * n_pix)
    return Dataset(images.astype(np.float32), labels.astype(np.int64), k)
