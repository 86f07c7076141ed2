"""Watermark embedding policy and the black-box verification protocol.

Embedding: the initiator trains with trigger samples mixed into every batch.
Verification: an arbiter holding only a trigger subset queries the suspect
model's API and compares the accuracy against a threshold chosen so that a
random k-class classifier passes with probability at most epsilon (exact
binomial tail, no approximations).
"""

import base64
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from fedmark.data import Dataset
from fedmark.errors import (
    InputError,
    ThresholdImpossible,
    VerificationTransportError,
)
from fedmark.nn.arch import Gradient, ModelParams
from fedmark.nn.engine import epoch_rng, predict, train_batches
from fedmark.trigger import TriggerSet

DEFAULT_EPSILON = 2.0**-32


def default_trigger_per_batch(batch_size: int) -> int:
    return max(1, batch_size // 4)


def mix_batches(
    shard: Dataset,
    trigger: TriggerSet | None,
    batch_size: int,
    trigger_per_batch: int | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
):
    """One epoch of batches with trigger samples injected into every batch.

    Each batch holds exactly r trigger samples taken round-robin from a
    seeded shuffle of the trigger set, topped up with the next chunk of the
    shuffled shard. An empty trigger set degenerates to plain shuffled
    batching on the same stream.
    """
    if len(shard) == 0:
        raise InputError("cannot batch an empty shard")
    if rng is None:
        rng = epoch_rng(seed, 0)
    n_trig = len(trigger) if trigger is not None else 0
    r = 0
    if n_trig:
        r = (
            default_trigger_per_batch(batch_size)
            if trigger_per_batch is None
            else trigger_per_batch
        )
        if not 0 < r < batch_size:
            raise InputError(
                f"trigger injection count must be in (0, batch_size), got {r}"
            )
    shard_perm = rng.permutation(len(shard))
    if n_trig:
        trig_perm = rng.permutation(n_trig)
        trig_images = trigger.dataset.images
        trig_labels = trigger.dataset.labels
    chunk = batch_size - r
    cursor = 0
    for start in range(0, len(shard_perm), chunk):
        take = shard_perm[start : start + chunk]
        images = shard.images[take]
        labels = shard.labels[take]
        if r:
            picks = trig_perm[(cursor + np.arange(r)) % n_trig]
            cursor += r
            images = np.concatenate([images, trig_images[picks]])
            labels = np.concatenate([labels, trig_labels[picks]])
        yield images, labels


def train_with_trigger(
    model: ModelParams,
    shard: Dataset,
    trigger: TriggerSet,
    lr: float,
    local_epochs: int,
    batch_size: int,
    trigger_per_batch: int | None,
    seed: int,
) -> Gradient:
    """Initiator-side local training over shard plus injected trigger batches."""
    if local_epochs < 1:
        raise InputError(f"local_epochs must be >= 1, got {local_epochs}")
    values = model.values.copy()
    work = model.with_values(values)
    for epoch in range(local_epochs):
        batches = mix_batches(
            shard,
            trigger,
            batch_size,
            trigger_per_batch,
            rng=epoch_rng(seed, epoch),
        )
        values[:] = train_batches(work, batches, lr)
    return Gradient(model.values - values)


def binomial_tail(k: int, n: int, d_star: int) -> Fraction:
    """Exact P[X >= d_star] for X ~ Binomial(n, 1/k)."""
    if d_star > n:
        return Fraction(0)
    num = sum(math.comb(n, d) * (k - 1) ** (n - d) for d in range(max(d_star, 0), n + 1))
    return Fraction(num, k**n)


def compute_threshold(k: int, subset_size: int, epsilon: float) -> float:
    """Smallest gamma = d/subset_size whose exact false-positive tail is <= epsilon.

    Raises ThresholdImpossible when even requiring a perfect score cannot
    push the random-guess pass probability below epsilon.
    """
    if k < 2:
        raise InputError(f"need k >= 2 classes, got {k}")
    if subset_size < 1:
        raise InputError(f"subset size must be >= 1, got {subset_size}")
    if not 0 < epsilon < 1:
        raise InputError(f"epsilon must be in (0, 1), got {epsilon}")
    eps_num, eps_den = Fraction(epsilon).as_integer_ratio()
    bound = eps_num * k**subset_size  # compare suffix * eps_den <= bound
    suffix = 0
    best = None
    for d in range(subset_size, 0, -1):
        suffix += math.comb(subset_size, d) * (k - 1) ** (subset_size - d)
        if suffix * eps_den <= bound:
            best = d
        else:
            break
    if best is None:
        raise ThresholdImpossible(
            f"no threshold reaches epsilon={epsilon} with {subset_size} samples "
            f"(tail at a perfect score is {float(binomial_tail(k, subset_size, subset_size)):.3g})"
        )
    return best / subset_size


def default_subset_size(k: int, epsilon: float = DEFAULT_EPSILON) -> int:
    """Smallest verification subset that meets epsilon while tolerating one miss.

    Small subsets preserve trigger data for future disputes and keep the
    pass threshold near a perfect score, which is also what caps the best
    accuracy a forged key can reach. The returned size is the first n whose
    threshold is feasible with d* < n.
    """
    n = 1
    while True:
        try:
            gamma = compute_threshold(k, n, epsilon)
        except ThresholdImpossible:
            n += 1
            continue
        if gamma < 1.0:
            return n
        n += 1


class ModelAPI:
    """Opaque classification oracle: image in, label out. No parameter access."""

    def __init__(self, classify, classify_batch=None):
        self._classify = classify
        self._classify_batch = classify_batch

    def __call__(self, image: np.ndarray) -> int:
        return int(self._classify(image))

    def batch(self, images: np.ndarray) -> np.ndarray:
        if self._classify_batch is not None:
            return np.asarray(self._classify_batch(images), dtype=np.int64)
        return np.array([self(img) for img in images], dtype=np.int64)

    @classmethod
    def from_model(cls, model: ModelParams) -> "ModelAPI":
        def classify(image: np.ndarray) -> int:
            return int(predict(model, image[None, ...])[0])

        def classify_batch(images: np.ndarray) -> np.ndarray:
            return predict(model, images)

        return cls(classify, classify_batch)


@dataclass
class VerificationReport:
    accuracy: float
    gamma: float
    subset_size: int
    verdict: str  # "verified" | "unverified"
    epsilon: float  # exact false-positive bound achieved at this gamma

    @property
    def verified(self) -> bool:
        return self.verdict == "verified"

    def to_json(self) -> str:
        return json.dumps(
            {
                "accuracy": self.accuracy,
                "gamma": self.gamma,
                "n_s": self.subset_size,
                "verdict": self.verdict,
                "epsilon": self.epsilon,
            }
        )


def verify(api: ModelAPI, subset: TriggerSet, gamma: float) -> VerificationReport:
    """Query the API once per subset sample and decide ownership."""
    n = len(subset)
    if n == 0:
        raise InputError("verification subset is empty")
    if not 0 < gamma <= 1:
        raise InputError(f"gamma must be in (0, 1], got {gamma}")
    data = subset.dataset
    correct = 0
    for i in range(n):
        try:
            label = api(data.images[i])
        except Exception as exc:
            raise VerificationTransportError(
                f"model API failed on query {i + 1}/{n}: {exc}"
            ) from exc
        correct += int(label == int(data.labels[i]))
    accuracy = correct / n
    achieved = float(binomial_tail(data.num_classes, n, math.ceil(gamma * n)))
    verdict = "verified" if accuracy >= gamma else "unverified"
    return VerificationReport(accuracy, gamma, n, verdict, achieved)


def balanced_subset(trigger: TriggerSet, subset_size: int, seed: int) -> TriggerSet:
    """Class-balanced sample of a trigger set (sizes rounded across classes)."""
    data = trigger.dataset
    k = data.num_classes
    if subset_size < 1 or subset_size > len(data):
        raise InputError(
            f"subset size must be in [1, {len(data)}], got {subset_size}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    base, extra = divmod(subset_size, k)
    order = rng.permutation(k)
    picks = []
    for rank, cls in enumerate(order):
        want = base + (1 if rank < extra else 0)
        cls_idx = np.flatnonzero(data.labels == cls)
        if want > len(cls_idx):
            raise InputError(
                f"class {cls} has only {len(cls_idx)} trigger samples, need {want}"
            )
        picks.append(rng.choice(cls_idx, size=want, replace=False))
    chosen = np.sort(np.concatenate(picks))
    return TriggerSet(data.subset(chosen), trigger.t, trigger.pattern_seed)


# Line-delimited request/response adapter: one base64-encoded float32 image
# per request line, one ASCII integer label per response line.


def encode_image_request(image: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(image, dtype="<f4").tobytes()).decode()


def decode_image_request(line: str, image_shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = image_shape
    raw = base64.b64decode(line.strip(), validate=True)
    if len(raw) != 4 * h * w * c:
        raise InputError(
            f"request holds {len(raw)} bytes, expected {4 * h * w * c} for {image_shape}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float32)


def serve_stream(api: ModelAPI, image_shape: tuple[int, int, int], rfile, wfile) -> None:
    """Answer request lines until EOF. Errors are reported in-band."""
    for line in rfile:
        if not line.strip():
            continue
        try:
            image = decode_image_request(line, image_shape)
            wfile.write(f"{api(image)}\n")
        except Exception as exc:  # report and keep serving
            wfile.write(f"error: {exc}\n")
        wfile.flush()


class RemoteModelAPI(ModelAPI):
    """Client side of the line protocol; usable anywhere a ModelAPI is."""

    def __init__(self, rfile, wfile):
        self._rfile = rfile
        self._wfile = wfile
        super().__init__(self._remote_classify)

    def _remote_classify(self, image: np.ndarray) -> int:
        self._wfile.write(encode_image_request(image) + "\n")
        self._wfile.flush()
        line = self._rfile.readline()
        if not line:
            raise VerificationTransportError("model endpoint closed the stream")
        line = line.strip()
        if line.startswith("error:"):
            raise VerificationTransportError(line)
        try:
            return int(line)
        except ValueError:
            raise VerificationTransportError(f"malformed response {line!r}") from None
