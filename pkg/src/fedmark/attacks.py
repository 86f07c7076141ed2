"""Watermark-removal and forgery attacks, plus the two-case robustness verdict.

All attacks are pure: they return a new model (or transformed dataset) and
leave their input untouched. An attack only counts as successful when it
strips the watermark while keeping the model useful; collapsing the model's
benign accuracy is a self-defeating attack.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from fedmark.data import Dataset
from fedmark.errors import ConfigurationError, InputError
from fedmark.nn.arch import ModelParams
from fedmark.nn.engine import train_local
from fedmark.trigger import key_gen, trig_cons
from fedmark.watermark import ModelAPI

CASE1_ROBUST = "case1_robust"  # watermark survived, model still useful
CASE2_ROBUST = "case2_robust"  # attack destroyed the model's own utility
BROKEN = "broken"  # watermark removed at negligible utility cost


@dataclass
class AttackOutcome:
    name: str
    params: dict
    wm_acc_before: float
    wm_acc_after: float
    test_acc_before: float
    test_acc_after: float
    model: ModelParams | None = None
    transformed_eval: Dataset | None = None

    def __post_init__(self):
        for a in (self.wm_acc_before, self.wm_acc_after,
                  self.test_acc_before, self.test_acc_after):
            if not 0.0 <= a <= 1.0:
                raise InputError(f"accuracy out of range: {a}")


def fine_tune(
    model: ModelParams, data: Dataset, lr: float, epochs: int,
    batch_size: int = 32, seed: int = 0,
) -> ModelParams:
    """Plain centralized SGD continuation on new data."""
    if epochs < 0:
        raise InputError(f"epochs must be >= 0, got {epochs}")
    if epochs == 0 or lr == 0:
        return model.copy()
    if len(data) == 0:
        raise InputError("cannot fine-tune on an empty dataset")
    delta = train_local(model, data, lr, epochs, batch_size, seed)
    return model.with_values(model.values - delta.values)


def prune(model: ModelParams, rate: float, per_layer: bool = False) -> ModelParams:
    """Zero the floor(rate*d) smallest-magnitude parameters (ties by index)."""
    if not 0.0 <= rate <= 1.0:
        raise InputError(f"pruning rate must be in [0, 1], got {rate}")
    values = model.values.copy()
    if per_layer:
        for sl in model.layer_slices():
            seg = values[sl]
            n_zero = int(rate * len(seg))
            if n_zero:
                order = np.argsort(np.abs(seg), kind="stable")
                seg[order[:n_zero]] = 0.0
    else:
        n_zero = int(rate * len(values))
        if n_zero:
            order = np.argsort(np.abs(values), kind="stable")
            values[order[:n_zero]] = 0.0
    return model.with_values(values)


def quantise(model: ModelParams, bits: int) -> ModelParams:
    """Per-layer uniform quantisation to 2^bits levels spanning [min, max]."""
    if not 2 <= bits <= 8:
        raise InputError(f"bits must be in [2, 8], got {bits}")
    levels = (1 << bits) - 1
    values = model.values.copy()
    for sl in model.layer_slices():
        seg = values[sl]
        lo, hi = float(seg.min()), float(seg.max())
        if hi == lo:
            continue  # degenerate interval: every value already sits on the grid
        grid = np.linspace(lo, hi, levels + 1, dtype=np.float64)
        grid[0], grid[-1] = lo, hi  # endpoints exact regardless of rounding
        snapped = np.rint((seg - lo) * (levels / (hi - lo))).astype(np.int64)
        values[sl] = grid[np.clip(snapped, 0, levels)].astype(values.dtype)
    return model.with_values(values)


@dataclass(frozen=True)
class PSTParams:
    """Input-preprocessing attack parameters; the defaults are the documented ones."""

    resize_scale: float = 0.9
    filter_stride: int = 2  # median-filter every s-th row/column; 0 disables
    rotate_deg: float = 10.0
    translate_frac: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    elastic_alpha: float = 8.0
    elastic_sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.resize_scale <= 0:
            raise ConfigurationError(f"resize scale must be positive, got {self.resize_scale}")
        if self.filter_stride < 0:
            raise ConfigurationError(f"filter stride must be >= 0, got {self.filter_stride}")
        if self.rotate_deg < 0 or self.translate_frac < 0 or self.elastic_alpha < 0:
            raise ConfigurationError("rotation/translation/elastic ranges must be >= 0")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigurationError(f"invalid affine scale range {self.scale_range}")
        if self.elastic_sigma <= 0:
            raise ConfigurationError(f"elastic sigma must be positive, got {self.elastic_sigma}")


def _is_identity(p: PSTParams) -> bool:
    return (
        p.resize_scale == 1.0
        and p.filter_stride == 0
        and p.rotate_deg == 0.0
        and p.translate_frac == 0.0
        and p.scale_range == (1.0, 1.0)
        and p.elastic_alpha == 0.0
    )


def _resize_roundtrip(img: np.ndarray, scale: float) -> np.ndarray:
    h, w, _ = img.shape
    sh, sw = max(1, round(h * scale)), max(1, round(w * scale))
    from fedmark.data import resize_to

    tiny = Dataset(img[None], np.zeros(1, dtype=np.int64), 1)
    down = resize_to(tiny, sh, sw)
    return resize_to(down, h, w).images[0]


def _median_rows_cols(img: np.ndarray, stride: int) -> np.ndarray:
    out = img.copy()
    h, w, c = out.shape
    for ch in range(c):
        for r in range(0, h, stride):
            out[r, :, ch] = ndimage.median_filter(out[r, :, ch], size=3, mode="nearest")
        for col in range(0, w, stride):
            out[:, col, ch] = ndimage.median_filter(out[:, col, ch], size=3, mode="nearest")
    return out


def _affine_elastic(img: np.ndarray, p: PSTParams, rng: np.random.Generator) -> np.ndarray:
    h, w, c = img.shape
    theta = np.deg2rad(rng.uniform(-p.rotate_deg, p.rotate_deg))
    s = rng.uniform(p.scale_range[0], p.scale_range[1])
    ty = rng.uniform(-p.translate_frac, p.translate_frac) * h
    tx = rng.uniform(-p.translate_frac, p.translate_frac) * w
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    # output->input map around the image centre (inverse transform)
    inv = np.array([[cos_t, sin_t], [-sin_t, cos_t]]) / s
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([rows, cols], axis=0).reshape(2, -1).astype(np.float64)
    src = inv @ (coords - centre[:, None] - np.array([[ty], [tx]])) + centre[:, None]

    if p.elastic_alpha > 0:
        dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), p.elastic_sigma) * p.elastic_alpha
        dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), p.elastic_sigma) * p.elastic_alpha
        src = src + np.stack([dy.ravel(), dx.ravel()], axis=0)

    out = np.empty_like(img)
    for ch in range(c):
        out[:, :, ch] = ndimage.map_coordinates(
            img[:, :, ch].astype(np.float64), src, order=1, mode="constant", cval=0.0
        ).reshape(h, w)
    return out


def pst_transform(dataset: Dataset, params: PSTParams = PSTParams()) -> Dataset:
    """Resize round-trip, strided median filtering, random affine, elastic distortion."""
    if _is_identity(params):
        return Dataset(dataset.images.copy(), dataset.labels.copy(), dataset.num_classes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
    out = np.empty_like(dataset.images)
    for i in range(len(dataset)):
        img = dataset.images[i]
        if params.resize_scale != 1.0:
            img = _resize_roundtrip(img, params.resize_scale)
        if params.filter_stride > 0:
            img = _median_rows_cols(img, params.filter_stride)
        img = _affine_elastic(img, params, rng)
        out[i] = np.clip(img, 0.0, 1.0)
    return Dataset(out, dataset.labels.copy(), dataset.num_classes)


def forge_random_trigger(
    api: ModelAPI,
    k: int,
    size: int,
    attempts: int,
    seed: int,
    mu: int,
    nu: int,
    phi: int,
    xi: int,
    channels: int = 1,
    exhaustive: bool = False,
    exclude_key=None,
) -> float:
    """Ambiguity attack: best accuracy a randomly forged trigger set achieves.

    Each attempt draws a fresh secret key and noise patterns, builds a
    candidate trigger set of the requested size, and measures the API's
    agreement with the forged labels. With exhaustive=True the attempts
    enumerate distinct keys in deterministic order (feasible only for tiny
    keyspaces).
    """
    if attempts < 1:
        raise InputError(f"attempts must be >= 1, got {attempts}")
    if size < k:
        raise InputError(f"trigger size {size} cannot cover {k} classes")
    t = -(-size // k)  # ceil
    best = 0.0
    for attempt, sk in enumerate(_candidate_keys(k, mu, nu, attempts, seed, exhaustive)):
        if exclude_key is not None and (sk.lk, sk.ck) == (exclude_key.lk, exclude_key.ck):
            continue
        forged = trig_cons(
            sk, t, phi, xi, pattern_seed=_attempt_seed(seed, attempt, 1), channels=channels
        )
        data = forged.dataset
        # pattern-major order spreads the candidate subset across all k labels
        order = np.array([l * t + p for p in range(t) for l in range(k)])[:size]
        preds = api.batch(data.images[order])
        acc = float((preds == data.labels[order]).mean())
        best = max(best, acc)
    return best


def _candidate_keys(k, mu, nu, attempts, seed, exhaustive):
    if exhaustive:
        import itertools

        from fedmark.trigger import SecretKey

        space = itertools.product(
            itertools.permutations(range(mu * nu), k), itertools.permutations(range(k))
        )
        for lk, ck in itertools.islice(space, attempts):
            yield SecretKey(tuple(lk), tuple(ck), mu, nu)
    else:
        for attempt in range(attempts):
            yield key_gen(k, mu, nu, seed=_attempt_seed(seed, attempt, 0))


def _attempt_seed(seed: int, attempt: int, tag: int) -> int:
    return int(np.random.SeedSequence((seed, attempt, tag)).generate_state(1)[0])


def robustness_verdict(
    outcome: AttackOutcome, gamma: float, drop_threshold: float = 0.10
) -> str:
    """Two-case robustness: verified-after-attack, self-defeating, or broken."""
    if not 0 < drop_threshold < 1:
        raise InputError(f"drop threshold must be in (0, 1), got {drop_threshold}")
    test_drop = outcome.test_acc_before - outcome.test_acc_after
    if outcome.wm_acc_after >= gamma and test_drop <= drop_threshold:
        return CASE1_ROBUST
    if test_drop > drop_threshold:
        return CASE2_ROBUST
    return BROKEN
