"""Forward pass, backpropagation, SGD local training, and evaluation.

Convolutions run as im2col + GEMM; the im2col/col2im/pool loops come from
the selected kernel backend. All functions are pure with respect to their
inputs; training returns the accumulated parameter delta instead of
mutating the model.
"""

import numpy as np

from fedmark.errors import ConfigurationError, DimensionError, InputError
from fedmark.nn import kernels
from fedmark.nn.arch import (
    Arch,
    Conv,
    Gradient,
    MaxPool,
    ModelParams,
    split_params,
    validate_arch,
)


def init_model(
    arch: Arch, input_shape: tuple[int, int, int], seed: int, dtype=np.float32
) -> ModelParams:
    """He-initialised model: weights ~ N(0, 2/fan_in), biases zero."""
    plans = validate_arch(arch, input_shape)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    values = np.zeros(plans[-1].offset + plans[-1].n_params, dtype=dtype)
    for plan in plans:
        if plan.n_params == 0:
            continue
        layer = plan.layer
        if isinstance(layer, Conv):
            fan_in = plan.in_shape[0] * layer.kernel * layer.kernel
            n_w = layer.out_channels * fan_in
        else:
            fan_in = int(np.prod(plan.in_shape))
            n_w = fan_in * layer.out_features
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=n_w)
        values[plan.offset : plan.offset + n_w] = w.astype(dtype)
    return ModelParams(values, tuple(arch), tuple(input_shape), plans)


def _check_images(model: ModelParams, images: np.ndarray) -> np.ndarray:
    if images.ndim != 4 or images.shape[1:] != tuple(model.input_shape):
        raise DimensionError(
            f"expected image batch of shape (n, {model.input_shape[0]}, "
            f"{model.input_shape[1]}, {model.input_shape[2]}), got {images.shape}"
        )
    # (N, H, W, C) -> (N, C, H, W) in the model dtype
    x = images.astype(model.values.dtype, copy=False).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x)


def _forward(model: ModelParams, images: np.ndarray, keep_caches: bool):
    x = _check_images(model, images)
    caches: list[tuple] = []
    views = {plan.offset: (w, b) for plan, w, b in split_params(model.values, model.plans)}
    n_layers = len(model.plans)
    for li, plan in enumerate(model.plans):
        layer = plan.layer
        if isinstance(layer, Conv):
            w, b = views[plan.offset]
            cols = kernels.im2col(x, layer.kernel, layer.stride)
            w2 = w.reshape(layer.out_channels, -1)
            out = cols @ w2.T + b
            oc, oh, ow = plan.out_shape
            out = out.reshape(x.shape[0], oh, ow, oc).transpose(0, 3, 1, 2)
            out = np.ascontiguousarray(out)
            mask = out > 0
            out *= mask
            if keep_caches:
                caches.append(("conv", x.shape, cols, mask))
            x = out
        elif isinstance(layer, MaxPool):
            out, idx = kernels.maxpool_forward(x, layer.window)
            if keep_caches:
                caches.append(("pool", x.shape, idx))
            x = out
        else:  # Dense
            w, b = views[plan.offset]
            flat_in = x.reshape(x.shape[0], -1)
            out = flat_in @ w + b
            is_last = li == n_layers - 1
            if is_last:
                mask = None
            else:
                mask = out > 0
                out = out * mask
            if keep_caches:
                caches.append(("dense", x.shape, flat_in, mask))
            x = out
    return x, caches


def forward(model: ModelParams, images: np.ndarray) -> np.ndarray:
    """Logits for a batch of images, shape (n, num_classes)."""
    logits, _ = _forward(model, images, keep_caches=False)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy, accumulated in float64."""
    shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(labels)), labels]))


def loss_and_grad(
    model: ModelParams, images: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the flat parameters."""
    logits, caches = _forward(model, images, keep_caches=True)
    n = logits.shape[0]
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    grad = np.zeros_like(model.values)
    d = dlogits.astype(model.values.dtype)
    views = {plan.offset: (w, b) for plan, w, b in split_params(model.values, model.plans)}
    gviews = {plan.offset: (w, b) for plan, w, b in split_params(grad, model.plans)}

    for plan, cache in zip(reversed(model.plans), reversed(caches)):
        layer = plan.layer
        kind = cache[0]
        if kind == "dense":
            _, in_shape, flat_in, mask = cache
            if mask is not None:
                d = d * mask
            w, _ = views[plan.offset]
            gw, gb = gviews[plan.offset]
            gw += flat_in.T @ d
            gb += d.sum(axis=0)
            d = (d @ w.T).reshape(in_shape)
        elif kind == "pool":
            _, in_shape, idx = cache
            d = kernels.maxpool_backward(
                np.ascontiguousarray(d), idx, in_shape[2], in_shape[3], layer.window
            )
        else:  # conv
            _, in_shape, cols, mask = cache
            d = d * mask
            oc = layer.out_channels
            d2 = np.ascontiguousarray(d.transpose(0, 2, 3, 1)).reshape(-1, oc)
            w, _ = views[plan.offset]
            w2 = w.reshape(oc, -1)
            gw, gb = gviews[plan.offset]
            gw += (d2.T @ cols).reshape(gw.shape)
            gb += d2.sum(axis=0)
            dcols = np.ascontiguousarray(d2 @ w2)
            d = kernels.col2im(
                dcols, in_shape[0], in_shape[1], in_shape[2], in_shape[3],
                layer.kernel, layer.stride,
            )
    return cross_entropy(logits, labels), grad


def train_batches(model: ModelParams, batches, lr: float) -> np.ndarray:
    """Run SGD over an iterable of (images, labels) batches; returns new values."""
    values = model.values.copy()
    work = model.with_values(values)
    for images, labels in batches:
        _, grad = loss_and_grad(work, images, labels)
        values -= np.asarray(lr, dtype=values.dtype) * grad
    return values


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Per-epoch shuffle stream; epochs are independently derived from the seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, epoch))))


def shuffled_batches(images: np.ndarray, labels: np.ndarray, batch_size: int,
                     rng: np.random.Generator):
    perm = rng.permutation(len(labels))
    for start in range(0, len(perm), batch_size):
        take = perm[start : start + batch_size]
        yield images[take], labels[take]


def train_local(
    model: ModelParams,
    data,
    lr: float,
    local_epochs: int,
    batch_size: int,
    seed: int,
    epoch_offset: int = 0,
) -> Gradient:
    """Mini-batch SGD on a shuffled copy; returns M_before - M_after.

    The delta accumulates every update across all local epochs, so applying
    it with a server learning rate of 1 reproduces the locally trained model.
    epoch_offset shifts the per-epoch shuffle streams, letting a k-epoch run
    be decomposed into sequential single-epoch runs.
    """
    if len(data) == 0:
        raise InputError("cannot train on an empty dataset")
    if lr < 0:
        raise InputError(f"learning rate must be non-negative, got {lr}")
    if local_epochs < 1:
        raise InputError(f"local_epochs must be >= 1, got {local_epochs}")
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    values = model.values.copy()
    work = model.with_values(values)
    for epoch in range(local_epochs):
        rng = epoch_rng(seed, epoch_offset + epoch)
        values[:] = train_batches(
            work, shuffled_batches(data.images, data.labels, batch_size, rng), lr
        )
    delta = model.values - values
    if not np.all(np.isfinite(delta)):
        raise InputError("training diverged: non-finite parameter delta")
    return Gradient(delta)


def predict(model: ModelParams, images: np.ndarray) -> np.ndarray:
    """Predicted labels; argmax ties resolve to the lowest class index."""
    return forward(model, images).argmax(axis=1)


def evaluate(model: ModelParams, data, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    if len(data) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(data), batch_size):
        images = data.images[start : start + batch_size]
        labels = data.labels[start : start + batch_size]
        correct += int((predict(model, images) == labels).sum())
    return correct / len(data)


def check_classes(model: ModelParams, num_classes: int) -> None:
    if model.num_classes != num_classes:
        raise ConfigurationError(
            f"model has {model.num_classes} output classes, dataset has {num_classes}"
        )
