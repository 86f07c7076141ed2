"""Layer descriptors, parameter layout, and the flat-vector model container.

A model is a flat float vector plus an ordered tuple of layer descriptors
and the input shape; every consumer (training, HE transport, pruning,
quantisation) works on the flat vector and recovers per-layer views from
the layout computed here.
"""

from dataclasses import dataclass, field

import numpy as np

from fedmark.errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class Conv:
    """2-D convolution (valid padding) followed by ReLU."""

    out_channels: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class Dense:
    """Fully connected layer. ReLU applied unless it is the final layer."""

    out_features: int


@dataclass(frozen=True)
class MaxPool:
    """Non-overlapping max pooling with a square window."""

    window: int


Layer = Conv | Dense | MaxPool
Arch = tuple[Layer, ...]

# Matches the two-conv / two-dense network used throughout: each conv is
# followed by 2x2 pooling, the hidden dense layer is ReLU-activated.
LENET_MINI: Arch = (
    Conv(12, 5),
    MaxPool(2),
    Conv(24, 5),
    MaxPool(2),
    Dense(128),
    Dense(10),
)


def lenet_mini(num_classes: int = 10) -> Arch:
    return LENET_MINI[:-1] + (Dense(num_classes),)


@dataclass(frozen=True)
class LayerPlan:
    """Resolved geometry for one layer: parameter slice and activation shapes."""

    layer: Layer
    offset: int  # start of this layer's parameters in the flat vector
    n_params: int  # 0 for pooling
    in_shape: tuple[int, ...]  # (C, H, W) or (features,)
    out_shape: tuple[int, ...]


def validate_arch(arch: Arch, input_shape: tuple[int, int, int]) -> list[LayerPlan]:
    """Walk the architecture, checking sizes and assigning parameter offsets.

    input_shape is (height, width, channels); activations flow as (C, H, W)
    until the first dense layer flattens them.
    """
    if not arch:
        raise ConfigurationError("architecture must contain at least one layer")
    if not isinstance(arch[-1], Dense):
        raise ConfigurationError("final layer must be Dense (produces the logits)")
    h, w, c = input_shape
    if h < 1 or w < 1 or c < 1:
        raise ConfigurationError(f"invalid input shape {input_shape}")

    plans: list[LayerPlan] = []
    shape: tuple[int, ...] = (c, h, w)
    offset = 0
    for layer in arch:
        if isinstance(layer, Conv):
            if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1:
                raise ConfigurationError(f"zero-size conv layer: {layer}")
            if len(shape) != 3:
                raise ConfigurationError("conv layer after flattening dense layer")
            ci, hi, wi = shape
            if layer.kernel > hi or layer.kernel > wi:
                raise ConfigurationError(
                    f"kernel {layer.kernel} exceeds activation size {hi}x{wi}"
                )
            ho = (hi - layer.kernel) // layer.stride + 1
            wo = (wi - layer.kernel) // layer.stride + 1
            n = layer.out_channels * ci * layer.kernel * layer.kernel + layer.out_channels
            out_shape = (layer.out_channels, ho, wo)
        elif isinstance(layer, MaxPool):
            if layer.window < 1:
                raise ConfigurationError(f"zero-size pooling window: {layer}")
            if len(shape) != 3:
                raise ConfigurationError("pooling after flattening dense layer")
            ci, hi, wi = shape
            if hi < layer.window or wi < layer.window:
                raise ConfigurationError(
                    f"pool window {layer.window} exceeds activation size {hi}x{wi}"
                )
            n = 0
            out_shape = (ci, hi // layer.window, wi // layer.window)
        elif isinstance(layer, Dense):
            if layer.out_features < 1:
                raise ConfigurationError(f"zero-size dense layer: {layer}")
            fan_in = int(np.prod(shape))
            n = fan_in * layer.out_features + layer.out_features
            out_shape = (layer.out_features,)
        else:
            raise ConfigurationError(f"unknown layer descriptor: {layer!r}")
        plans.append(LayerPlan(layer, offset, n, shape, out_shape))
        offset += n
        shape = out_shape
    return plans


def param_count(arch: Arch, input_shape: tuple[int, int, int]) -> int:
    plans = validate_arch(arch, input_shape)
    return plans[-1].offset + plans[-1].n_params


@dataclass
class ModelParams:
    """Flat parameter vector with its architecture metadata."""

    values: np.ndarray
    arch: Arch
    input_shape: tuple[int, int, int]  # (height, width, channels)
    _plans: list[LayerPlan] = field(default=None, repr=False, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self._plans is None:
            object.__setattr__(self, "_plans", validate_arch(self.arch, self.input_shape))
        expected = self._plans[-1].offset + self._plans[-1].n_params
        if self.values.ndim != 1 or len(self.values) != expected:
            raise DimensionError(
                f"parameter vector has length {len(self.values)}, architecture needs {expected}"
            )

    @property
    def plans(self) -> list[LayerPlan]:
        return self._plans

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def num_classes(self) -> int:
        return self.arch[-1].out_features  # type: ignore[union-attr]

    def copy(self) -> "ModelParams":
        return ModelParams(self.values.copy(), self.arch, self.input_shape, self._plans)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values, self.arch, self.input_shape, self._plans)

    def layer_slices(self) -> list[slice]:
        """Flat-vector slice of each parameterised layer, in order."""
        return [
            slice(p.offset, p.offset + p.n_params) for p in self._plans if p.n_params > 0
        ]


@dataclass
class Gradient:
    """Accumulated parameter delta (pre-aggregation, already scaled by the client lr)."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 1:
            raise DimensionError("gradient must be a flat vector")

    @property
    def dim(self) -> int:
        return len(self.values)


def split_params(values: np.ndarray, plans: list[LayerPlan]):
    """Yield (plan, weight_view, bias_view) for each parameterised layer."""
    for plan in plans:
        if plan.n_params == 0:
            continue
        layer = plan.layer
        if isinstance(layer, Conv):
            ci = plan.in_shape[0]
            n_w = layer.out_channels * ci * layer.kernel * layer.kernel
            w = values[plan.offset : plan.offset + n_w].reshape(
                layer.out_channels, ci, layer.kernel, layer.kernel
            )
            b = values[plan.offset + n_w : plan.offset + plan.n_params]
        else:  # Dense
            fan_in = int(np.prod(plan.in_shape))
            n_w = fan_in * layer.out_features
            w = values[plan.offset : plan.offset + n_w].reshape(fan_in, layer.out_features)
            b = values[plan.offset + n_w : plan.offset + plan.n_params]
        yield plan, w, b
