"""Skip-connected encoder-decoder used as the deep image prior.

Layout per level i (outermost first)::

    x ──┬── skip:   conv1x1 -> norm -> lrelu ───────────────┐
        └── deeper: conv k/2 -> norm -> lrelu                │
                    conv k   -> norm -> lrelu                │
                    [level i+1]                              │
                    upsample x2 ──────────── concat(skip, .) ┘
                                              -> norm -> conv k -> norm -> lrelu
                                              -> conv1x1 -> norm -> lrelu
    head: conv1x1 -> sigmoid

Convolutions that feed a normalization carry no bias (it would be cancelled
by the mean subtraction); only the head has one.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor, backprop

INPUT_SEED_XOR = 0x5EED_F00D


@dataclass(frozen=True)
class NetworkSpec:
    depth: int = 5
    down_channels: int = 128
    up_channels: int = 128
    skip_channels: int = 4
    conv_kernel: int = 3
    skip_kernel: int = 1
    leaky_slope: float = 0.2
    out_channels: int = 1
    dtype: str = "float32"
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for name in ("down_channels", "up_channels", "skip_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("conv_kernel", "skip_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be odd and positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def in_channels(self) -> int:
        # the input noise has as many channels as the output (one per replica)
        return self.out_channels

    @property
    def multiple(self) -> int:
        return 2 ** self.depth


class ParameterStore(OrderedDict):
    """Ordered name -> Tensor mapping of the network weights."""

    seed: int | None = None

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def arrays(self):
        return OrderedDict((k, t.values) for k, t in self.items())

    def copy(self) -> "ParameterStore":
        out = ParameterStore((k, Tensor(t.values.copy(), requires_grad=True, name=k))
                             for k, t in self.items())
        out.seed = self.seed
        return out

    @property
    def size(self) -> int:
        return sum(t.values.size for t in self.values())


def _layout(spec: NetworkSpec):
    """Yield (name, kind, shape, fan_in) in the fixed parameter order."""
    k, ks = spec.conv_kernel, spec.skip_kernel
    in_ch = spec.in_channels
    for i in range(spec.depth):
        d, u, s = spec.down_channels, spec.up_channels, spec.skip_channels
        deeper_out = u if i < spec.depth - 1 else d
        pre = f"level{i}"
        yield f"{pre}.skip.conv.weight", "conv", (s, in_ch, ks, ks), in_ch * ks * ks
        yield from _norm(f"{pre}.skip.norm", s)
        yield f"{pre}.down1.conv.weight", "conv", (d, in_ch, k, k), in_ch * k * k
        yield from _norm(f"{pre}.down1.norm", d)
        yield f"{pre}.down2.conv.weight", "conv", (d, d, k, k), d * k * k
        yield from _norm(f"{pre}.down2.norm", d)
        yield from _norm(f"{pre}.merge.norm", s + deeper_out)
        yield f"{pre}.up1.conv.weight", "conv", (u, s + deeper_out, k, k), (s + deeper_out) * k * k
        yield from _norm(f"{pre}.up1.norm", u)
        yield f"{pre}.up2.conv.weight", "conv", (u, u, 1, 1), u
        yield from _norm(f"{pre}.up2.norm", u)
        in_ch = d
    yield "head.conv.weight", "conv", (spec.out_channels, spec.up_channels, 1, 1), spec.up_channels
    yield "head.conv.bias", "bias", (spec.out_channels,), None


def _norm(prefix, ch):
    yield f"{prefix}.scale", "scale", (ch,), None
    yield f"{prefix}.shift", "shift", (ch,), None


def init_params(spec: NetworkSpec, seed: int) -> ParameterStore:
    """Uniform(-b, b) conv weights with b = sqrt(1 / fan_in); zero biases and shifts, unit scales."""
    rng = np.random.default_rng(seed)
    dtype = np.dtype(spec.dtype)
    store = ParameterStore()
    for name, kind, shape, fan_in in _layout(spec):
        if kind == "conv":
            bound = np.sqrt(1.0 / fan_in)
            vals = rng.uniform(-bound, bound, size=shape)
        elif kind == "scale":
            vals = np.ones(shape)
        else:
            vals = np.zeros(shape)
        store[name] = Tensor(vals.astype(dtype), requires_grad=True, name=name)
    store.seed = seed
    return store


def input_seed(seed: int) -> int:
    return seed ^ INPUT_SEED_XOR


def make_input(seed: int, height: int, width: int, n: int, depth: int = 5,
               dtype: str = "float32") -> Tensor:
    """Fixed network input: (n, height, width) noise, uniform on [0, 0.1]."""
    m = 2 ** depth
    if height < 1 or width < 1 or n < 1:
        raise ValueError("input dimensions must be positive")
    if height % m or width % m:
        raise ValueError(f"input dims {height}x{width} not divisible by {m}")
    rng = np.random.default_rng(seed)
    vals = rng.uniform(0.0, 0.1, size=(n, height, width)).astype(dtype)
    return Tensor(vals, name="input")


def _block(x, params, prefix, stride, slope, eps):
    y = ops.conv2d(x, params[f"{prefix}.conv.weight"], stride=stride)
    y = ops.batch_norm(y, params[f"{prefix}.norm.scale"], params[f"{prefix}.norm.shift"], eps)
    return ops.leaky_relu(y, slope)


def _level(x, params, spec, i):
    pre = f"level{i}"
    slope, eps = spec.leaky_slope, spec.norm_eps
    skip = _block(x, params, f"{pre}.skip", 1, slope, eps)
    deep = _block(x, params, f"{pre}.down1", 2, slope, eps)
    deep = _block(deep, params, f"{pre}.down2", 1, slope, eps)
    if i < spec.depth - 1:
        deep = _level(deep, params, spec, i + 1)
    deep = ops.upsample2x(deep)
    y = ops.concat([skip, deep])
    y = ops.batch_norm(y, params[f"{pre}.merge.norm.scale"], params[f"{pre}.merge.norm.shift"], eps)
    y = _block(y, params, f"{pre}.up1", 1, slope, eps)
    return _block(y, params, f"{pre}.up2", 1, slope, eps)


def _check_input(input: Tensor, spec: NetworkSpec):
    shape = input.shape
    if len(shape) != 3 or shape[0] != spec.in_channels:
        raise ValueError(f"input shape {shape} does not match spec ({spec.in_channels}, h, w)")
    m = spec.multiple
    if shape[1] % m or shape[2] % m:
        raise ValueError(f"input spatial dims {shape[1:]} not divisible by {m}")


def forward_graph(params: ParameterStore, input: Tensor, spec: NetworkSpec) -> Tensor:
    _check_input(input, spec)
    y = _level(input, params, spec, 0)
    y = ops.conv2d(y, params["head.conv.weight"], params["head.conv.bias"])
    return ops.sigmoid(y)


def forward(params: ParameterStore, input: Tensor, spec: NetworkSpec) -> np.ndarray:
    """Network output (n, h, w) with every value in (0, 1)."""
    return forward_graph(params, input, spec).values


class NonFiniteLossError(FloatingPointError):
    pass


def backward(params: ParameterStore, input: Tensor, loss_fn, spec: NetworkSpec):
    """Loss value, network output and exact parameter gradients.

    `loss_fn(output)` must return ``(loss, d loss / d output)``.
    Returns ``(loss, output, grads)`` with grads an OrderedDict aligned with params.
    """
    params.zero_grad()
    out = forward_graph(params, input, spec)
    loss, gout = loss_fn(out.values)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss}")
    backprop(out, np.asarray(gout, dtype=out.dtype))
    grads = OrderedDict()
    for name, t in params.items():
        grads[name] = t.grad if t.grad is not None else np.zeros_like(t.values)
    params.zero_grad()
    return float(loss), out.values, grads
