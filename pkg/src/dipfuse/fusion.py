"""Two-source fusion by fitting an untrained encoder-decoder to the gain model.

The network output X0 (n channels) is pushed towards explaining both sources
through their gain maps; the lowest-loss iterate is kept and its channels are
averaged into the fused image.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .dipnet import (
    AdamState,
    NetworkSpec,
    NonFiniteLossError,
    adam_step,
    backward,
    init_params,
    input_seed,
    make_input,
)
from .gains import GainPair, estimate_gains
from .imagecore import CropRecord, Image, pad_reflect_to_multiple

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, seed: int, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss} at iteration {iteration} (seed {seed})")
        self.seed = seed
        self.iteration = iteration
        self.loss = loss


@dataclass(frozen=True)
class FusionConfig:
    channels: int = 10
    iterations: int = 2000
    lr: float = 0.01
    seed: int = 0
    gain_window: int = 7
    snapshot_stride: int = 1
    network: NetworkSpec | None = None  # out_channels is overridden by `channels`

    def __post_init__(self):
        for name in ("channels", "iterations", "gain_window", "snapshot_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.gain_window % 2 == 0:
            raise ValueError("gain_window must be odd")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def network_spec(self) -> NetworkSpec:
        base = self.network or NetworkSpec()
        return NetworkSpec(**{**asdict(base), "out_channels": self.channels})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = asdict(self.network_spec())
        return d


@dataclass
class FusionResult:
    fused: Image
    best_loss: float
    best_iteration: int
    loss_curve: np.ndarray
    gains: GainPair
    config: FusionConfig
    meta: dict = field(default_factory=dict)


def _check_dims(output: np.ndarray, x1, x2, gains: GainPair):
    hw = output.shape[-2:]
    if not (x1.shape == x2.shape == gains.shape == hw):
        raise ValueError(
            f"dimension mismatch: output {hw}, x1 {x1.shape}, x2 {x2.shape}, gains {gains.shape}")


def fusion_loss_and_grad(output: np.ndarray, x1: np.ndarray, x2: np.ndarray,
                         beta1: np.ndarray, beta2: np.ndarray):
    """Sum over channels of ||x1 - b1*X0c||^2 + ||x2 - b2*X0c||^2, and its gradient in X0."""
    out = np.asarray(output, dtype=np.float64)
    r1 = x1 - beta1 * out
    r2 = x2 - beta2 * out
    loss = float(np.sum(r1 * r1) + np.sum(r2 * r2))
    grad = -2.0 * (beta1 * r1 + beta2 * r2)
    return loss, grad


def fusion_loss(output, x1: Image, x2: Image, gains: GainPair) -> float:
    out = np.asarray(getattr(output, "values", output), dtype=np.float64)
    if out.ndim == 2:
        out = out[None]
    _check_dims(out, x1, x2, gains)
    loss, _ = fusion_loss_and_grad(out, x1.pixels, x2.pixels, gains.beta1, gains.beta2)
    return loss


def average_channels(output) -> Image:
    out = np.asarray(getattr(output, "values", output), dtype=np.float64)
    if out.ndim != 3 or out.shape[0] < 1:
        raise ValueError(f"expected an (n, h, w) tensor, got shape {out.shape}")
    return Image(np.clip(out.mean(axis=0), 0.0, 1.0))


def run_fusion(x1: Image, x2: Image, cfg: FusionConfig, progress=None) -> FusionResult:
    """Optimise a fresh network for this source pair and return the fused image.

    `progress`, if given, is called as ``progress(iteration, loss)`` after every
    forward pass.
    """
    if x1.shape != x2.shape:
        raise ValueError(f"source dimensions differ: {x1.shape} vs {x2.shape}")
    spec = cfg.network_spec()
    gains = estimate_gains(x1, x2, cfg.gain_window)

    # the network works on a reflect-padded canvas; the loss only sees the original extent
    p1, record = pad_reflect_to_multiple(x1, spec.multiple)
    h, w = record.height, record.width
    ph, pw = p1.shape

    params = init_params(spec, cfg.seed)
    net_in = make_input(input_seed(cfg.seed), ph, pw, cfg.channels, spec.depth, spec.dtype)
    state = AdamState(lr=cfg.lr)
    s1, s2 = x1.pixels, x2.pixels
    b1, b2 = gains.beta1, gains.beta2

    def loss_fn(out):
        loss, g = fusion_loss_and_grad(out[:, :h, :w], s1, s2, b1, b2)
        full = np.zeros(out.shape, dtype=np.float64)
        full[:, :h, :w] = g
        return loss, full

    curve = np.empty(cfg.iterations)
    best_loss = np.inf
    best_iter = -1
    best_out = None
    for t in range(cfg.iterations):
        try:
            loss, out, grads = backward(params, net_in, loss_fn, spec)
        except NonFiniteLossError:
            raise DivergenceError(cfg.seed, t, float("nan")) from None
        curve[t] = loss
        if progress is not None:
            progress(t, loss)
        if loss < best_loss and (t % cfg.snapshot_stride == 0 or t == cfg.iterations - 1):
            best_loss, best_iter = loss, t
            best_out = out[:, :h, :w].copy()
        if t < cfg.iterations - 1:
            try:
                adam_step(params, grads, state)
            except FloatingPointError as exc:
                raise DivergenceError(cfg.seed, t, loss) from exc

    fused = average_channels(best_out)
    log.debug("seed %d: best loss %.6g at iteration %d", cfg.seed, best_loss, best_iter)
    return FusionResult(
        fused=fused,
        best_loss=float(best_loss),
        best_iteration=best_iter,
        loss_curve=curve,
        gains=gains,
        config=cfg,
        meta={"padded_shape": (ph, pw), "crop": CropRecord(h, w)},
    )


def loss_curve_csv(curve) -> str:
    lines = ["iteration,loss"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(curve)]
    return "\n".join(lines) + "\n"
