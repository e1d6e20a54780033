"""Differentiable operators for (channels, height, width) feature maps.

Only what the encoder-decoder needs: reflection-padded convolution (via
im2col + matmul), per-channel normalization, LeakyReLU, sigmoid, bilinear x2
upsampling, channel concatenation and cropping.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..imagecore import bilinear_matrix, reflect_indices
from .tensor import Tensor, make_node


def _reflect_pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p)), mode="reflect")


def _reflect_pad_grad(gp: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _reflect_pad: fold the padded border back onto its sources."""
    if p == 0:
        return gp
    ri = reflect_indices(h, p, p)
    ci = reflect_indices(w, p, p)
    # columns first, on all padded rows
    g = gp[:, :, p:p + w].copy()
    for c in list(range(p)) + list(range(p + w, w + 2 * p)):
        g[:, :, ci[c]] += gp[:, :, c]
    out = g[:, p:p + h, :].copy()
    for r in list(range(p)) + list(range(p + h, h + 2 * p)):
        out[:, ri[r], :] += g[:, r, :]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Convolution (cross-correlation) with reflection padding of (k - 1) / 2."""
    xv = x.values
    c, h, w = xv.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ValueError(f"conv weight {weight.shape} incompatible with input {xv.shape}")
    p = (k - 1) // 2
    xp = _reflect_pad(xv, p)
    if k == 1 and stride == 1:
        cols = xv.reshape(c, h * w)
        ho, wo = h, w
    else:
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
        ho, wo = win.shape[1], win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c * k * k, ho * wo)
    wmat = weight.values.reshape(o, c * k * k)
    out = wmat @ cols
    if bias is not None:
        out += bias.values[:, None]
    out = out.reshape(o, ho, wo)

    def backward(g):
        gm = g.reshape(o, ho * wo)
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c, k, k, ho, wo)
            if k == 1 and stride == 1:
                gx = gcols.reshape(c, h, w)
            else:
                gp = np.zeros(xp.shape, dtype=gcols.dtype)
                for i in range(k):
                    for j in range(k):
                        gp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
                gx = _reflect_pad_grad(gp, p, h, w)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over spatial positions using current statistics."""
    xv = x.values
    c = xv.shape[0]
    n = xv.shape[1] * xv.shape[2]
    flat = xv.reshape(c, n)
    mean = flat.mean(axis=1, keepdims=True)
    centred = flat - mean
    var = (centred * centred).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    out = (scale.values[:, None] * xhat + shift.values[:, None]).reshape(xv.shape)

    def backward(g):
        gf = g.reshape(c, n)
        gscale = (gf * xhat).sum(axis=1)
        gshift = gf.sum(axis=1)
        gx = None
        if x.requires_grad:
            gxhat = gf * scale.values[:, None]
            gx = (inv_std / n) * (n * gxhat - gxhat.sum(axis=1, keepdims=True)
                                  - xhat * (gxhat * xhat).sum(axis=1, keepdims=True))
            gx = gx.reshape(xv.shape)
        return gx, gscale, gshift

    return make_node(out, (x, scale, shift), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xv = x.values
    pos = xv > 0
    out = np.where(pos, xv, xv * xv.dtype.type(slope))

    def backward(g):
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return make_node(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    xv = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xv))
    out = np.where(xv >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xv.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (x,), backward)


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear x2 upsampling, half-pixel centres (align_corners=False)."""
    xv = x.values
    _, h, w = xv.shape
    uh = bilinear_matrix(h, 2 * h).astype(xv.dtype)
    uw = bilinear_matrix(w, 2 * w).astype(xv.dtype)
    out = np.matmul(uh, np.matmul(xv, uw.T))

    def backward(g):
        return (np.matmul(uh.T, np.matmul(g, uw)),)

    return make_node(out, (x,), backward)


def concat(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.values for p in parts], axis=0)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make_node(out, tuple(parts), backward)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    xv = x.values
    if (height, width) == xv.shape[1:]:
        return x
    out = xv[:, :height, :width]

    def backward(g):
        full = np.zeros(xv.shape, dtype=g.dtype)
        full[:, :height, :width] = g
        return (full,)

    return make_node(out, (x,), backward)
