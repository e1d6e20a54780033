"""Objective fusion-quality metrics for a (source A, source B, fused F) triple.

* ``petrovic_qabf``  - Xydeas/Petrovic edge-information preservation (Pe)
* ``mutual_information_metric`` - I(A;F) + I(B;F) on 8-bit histograms (MI)
* ``piella_q``  - variance-weighted local UIQI (Q)
* ``cvejic_q``  - covariance-weighted local UIQI (Cv)

All four are exactly symmetric in A and B: every A/B combination is written as
a commutative sum so swapping the sources cannot change a single bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import Image, quantize8

log = logging.getLogger(__name__)

# Xydeas & Petrovic sigmoid constants
GAMMA_G, KAPPA_G, SIGMA_G = 0.9994, -15.0, 0.5
GAMMA_A, KAPPA_A, SIGMA_A = 0.9879, -22.0, 0.8

WINDOW = 8


def qabf_self_constant() -> float:
    """Pe of an image fused with itself: both sigmoids evaluated at G = A = 1."""
    qg = GAMMA_G / (1.0 + math.exp(KAPPA_G * (1.0 - SIGMA_G)))
    qa = GAMMA_A / (1.0 + math.exp(KAPPA_A * (1.0 - SIGMA_A)))
    return qg * qa


def _arr(img) -> np.ndarray:
    return np.asarray(getattr(img, "pixels", img), dtype=np.float64)


def _same_shape(*imgs):
    shapes = {_arr(i).shape for i in imgs}
    if len(shapes) != 1:
        raise ValueError(f"image dimensions differ: {sorted(shapes)}")
    return shapes.pop()


# ---------------------------------------------------------------------------
# Pe

def _sobel(x: np.ndarray):
    # separable form (smooth, then difference) so flat regions give exactly zero
    p = np.pad(x, 1, mode="reflect")
    smooth_v = p[:-2, :] + 2.0 * p[1:-1, :] + p[2:, :]
    smooth_h = p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]
    sx = smooth_v[:, 2:] - smooth_v[:, :-2]
    sy = smooth_h[2:, :] - smooth_h[:-2, :]
    g = np.sqrt(sx * sx + sy * sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(sx == 0, np.pi / 2, np.arctan(sy / np.where(sx == 0, 1.0, sx)))
    return g, alpha


def _edge_preservation(gs, als, gf, alf):
    hi = np.maximum(gs, gf)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_g = np.where(hi > 0, np.minimum(gs, gf) / np.where(hi > 0, hi, 1.0), 0.0)
    rel_a = 1.0 - np.abs(als - alf) / (np.pi / 2)
    qg = GAMMA_G / (1.0 + np.exp(KAPPA_G * (rel_g - SIGMA_G)))
    qa = GAMMA_A / (1.0 + np.exp(KAPPA_A * (rel_a - SIGMA_A)))
    return qg * qa


def petrovic_qabf_flagged(a, b, f) -> tuple[float, bool]:
    """Pe together with a flag that is True when both sources carry no edges."""
    shape = _same_shape(a, b, f)
    if shape[0] < 3 or shape[1] < 3:
        raise ValueError("Pe needs images of at least 3x3")
    ga, aa = _sobel(_arr(a))
    gb, ab = _sobel(_arr(b))
    gf, af = _sobel(_arr(f))
    qa = _edge_preservation(ga, aa, gf, af)
    qb = _edge_preservation(gb, ab, gf, af)
    den = np.sum(ga + gb)
    if den == 0:
        return 0.0, True
    return float(np.sum(qa * ga + qb * gb) / den), False


def petrovic_qabf(a, b, f) -> float:
    value, degenerate = petrovic_qabf_flagged(a, b, f)
    if degenerate:
        log.warning("Pe undefined: both sources are constant; reporting 0")
    return value


# ---------------------------------------------------------------------------
# MI

def _codes(img) -> np.ndarray:
    if isinstance(img, Image):
        return quantize8(img).codes
    return quantize8(Image(_arr(img))).codes


def mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    """I(X;Y) in bits from the 256x256 joint histogram of two uint8 code arrays."""
    joint = np.bincount(x.ravel().astype(np.int64) * 256 + y.ravel(), minlength=256 * 256)
    joint = joint.reshape(256, 256) / x.size
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(px, py)
    return float(np.sum(joint[nz] * np.log2(joint[nz] / outer[nz])))


def entropy(img) -> float:
    counts = np.bincount(_codes(img).ravel(), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def mutual_information_metric(a, b, f) -> float:
    _same_shape(a, b, f)
    cf = _codes(f)
    return mutual_information(_codes(a), cf) + mutual_information(_codes(b), cf)


# ---------------------------------------------------------------------------
# local UIQI machinery

@dataclass
class WindowStats:
    mean: np.ndarray
    var: np.ndarray
    const: np.ndarray  # window is exactly constant
    centred: np.ndarray  # (..., k*k) deviations from the window mean


def window_stats(x: np.ndarray, k: int = WINDOW) -> WindowStats:
    """Sample statistics of every k x k window (step 1, no padding)."""
    win = sliding_window_view(x, (k, k)).reshape(x.shape[0] - k + 1, x.shape[1] - k + 1, k * k)
    mean = win.mean(axis=-1)
    centred = win - mean[..., None]
    const = win.max(axis=-1) == win.min(axis=-1)
    var = np.where(const, 0.0, (centred * centred).sum(axis=-1) / (k * k - 1))
    return WindowStats(mean, var, const, centred)


def _cov(s: WindowStats, t: WindowStats) -> np.ndarray:
    n = s.centred.shape[-1]
    cov = (s.centred * t.centred).sum(axis=-1) / (n - 1)
    return np.where(s.const | t.const, 0.0, cov)


def _uiqi(s: WindowStats, t: WindowStats, cov: np.ndarray) -> np.ndarray:
    den = (s.var + t.var) * (s.mean * s.mean + t.mean * t.mean)
    both_const = s.const & t.const
    with np.errstate(divide="ignore", invalid="ignore"):
        q = 4.0 * cov * s.mean * t.mean / np.where(both_const, 1.0, den)
    # both windows flat: perfect if they hold the same value, otherwise no information
    return np.where(both_const, (s.mean == t.mean).astype(np.float64), q)


def uiqi_window(x, y) -> float:
    """Wang-Bovik universal quality index of two equal-length windows."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 2:
        raise ValueError("windows must have equal length >= 2")
    n = x.size
    cx, cy = x.max() == x.min(), y.max() == y.min()
    if cx and cy:
        return 1.0 if np.array_equal(x, y) else 0.0
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx = 0.0 if cx else float(dx @ dx) / (n - 1)
    vy = 0.0 if cy else float(dy @ dy) / (n - 1)
    cov = 0.0 if (cx or cy) else float(dx @ dy) / (n - 1)
    return 4.0 * cov * mx * my / ((vx + vy) * (mx * mx + my * my))


def _local_terms(a, b, f, k):
    shape = _same_shape(a, b, f)
    if shape[0] < k or shape[1] < k:
        raise ValueError(f"images must be at least {k}x{k}")
    sa, sb, sf = (window_stats(_arr(x), k) for x in (a, b, f))
    cov_af, cov_bf = _cov(sa, sf), _cov(sb, sf)
    return sa, sb, cov_af, cov_bf, _uiqi(sa, sf, cov_af), _uiqi(sb, sf, cov_bf)


def _split_weights(wa, wb):
    """(wa, wb) / (wa + wb) clamped to [0, 1]; 0.5 each when the sum vanishes."""
    tot = wa + wb
    zero = tot == 0
    safe = np.where(zero, 1.0, tot)
    la = np.where(zero, 0.5, np.clip(wa / safe, 0.0, 1.0))
    lb = np.where(zero, 0.5, np.clip(wb / safe, 0.0, 1.0))
    return la, lb


def piella_q(a, b, f, window: int = WINDOW) -> float:
    sa, sb, _, _, qa, qb = _local_terms(a, b, f, window)
    la, lb = _split_weights(sa.var, sb.var)
    return float(np.mean(la * qa + lb * qb))


def cvejic_q(a, b, f, window: int = WINDOW) -> float:
    _, _, cov_af, cov_bf, qa, qb = _local_terms(a, b, f, window)
    ma, mb = _split_weights(cov_af, cov_bf)
    return float(np.mean(ma * qa + mb * qb))


# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    pe: float
    mi: float
    q: float
    cv: float
    files: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_json(self, indent: int | None = 2) -> str:
        def sig(v):
            return float(f"{v:.10g}")
        payload = {"pe": sig(self.pe), "mi": sig(self.mi), "q": sig(self.q),
                   "cv": sig(self.cv), "files": self.files}
        return json.dumps(payload, indent=indent)


def evaluate_all(a, b, f, files: dict | None = None) -> MetricReport:
    pe, degenerate = petrovic_qabf_flagged(a, b, f)
    flags = ["pe_degenerate"] if degenerate else []
    return MetricReport(
        pe=pe,
        mi=mutual_information_metric(a, b, f),
        q=piella_q(a, b, f),
        cv=cvejic_q(a, b, f),
        files=dict(files or {}),
        flags=flags,
    )
