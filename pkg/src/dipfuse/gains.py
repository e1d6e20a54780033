"""Per-pixel sensor gains for the two-source forward model x_i = beta_i * x0 + noise.

The gain pair at each pixel is the dominant principal direction of the local,
non-centred 2x2 second-moment matrix of the source intensities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .imagecore import Image

DEGENERATE_NORM = 1e-12
FALLBACK = 1.0 / np.sqrt(2.0)


class DegenerateMatrixError(ValueError):
    pass


@dataclass(frozen=True)
class GainPair:
    beta1: np.ndarray
    beta2: np.ndarray
    window: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.beta1.shape

    def as_images(self) -> tuple[Image, Image]:
        return Image(self.beta1), Image(self.beta2)


def _dominant_eigvec2(m11, m12, m22):
    """Vectorised core. Returns (v1, v2, degenerate_mask).

    Written so that exchanging m11 and m22 exchanges v1 and v2 bit-for-bit.
    """
    m11, m12, m22 = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (m11, m12, m22)))
    half = (m11 - m22) / 2.0
    r = np.sqrt(half * half + m12 * m12)
    # (lambda - m22, m12) is stable when m11 >= m22, (m12, lambda - m11) otherwise
    upper = half >= 0
    v1 = np.where(upper, half + r, m12)
    v2 = np.where(upper, m12, r - half)
    flip = (v1 + v2) < 0
    v1 = np.where(flip, -v1, v1)
    v2 = np.where(flip, -v2, v2)
    norm = np.sqrt(v1 * v1 + v2 * v2)
    fro = np.sqrt(m11 * m11 + 2.0 * m12 * m12 + m22 * m22)
    # a non-zero matrix with zero eigvec norm is a multiple of the identity
    degenerate = fro < DEGENERATE_NORM
    isotropic = ~degenerate & (norm == 0)
    safe = np.where(norm > 0, norm, 1.0)
    v1 = np.where(isotropic, FALLBACK, v1 / safe)
    v2 = np.where(isotropic, FALLBACK, v2 / safe)
    return v1, v2, degenerate


def dominant_eigvec2(m11: float, m12: float, m22: float) -> tuple[float, float]:
    """Unit eigenvector of the larger eigenvalue of [[m11, m12], [m12, m22]].

    Oriented so both components are non-negative whenever that is possible
    (always the case for moment matrices of non-negative data). Raises
    DegenerateMatrixError when the matrix is numerically zero.
    """
    v1, v2, degenerate = _dominant_eigvec2(m11, m12, m22)
    if degenerate:
        raise DegenerateMatrixError("matrix norm below 1e-12")
    return float(v1), float(v2)


def local_moments(x1: np.ndarray, x2: np.ndarray, window: int):
    """Window averages of x1*x1, x1*x2 and x2*x2 with mirror borders."""
    kw = dict(size=window, mode="mirror")
    return (uniform_filter(x1 * x1, **kw),
            uniform_filter(x1 * x2, **kw),
            uniform_filter(x2 * x2, **kw))


def estimate_gains(x1: Image, x2: Image, window: int = 7) -> GainPair:
    if x1.shape != x2.shape:
        raise ValueError(f"source dimensions differ: {x1.shape} vs {x2.shape}")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd positive integer")
    m11, m12, m22 = local_moments(x1.pixels, x2.pixels, window)
    b1, b2, degenerate = _dominant_eigvec2(m11, m12, m22)
    b1 = np.where(degenerate, FALLBACK, b1)
    b2 = np.where(degenerate, FALLBACK, b2)
    # orientation can leave -0.0 or a rounding-level negative on exact zeros
    return GainPair(np.maximum(b1, 0.0), np.maximum(b2, 0.0), window)
