"""Savitzky-Golay pre-filter for noisy, uniformly sampled curves."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ddlab.curve import LearningCurve

UNIFORM_RTOL = 1e-9


@dataclass(frozen=True)
class SGConfig:
    window: int = 11
    order: int = 3

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be an odd integer >= 3, got {self.window}")
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if self.order >= self.window:
            raise ValueError(f"order ({self.order}) must be < window ({self.window})")


@lru_cache(maxsize=64)
def _projection(window: int, order: int) -> np.ndarray:
    """Hat matrix of the local least-squares fit.

    Row j maps the ``window`` samples to the fitted polynomial evaluated at
    position j of the window; the middle row gives the usual convolution
    weights, the others are used at the curve edges.
    """
    half = window // 2
    # offsets scaled to [-1, 1] keep A^T A well conditioned for wide windows
    x = np.arange(-half, half + 1) / half
    A = np.vander(x, order + 1, increasing=True)
    # orthogonal projector onto the column space of A; QR keeps high orders stable
    Q, _ = np.linalg.qr(A)
    H = Q @ Q.T
    H.setflags(write=False)
    return H


def sg_weights(window: int, order: int) -> np.ndarray:
    """Convolution weights of the window-centre least-squares estimate."""
    SGConfig(window, order)
    return _projection(window, order)[window // 2].copy()


def smooth_values(values, cfg: SGConfig) -> np.ndarray:
    y = np.asarray(values, dtype=float)
    w = cfg.window
    if y.size < w:
        raise ValueError(f"curve has {y.size} points, shorter than the window ({w})")
    H = _projection(w, cfg.order)
    half = w // 2
    out = np.empty_like(y)
    # interior: sliding dot product with the centre row
    windows = np.lib.stride_tricks.sliding_window_view(y, w)
    out[half:y.size - half] = windows @ H[half]
    # edges: first/last full window's fit evaluated off-centre
    out[:half] = H[:half] @ y[:w]
    out[y.size - half:] = H[half + 1:] @ y[-w:]
    return out


def is_uniform(times, rtol: float = UNIFORM_RTOL) -> bool:
    d = np.diff(np.asarray(times, dtype=float))
    if d.size == 0:
        return True
    step = (times[-1] - times[0]) / d.size
    return bool(np.all(np.abs(d - step) <= rtol * abs(step)))


def smooth(curve: LearningCurve, cfg: SGConfig = SGConfig()) -> LearningCurve:
    if not is_uniform(curve.times):
        raise ValueError("Savitzky-Golay smoothing needs uniformly spaced times; resample first")
    return curve.with_values(smooth_values(curve.values, cfg))
