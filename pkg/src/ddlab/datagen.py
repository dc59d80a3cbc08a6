"""Synthetic balanced binary datasets and feature-swap label noise."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    noise_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],) or self.noise_mask.shape != self.y.shape:
            raise ValueError("inconsistent dataset shapes")
        for a in (self.X, self.y, self.noise_mask):
            a.setflags(write=False)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_noisy(self) -> int:
        return int(self.noise_mask.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.X.shape[1]
        w.writerow([f"x{j}" for j in range(d)] + ["label", "noisy"])
        for row, lab, noisy in zip(self.X, self.y, self.noise_mask):
            w.writerow([format(v, ".17g") for v in row] + [int(lab), int(noisy)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[-2:] != ["label", "noisy"]:
            raise ValueError("dataset CSV must end with 'label,noisy' columns")
        arr = np.array(body, dtype=float)
        return cls(arr[:, :-2], arr[:, -2].astype(int), arr[:, -1].astype(bool))


def random_direction(d: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def gen_gaussian_pair(n: int, d: int, separation: float, seed, direction=None) -> Dataset:
    """n/2 positives from N(+mu, I) followed by n/2 negatives from N(-mu, I).

    ``|2 mu| == separation``; mu points along ``direction`` (a random unit
    vector drawn from ``seed`` when not given).  Pass the same direction to
    draw a training and a validation set from one distribution.
    """
    if n <= 0 or n % 2:
        raise ValueError(f"n must be a positive even number, got {n}")
    if d < 1:
        raise ValueError("d must be >= 1")
    if not separation > 0:
        raise ValueError("separation must be positive")
    rng = np.random.default_rng(seed)
    if direction is None:
        u = rng.standard_normal(d)
        direction = u / np.linalg.norm(u)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (d,):
        raise ValueError("direction must have shape (d,)")
    mu = 0.5 * separation * direction / np.linalg.norm(direction)
    half = n // 2
    X = np.vstack([rng.standard_normal((half, d)) + mu, rng.standard_normal((half, d)) - mu])
    y = np.r_[np.ones(half, dtype=int), np.zeros(half, dtype=int)]
    meta = {"seed": _seed_repr(seed), "separation": float(separation), "noise_fraction": 0.0}
    return Dataset(X, y, np.zeros(n, dtype=bool), meta)


def inject_swap_noise(ds: Dataset, fraction: float, seed) -> Dataset:
    """Swap the feature vectors of round(fraction*n/2) positive/negative pairs.

    Labels are untouched, so every affected row now carries the features of
    the other class.  The mask marks the rows touched by this call only;
    applying the same call twice restores the original features.
    """
    if not 0.0 <= fraction <= 0.5:
        raise ValueError(f"fraction must be in [0, 0.5], got {fraction}")
    n = len(ds)
    k = round(fraction * n / 2)
    pos = np.flatnonzero(ds.y == 1)
    neg = np.flatnonzero(ds.y == 0)
    if k > min(pos.size, neg.size):
        raise ValueError("not enough samples of each class to swap")
    rng = np.random.default_rng(seed)
    pi = rng.choice(pos, size=k, replace=False)
    ni = rng.choice(neg, size=k, replace=False)
    X = ds.X.copy()
    X[pi], X[ni] = ds.X[ni], ds.X[pi]
    mask = np.zeros(n, dtype=bool)
    mask[pi] = True
    mask[ni] = True
    meta = dict(ds.meta, noise_fraction=float(fraction), noise_seed=_seed_repr(seed))
    return Dataset(X, ds.y.copy(), mask, meta)


def _seed_repr(seed):
    return seed if isinstance(seed, (int, np.integer)) else repr(seed)
