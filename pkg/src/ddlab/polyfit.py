"""Least-squares polynomial surrogate of a learning curve.

Times are mapped affinely onto u in [-1, 1] before the Vandermonde system is
built; the fitted polynomial lives on u and is evaluated through the same map.
This reparameterization leaves the least-squares minimizer unchanged but keeps
the normal matrix well conditioned even for epochs in the thousands.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from ddlab.curve import LearningCurve

MAX_CONDITION = 1e12


class SingularFitError(ValueError):
    """The normal matrix V^T V is numerically singular."""


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class PolyFit:
    degree: int
    coeffs: np.ndarray  # a_0..a_k on the normalized domain u
    t_center: float
    t_halfwidth: float
    sse: float
    n_samples: int
    deriv_order: int = 0  # >0 for polynomials produced by derivative()

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size != self.degree + 1:
            raise ValueError("need degree + 1 coefficients")
        if not self.t_halfwidth > 0:
            raise ValueError("t_halfwidth must be positive")
        if self.sse < 0:
            raise ValueError("sse must be >= 0")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def to_u(self, t):
        return (np.asarray(t, dtype=float) - self.t_center) / self.t_halfwidth

    def __call__(self, t):
        return evaluate(self, t)

    @property
    def domain(self) -> tuple[float, float]:
        return self.t_center - self.t_halfwidth, self.t_center + self.t_halfwidth

    def to_dict(self) -> dict:
        return {"degree": self.degree, "coeffs": self.coeffs.tolist(),
                "t_center": self.t_center, "t_halfwidth": self.t_halfwidth,
                "sse": self.sse, "n": self.n_samples}

    @classmethod
    def from_dict(cls, d: dict) -> "PolyFit":
        return cls(int(d["degree"]), np.array(d["coeffs"], dtype=float), float(d["t_center"]),
                   float(d["t_halfwidth"]), float(d["sse"]), int(d["n"]))


def build_vandermonde(u, k: int) -> np.ndarray:
    """Rows ``[1, u, u**2, ..., u**k]``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size < 1 or k < 0:
        raise ValueError("need at least one time and k >= 0")
    return np.vander(u, k + 1, increasing=True)


def domain_map(times) -> tuple[float, float]:
    t = np.asarray(times, dtype=float)
    lo, hi = float(t.min()), float(t.max())
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if not half > 0:
        raise SingularFitError("all sample times coincide")
    return center, half


def fit(curve: LearningCurve, k: int) -> PolyFit:
    """Degree-k least-squares fit through the normal equations V^T V a = V^T E."""
    return fit_arrays(curve.times, curve.values, k)


def fit_arrays(times, values, k: int) -> PolyFit:
    t = np.asarray(times, dtype=float).reshape(-1)
    y = np.asarray(values, dtype=float).reshape(-1)
    if k < 0:
        raise ValueError("degree must be >= 0")
    if t.size != y.size:
        raise ValueError("times and values differ in length")
    if t.size < k + 1:
        raise SingularFitError(f"{t.size} samples cannot determine a degree-{k} polynomial")
    center, half = domain_map(t)
    u = (t - center) / half
    V = build_vandermonde(u, k)
    G = V.T @ V
    cond = np.linalg.cond(G)
    if not (math.isfinite(cond) and cond <= MAX_CONDITION):
        raise SingularFitError(f"normal matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}; "
                               "too few distinct times for this degree")
    a = np.linalg.solve(G, V.T @ y)
    r = V @ a - y
    return PolyFit(k, a, center, half, float(r @ r), int(t.size))


def _horner(c: np.ndarray, u):
    out = np.zeros_like(u, dtype=float) + c[-1]
    for ci in c[-2::-1]:
        out = out * u + ci
    return out


def evaluate(fit: PolyFit, t, warn: bool = True):
    """P(u(t)) by Horner's rule.  Warns when t lies outside the fitted span."""
    u = fit.to_u(t)
    if warn and np.any(np.abs(u) > 1.0 + 1e-12):
        warnings.warn("evaluating the polynomial outside its fitted time span", ExtrapolationWarning,
                      stacklevel=2)
    out = _horner(fit.coeffs, u)
    return float(out) if np.ndim(out) == 0 else out


def derivative(fit: PolyFit) -> PolyFit:
    """dP/dt, including the 1/halfwidth factor of the time normalization."""
    if fit.degree < 1:
        raise ValueError("cannot differentiate a degree-0 fit into a polynomial of degree >= 0")
    k = fit.degree
    c = fit.coeffs[1:] * np.arange(1, k + 1) / fit.t_halfwidth
    return PolyFit(k - 1, c, fit.t_center, fit.t_halfwidth, 0.0, fit.n_samples, fit.deriv_order + 1)


def raw_coeffs(fit: PolyFit) -> np.ndarray:
    """Coefficients b_0..b_k of the same polynomial written in raw time t."""
    # u = (t - c)/h  ->  substitute the linear polynomial in t into P(u)
    lin = np.array([-fit.t_center / fit.t_halfwidth, 1.0 / fit.t_halfwidth])
    out = np.array([fit.coeffs[-1]])
    for ci in fit.coeffs[-2::-1]:
        out = npoly.polyadd(npoly.polymul(out, lin), [ci])
    return np.pad(out, (0, fit.degree + 1 - out.size))
