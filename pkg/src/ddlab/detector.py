"""Derivative-based double-descent detection on a polynomial surrogate.

A segment shows double descent when the derivative of the fitted curve has a
zero t_s with the derivative strictly positive on (t_a, t_s) and strictly
negative on (t_s, t_b).  Noise-level bumps are screened out by a minimum
prominence and a minimum width on either side of the peak.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from ddlab import polyfit
from ddlab.curve import LearningCurve, Segment, restrict
from ddlab.polyfit import PolyFit
from ddlab.smoothing import SGConfig, smooth

AUDIT_POINTS = 1000
MONOTONE_FRACTION = 0.95


class Pattern(str, enum.Enum):
    DOUBLE_DESCENT = "double_descent"
    PLATEAU = "plateau"
    MONOTONE_DECREASE = "monotone_decrease"
    MONOTONE_INCREASE = "monotone_increase"
    INCONCLUSIVE = "inconclusive"


class Advice(str, enum.Enum):
    CONTINUE = "continue_training"
    STOP_CONVERGED = "stop_converged"
    POSSIBLE_DOUBLE_DESCENT = "possible_double_descent"
    STOP_DIVERGED = "stop_diverged"


@dataclass(frozen=True)
class DetectorConfig:
    degree: int = 5
    sg: SGConfig | None = None
    min_segment_width: float = 10.0
    min_prominence: float = 0.02
    plateau_eps: float = 1e-3
    plateau_min_width: float = 20.0
    grid_points: int = 1000
    root_tol: float = 1e-9

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        for name in ("min_segment_width", "min_prominence", "plateau_eps", "plateau_min_width", "root_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.grid_points < 100:
            raise ValueError("grid_points must be >= 100")
        if not 3 <= self.degree <= 6:
            warnings.warn(f"polynomial degree {self.degree} is outside the recommended range [3, 6]",
                          stacklevel=3)

    @property
    def min_samples(self) -> int:
        """Below this many samples the segment counts as undersampled."""
        return 3 * (self.degree + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sg"] = None if self.sg is None else {"window": self.sg.window, "order": self.sg.order}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if d.get("sg") is not None:
            d["sg"] = SGConfig(**d["sg"])
        return cls(**d)


@dataclass(frozen=True)
class CriticalPoint:
    t: float
    kind: str  # "local_max" | "local_min"
    prominence: float


@dataclass(frozen=True)
class PatternReport:
    pattern: Pattern
    t_s: float | None
    ascent: tuple[float, float] | None
    descent: tuple[float, float] | None
    criticals: tuple[CriticalPoint, ...]
    fit: PolyFit | None
    config: DetectorConfig
    segment: Segment | None = None
    n_samples: int = 0
    undersampled: bool = False
    flags: tuple[str, ...] = ()

    @property
    def t_a(self) -> float | None:
        return None if self.ascent is None else self.ascent[0]

    @property
    def t_b(self) -> float | None:
        return None if self.descent is None else self.descent[1]

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern.value,
            "t_s": self.t_s,
            "ascent": list(self.ascent) if self.ascent else None,
            "descent": list(self.descent) if self.descent else None,
            "criticals": [asdict(c) for c in self.criticals],
            "fit": self.fit.to_dict() if self.fit else None,
            "segment": [self.segment.t_i, self.segment.t_j] if self.segment else None,
            "n_samples": self.n_samples,
            "undersampled": self.undersampled,
            "flags": list(self.flags),
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatternReport":
        seg = d.get("segment")
        return cls(
            pattern=Pattern(d["pattern"]),
            t_s=d.get("t_s"),
            ascent=tuple(d["ascent"]) if d.get("ascent") else None,
            descent=tuple(d["descent"]) if d.get("descent") else None,
            criticals=tuple(CriticalPoint(**c) for c in d.get("criticals", [])),
            fit=PolyFit.from_dict(d["fit"]) if d.get("fit") else None,
            config=DetectorConfig.from_dict(d["config"]),
            segment=Segment(*seg) if seg else None,
            n_samples=int(d.get("n_samples", 0)),
            undersampled=bool(d.get("undersampled", False)),
            flags=tuple(d.get("flags", ())),
        )

    def verdict(self) -> str:
        parts = [self.pattern.value]
        if self.pattern is Pattern.DOUBLE_DESCENT:
            top = max((c for c in self.criticals if c.t == self.t_s), key=lambda c: c.prominence)
            parts.append(f"peak t_s={self.t_s:.4g} (ascent {self.t_a:.4g}..{self.t_s:.4g}, "
                         f"descent {self.t_s:.4g}..{self.t_b:.4g}, prominence {top.prominence:.3g})")
        if self.undersampled:
            parts.append(f"UNDERSAMPLED: {self.n_samples} samples < {self.config.min_samples}")
        for f in self.flags:
            if f != "undersampled":
                parts.append(f"[{f}]")
        return " ".join(parts)


# --- critical points ------------------------------------------------------

def _antiderivative_values(dfit: PolyFit, t: np.ndarray) -> np.ndarray:
    # integral of dP/dt in t up to a constant; enough for value differences
    k = dfit.degree
    c = np.concatenate([[0.0], dfit.coeffs / np.arange(1, k + 2)]) * dfit.t_halfwidth
    return polyfit._horner(c, dfit.to_u(t))


def _bisect(f, lo: float, hi: float, f_lo: float, tol: float) -> float:
    s_lo = math.copysign(1.0, f_lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if fm == 0.0:
            return mid
        if math.copysign(1.0, fm) == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _prominences(ts: list[float], vals: list[float], kinds: list[str]) -> list[float]:
    """Topographic prominence of each interior extremum.

    ``ts``/``vals`` list the segment endpoints and all extrema in time order
    (the curve is monotone between consecutive entries).  For a maximum, walk
    outwards on each side until a higher value or the endpoint, keeping the
    lowest value seen; prominence is the peak height above the higher of the
    two lows.  Minima are handled symmetrically.
    """
    out = []
    n = len(ts)
    for i in range(1, n - 1):
        sgn = 1.0 if kinds[i] == "local_max" else -1.0
        peak = sgn * vals[i]
        lows = []
        for step in (-1, 1):
            j, low = i + step, math.inf
            while 0 <= j < n:
                v = sgn * vals[j]
                if v > peak:
                    break
                low = min(low, v)
                j += step
            lows.append(low)
        out.append(max(0.0, peak - max(lows)))
    return out


def critical_points(dfit: PolyFit, segment: Segment, tol: float = 1e-9,
                    grid_points: int = 1000) -> list[CriticalPoint]:
    """Sign-changing zeros of the derivative polynomial inside ``segment``.

    Zeros are isolated on a uniform grid and refined by bisection; zeros where
    the derivative only touches 0 are skipped.
    """
    lo, hi = segment.t_i, segment.t_j
    grid = np.linspace(lo, hi, grid_points)
    d = polyfit.evaluate(dfit, grid, warn=False)
    f = lambda t: float(polyfit.evaluate(dfit, t, warn=False))  # noqa: E731
    nz = np.flatnonzero(d != 0.0)
    roots: list[tuple[float, str]] = []
    for a, b in zip(nz[:-1], nz[1:]):
        if (d[a] > 0) == (d[b] > 0):
            continue
        if b == a + 1:
            t = _bisect(f, grid[a], grid[b], d[a], tol)
        else:
            # the grid landed exactly on the zero(s)
            t = float(grid[(a + b) // 2]) if b - a == 2 else _bisect(f, grid[a], grid[b], d[a], tol)
        if lo < t < hi:
            roots.append((t, "local_max" if d[a] > 0 else "local_min"))
    if not roots:
        return []
    ts = [lo] + [r[0] for r in roots] + [hi]
    vals = _antiderivative_values(dfit, np.array(ts)).tolist()
    kinds = ["end"] + [r[1] for r in roots] + ["end"]
    proms = _prominences(ts, vals, kinds)
    return [CriticalPoint(float(t), kind, float(p)) for (t, kind), p in zip(roots, proms)]


# --- classification -------------------------------------------------------

def audit_sign_pattern(dfit: PolyFit, t_a: float, t_s: float, t_b: float,
                       n: int = AUDIT_POINTS) -> bool:
    """Derivative strictly positive on n points inside (t_a, t_s), negative inside (t_s, t_b)."""
    up = np.linspace(t_a, t_s, n + 2)[1:-1]
    down = np.linspace(t_s, t_b, n + 2)[1:-1]
    return bool(np.all(polyfit.evaluate(dfit, up, warn=False) > 0)
                and np.all(polyfit.evaluate(dfit, down, warn=False) < 0))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges of consecutive True entries."""
    if not mask.any():
        return []
    m = np.r_[False, mask, False].astype(np.int8)
    edges = np.flatnonzero(np.diff(m))
    return [(s, e - 1) for s, e in zip(edges[0::2], edges[1::2])]


def _find_double_descent(dfit, crit, lo, hi, cfg):
    times = [lo] + [c.t for c in crit] + [hi]
    best = None
    for i, c in enumerate(crit, start=1):
        if c.kind != "local_max" or c.prominence < cfg.min_prominence:
            continue
        t_a, t_s, t_b = times[i - 1], times[i], times[i + 1]
        if t_s - t_a < cfg.min_segment_width or t_b - t_s < cfg.min_segment_width:
            continue
        if not audit_sign_pattern(dfit, t_a, t_s, t_b):
            continue
        if best is None or c.prominence > best[0].prominence:
            best = (c, t_a, t_b)
    return best


def _is_plateau(values: np.ndarray, slope: np.ndarray, grid: np.ndarray, cfg) -> bool:
    flat = np.abs(slope) < cfg.plateau_eps
    whole_range = values.max() - values.min()
    for s, e in _runs(flat):
        if grid[e] - grid[s] < cfg.plateau_min_width:
            continue
        # a flat stretch counts when the whole segment is flat, or when the
        # curve still descends afterwards (a stall, not convergence)
        if whole_range < cfg.min_prominence:
            return True
        if e < grid.size - 1 and values[e] - values[e:].min() >= cfg.min_prominence:
            return True
    return False


def classify(fit: PolyFit, segment: Segment, cfg: DetectorConfig = DetectorConfig()) -> PatternReport:
    """Label the fitted curve on ``segment``.

    Checked in order: double descent, plateau, monotone decrease/increase
    (derivative below/above plateau_eps on at least 95% of the grid, with the
    matching net change), otherwise inconclusive.
    """
    lo, hi = segment.t_i, segment.t_j
    grid = np.linspace(lo, hi, cfg.grid_points)
    values = polyfit.evaluate(fit, grid, warn=False)

    def report(pattern, crit=(), t_s=None, ascent=None, descent=None):
        return PatternReport(Pattern(pattern), t_s, ascent, descent, tuple(crit), fit, cfg, segment)

    if fit.degree == 0:
        return report(Pattern.PLATEAU if hi - lo >= cfg.plateau_min_width else Pattern.INCONCLUSIVE)

    dfit = polyfit.derivative(fit)
    crit = critical_points(dfit, segment, cfg.root_tol, cfg.grid_points)
    dd = _find_double_descent(dfit, crit, lo, hi, cfg)
    if dd is not None:
        c, t_a, t_b = dd
        return report(Pattern.DOUBLE_DESCENT, crit, c.t, (t_a, c.t), (c.t, t_b))

    slope = polyfit.evaluate(dfit, grid, warn=False)
    if _is_plateau(values, slope, grid, cfg):
        return report(Pattern.PLATEAU, crit)
    net = values[-1] - values[0]
    if np.mean(slope < cfg.plateau_eps) >= MONOTONE_FRACTION and net < 0:
        return report(Pattern.MONOTONE_DECREASE, crit)
    if np.mean(slope > -cfg.plateau_eps) >= MONOTONE_FRACTION and net > 0:
        return report(Pattern.MONOTONE_INCREASE, crit)
    return report(Pattern.INCONCLUSIVE, crit)


def detect(curve: LearningCurve, segment: Segment | None = None,
           cfg: DetectorConfig = DetectorConfig()) -> PatternReport:
    """Restrict, optionally smooth, fit and classify.

    Segments holding fewer than 3*(degree+1) samples are reported as
    inconclusive with the ``undersampled`` flag set; no verdict is drawn from
    them even when a fit is possible.
    """
    segment = segment or Segment.covering(curve)
    sub = restrict(curve, segment)
    n = len(sub)
    span = Segment(max(segment.t_i, sub.times[0]), min(segment.t_j, sub.times[-1]))
    flags: list[str] = []

    if n < cfg.min_samples:
        try:
            fit = polyfit.fit(sub, cfg.degree)
        except polyfit.SingularFitError:
            fit = None
        return PatternReport(Pattern.INCONCLUSIVE, None, None, None, (), fit, cfg, span,
                             n, True, ("undersampled",))

    if cfg.sg is not None:
        if n >= cfg.sg.window:
            sub = smooth(sub, cfg.sg)
        else:
            flags.append("smoothing_skipped")
    fit = polyfit.fit(sub, cfg.degree)
    rep = classify(fit, span, cfg)
    return PatternReport(rep.pattern, rep.t_s, rep.ascent, rep.descent, rep.criticals, fit, cfg,
                         span, n, False, tuple(flags))


# --- streaming advice -----------------------------------------------------

def advise(history: LearningCurve, cfg: DetectorConfig = DetectorConfig(), patience: int = 10,
           window: int | None = None) -> Advice:
    """Early-stopping advice for a growing validation history.

    ``window`` limits the analysis to the trailing evaluations (default: all).
    The function keeps no state; call it again after each evaluation.
    """
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if window is not None and window < len(history):
        history = LearningCurve(history.times[-window:], history.values[-window:],
                                history.label, history.time_unit)
    if len(history) < cfg.min_samples:
        return Advice.CONTINUE
    rep = detect(history, None, cfg)
    t_last = float(history.times[-1])

    if rep.pattern is Pattern.DOUBLE_DESCENT and rep.t_s < t_last <= rep.t_b:
        return Advice.POSSIBLE_DOUBLE_DESCENT

    if rep.pattern in (Pattern.MONOTONE_DECREASE, Pattern.PLATEAU) and len(history) > patience:
        tail_t = history.times[-(patience + 1):]
        tail_v = history.values[-(patience + 1):]
        if np.all(np.abs(np.diff(tail_v) / np.diff(tail_t)) < cfg.plateau_eps):
            return Advice.STOP_CONVERGED

    has_max = any(c.kind == "local_max" for c in rep.criticals)
    if rep.pattern is Pattern.MONOTONE_INCREASE and not has_max and len(history) > 3 * patience:
        tail_t = history.times[-3 * patience:]
        tail_v = history.values[-3 * patience:]
        slope = polyfit.evaluate(polyfit.derivative(rep.fit), tail_t, warn=False)
        if tail_v[-1] > tail_v[0] and np.all(slope > 0):
            return Advice.STOP_DIVERGED
    return Advice.CONTINUE
