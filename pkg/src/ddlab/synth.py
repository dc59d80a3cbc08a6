"""Synthetic learning curves with a known peak, and subsampling.

The bump family is ``c + exp(-t/tau) + A * exp(-(t - t_p)**2 / (2 w**2)) + noise``:
a decaying curve with a Gaussian hump, i.e. descend, ascend, descend again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddlab.curve import CurveValidationError, LearningCurve, Segment
from ddlab.detector import DetectorConfig, Pattern, PatternReport, detect


@dataclass(frozen=True)
class BumpCurveSpec:
    decay_scale: float = 15.0
    bump_amplitude: float = 0.5
    bump_center: float = 50.0
    bump_width: float = 8.0
    floor: float = 0.0
    noise_sigma: float = 0.0
    n_points: int = 201
    t_max: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not self.decay_scale > 0 or not self.bump_width > 0:
            raise ValueError("decay_scale and bump_width must be positive")
        if self.bump_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("bump_amplitude and noise_sigma must be >= 0")
        if not 0 < self.bump_center < self.t_max:
            raise ValueError("bump_center must lie strictly inside (0, t_max)")
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")

    def true_value(self, t):
        """Noise-free curve value at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        return (self.floor + np.exp(-t / self.decay_scale)
                + self.bump_amplitude * np.exp(-(t - self.bump_center) ** 2 / (2 * self.bump_width ** 2)))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_points)


def gen_bump(spec: BumpCurveSpec, label: str = "bump") -> LearningCurve:
    t = spec.times
    v = spec.true_value(t)
    if spec.noise_sigma > 0:
        v = v + np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, t.size)
    return LearningCurve(t, v, label)


def gen_monotone(tau: float = 20.0, c: float = 0.0, sigma: float = 0.0, n_points: int = 200,
                 t_max: float = 199.0, seed: int = 0) -> LearningCurve:
    """Exponential decay ``c + exp(-t/tau)`` plus optional Gaussian noise."""
    spec = BumpCurveSpec(decay_scale=tau, bump_amplitude=0.0, bump_center=t_max / 2, floor=c,
                         noise_sigma=sigma, n_points=n_points, t_max=t_max, seed=seed)
    return gen_bump(spec, label="monotone")


def subsample(curve: LearningCurve, stride: int, offset: int = 0) -> LearningCurve:
    """Keep points offset, offset+stride, ...; times are preserved."""
    if stride < 1 or offset < 0:
        raise ValueError("need stride >= 1 and offset >= 0")
    t = curve.times[offset::stride]
    if t.size < 2:
        raise CurveValidationError(f"stride {stride}, offset {offset} leaves {t.size} point(s)")
    if stride == 1 and offset == 0:
        return curve
    return LearningCurve(t, curve.values[offset::stride], curve.label, curve.time_unit)


@dataclass(frozen=True)
class AliasScan:
    rows: tuple[tuple[int, PatternReport], ...]
    baseline: Pattern | None  # verdict at stride 1, when scanned
    departure_stride: int | None  # smallest stride whose verdict differs from stride 1

    def table(self) -> dict[int, str]:
        return {s: r.pattern.value for s, r in self.rows}


def aliasing_scan(curve: LearningCurve, cfg: DetectorConfig = DetectorConfig(),
                  strides=(1, 5, 30), segment: Segment | None = None) -> AliasScan:
    """Run ``detect`` on the curve subsampled at each stride."""
    rows = []
    for s in sorted(set(int(s) for s in strides)):
        sub = subsample(curve, s)
        rows.append((s, detect(sub, segment, cfg)))
    ref = detect(curve, segment, cfg) if rows[0][0] != 1 else rows[0][1]
    departure = next((s for s, r in rows if r.pattern is not ref.pattern), None)
    return AliasScan(tuple(rows), ref.pattern, departure)
