"""Learning-curve data model, CSV/JSONL serialization and segment restriction."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import IO, Union

import numpy as np

TIME_UNITS = ("epoch", "step")
FORMATS = ("csv", "jsonl")

Source = Union[bytes, str, IO[bytes], IO[str]]


class CurveError(ValueError):
    """Base class for curve ingestion problems."""


class CurveParseError(CurveError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class CurveValidationError(CurveError):
    pass


@dataclass(frozen=True, eq=False)
class LearningCurve:
    """Generalization-error estimates sampled at strictly increasing times.

    Times default to epoch numbers (the epoch-to-time map is the identity).
    Arrays are stored read-only; equality is exact on times, values, label and
    unit.
    """

    times: np.ndarray
    values: np.ndarray
    label: str = ""
    time_unit: str = "epoch"

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float).reshape(-1)
        if t.shape != v.shape:
            raise CurveValidationError(f"{t.size} times but {v.size} values")
        if t.size < 2:
            raise CurveValidationError("a learning curve needs at least 2 points")
        if not np.all(np.isfinite(t)):
            raise CurveValidationError("non-finite time")
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise CurveValidationError(f"non-finite value at t={t[bad[0]]!r}")
        if np.any(t < 0):
            raise CurveValidationError("times must be >= 0")
        if np.any(np.diff(t) <= 0):
            raise CurveValidationError("times must be strictly increasing")
        if self.time_unit not in TIME_UNITS:
            raise CurveValidationError(f"time_unit must be one of {TIME_UNITS}")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, LearningCurve):
            return NotImplemented
        return (self.label == other.label and self.time_unit == other.time_unit
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))

    def with_values(self, values) -> "LearningCurve":
        return LearningCurve(self.times, values, self.label, self.time_unit)

    @classmethod
    def from_points(cls, points, label: str = "", time_unit: str = "epoch") -> "LearningCurve":
        """Build from unordered (time, value) pairs: sorts, rejects duplicates."""
        pts = list(points)
        if not pts:
            raise CurveValidationError("a learning curve needs at least 2 points")
        t = np.array([p[0] for p in pts], dtype=float)
        v = np.array([p[1] for p in pts], dtype=float)
        order = np.argsort(t, kind="stable")
        t, v = t[order], v[order]
        dup = np.flatnonzero(np.diff(t) == 0)
        if dup.size:
            raise CurveValidationError(f"duplicate time {t[dup[0]]!r}")
        return cls(t, v, label, time_unit)


@dataclass(frozen=True)
class Segment:
    t_i: float
    t_j: float

    def __post_init__(self):
        if not (math.isfinite(self.t_i) and math.isfinite(self.t_j)):
            raise ValueError("segment bounds must be finite")
        if not self.t_i < self.t_j:
            raise ValueError(f"segment needs t_i < t_j, got [{self.t_i}, {self.t_j}]")

    @classmethod
    def parse(cls, text: str) -> "Segment":
        """Parse ``"A:B"``."""
        a, sep, b = text.partition(":")
        if not sep:
            raise ValueError(f"segment must look like A:B, got {text!r}")
        return cls(float(a), float(b))

    @classmethod
    def covering(cls, curve: LearningCurve) -> "Segment":
        return cls(*curve.span)


def restrict(curve: LearningCurve, segment: Segment) -> LearningCurve:
    keep = (curve.times >= segment.t_i) & (curve.times <= segment.t_j)
    if keep.sum() < 2:
        raise CurveValidationError(
            f"segment [{segment.t_i}, {segment.t_j}] holds {int(keep.sum())} point(s); need >= 2")
    if keep.all():
        return curve
    return LearningCurve(curve.times[keep], curve.values[keep], curve.label, curve.time_unit)


# --- serialization -------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _to_float(text: str, row: int, what: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise CurveParseError(f"cannot parse {what} {text!r}", row) from None


def _finish(points, label: str, time_unit: str) -> LearningCurve:
    for t, v, row in points:
        if not math.isfinite(v):
            raise CurveValidationError(f"row {row}: non-finite value {v!r}")
        if not math.isfinite(t) or t < 0:
            raise CurveValidationError(f"row {row}: invalid time {t!r}")
    return LearningCurve.from_points([(t, v) for t, v, _ in points], label, time_unit)


def _load_csv(text: str) -> LearningCurve:
    reader = csv.reader(io.StringIO(text))
    rows = [(i, r) for i, r in enumerate(reader, start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise CurveParseError("empty input")
    time_unit = "epoch"
    first = [c.strip().lower() for c in rows[0][1]]
    if first and first[0] in ("epoch", "step", "t", "time"):
        if len(first) != 2 or first[1] not in ("value", "v"):
            raise CurveParseError(f"unexpected header {rows[0][1]!r}", rows[0][0])
        time_unit = "step" if first[0] == "step" else "epoch"
        rows = rows[1:]
    points = []
    for lineno, r in rows:
        if len(r) != 2:
            raise CurveParseError(f"expected 2 columns, got {len(r)}", lineno)
        points.append((_to_float(r[0], lineno, "time"), _to_float(r[1], lineno, "value"), lineno))
    return _finish(points, "", time_unit)


def _load_jsonl(text: str) -> LearningCurve:
    label, time_unit = "", "epoch"
    points = []
    seen_point = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CurveParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise CurveParseError("expected a JSON object", lineno)
        if "t" in obj or "v" in obj:
            if "t" not in obj or "v" not in obj:
                raise CurveParseError("point needs both 't' and 'v'", lineno)
            t, v = obj["t"], obj["v"]
            if isinstance(t, bool) or isinstance(v, bool) or not isinstance(t, (int, float)) \
                    or not isinstance(v, (int, float)):
                raise CurveParseError("'t' and 'v' must be numbers", lineno)
            points.append((float(t), float(v), lineno))
            seen_point = True
        elif not seen_point and ("label" in obj or "time_unit" in obj):
            label = str(obj.get("label", ""))
            time_unit = obj.get("time_unit", "epoch")
            if time_unit not in TIME_UNITS:
                raise CurveParseError(f"unknown time_unit {time_unit!r}", lineno)
        else:
            raise CurveParseError("unrecognized line", lineno)
    if not points:
        raise CurveParseError("no data points")
    return _finish(points, label, time_unit)


def load_curve(source: Source, format: str = "csv") -> LearningCurve:
    """Parse a curve from bytes, text or a file object.

    Rows may come in any order; they are sorted by time.  Duplicate times and
    non-finite values raise CurveValidationError, malformed rows raise
    CurveParseError carrying the row number.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    text = _read_text(source)
    return _load_csv(text) if format == "csv" else _load_jsonl(text)


def save_curve(curve: LearningCurve, format: str = "csv") -> bytes:
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    lines = []
    if format == "csv":
        lines.append(f"{curve.time_unit},value")
        lines.extend(f"{_fmt(t)},{_fmt(v)}" for t, v in zip(curve.times, curve.values))
    else:
        lines.append(json.dumps({"label": curve.label, "time_unit": curve.time_unit}))
        lines.extend(f'{{"t": {_fmt(t)}, "v": {_fmt(v)}}}' for t, v in zip(curve.times, curve.values))
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_curve_file(path, format: str | None = None) -> LearningCurve:
    path = str(path)
    fmt = format or ("jsonl" if path.endswith((".jsonl", ".json")) else "csv")
    with open(path, "rb") as fh:
        return load_curve(fh, fmt)


def write_curve_file(curve: LearningCurve, path, format: str | None = None) -> None:
    path = str(path)
    fmt = format or ("jsonl" if path.endswith((".jsonl", ".json")) else "csv")
    with open(path, "wb") as fh:
        fh.write(save_curve(curve, fmt))
