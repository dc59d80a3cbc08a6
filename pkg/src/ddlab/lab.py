"""Desk-scale experiment runner: datagen -> nn.train -> detect, persisted to disk.

Run layout::

    <out>/<scenario>/spec.json
    <out>/<scenario>/<cell>/<seed>/{train.csv,val.csv,report.json,fit.csv}
    <out>/summary.md, <out>/summary.csv

Every report.json embeds the spec, the run metadata and an environment stamp,
so ``report`` can rebuild the summary from disk alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import sys
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ddlab import datagen, nn, polyfit
from ddlab.curve import LearningCurve, Segment, read_curve_file, write_curve_file
from ddlab.detector import DetectorConfig, Pattern, PatternReport, detect
from ddlab.synth import subsample

log = logging.getLogger(__name__)

SCENARIOS = ("noise_matrix", "size_sweep", "lr_sweep", "alias_sweep")
NOISE_CELLS = (("clean", "clean"), ("noisy", "noisy"), ("noisy", "clean"), ("clean", "noisy"))
CONVERGING = {Pattern.MONOTONE_DECREASE, Pattern.PLATEAU}
NOT_CONVERGED = {Pattern.MONOTONE_INCREASE, Pattern.INCONCLUSIVE}


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    scenario: str
    seeds: list
    out: str = "runs"
    n_train: int = 300
    n_val: int = 300
    d: int = 20
    separation: float = 4.0
    noise_fraction: float = 0.1
    train_noisy: bool = True  # noise placement outside the noise matrix
    val_noisy: bool = True
    sizes: list = field(default_factory=lambda: [300, 3000])
    hidden: list = field(default_factory=lambda: [64, 128])
    optimizer: str = "adam"
    lr: float = 1e-4
    hyper: dict = field(default_factory=dict)
    batch_size: int | None = None
    lr_grid: dict = field(default_factory=lambda: {"adam": [1e-2, 1e-3, 1e-4, 1e-5],
                                                   "adadelta": [1.0, 1e-1, 1e-2, 1e-3]})
    epochs: int = 2000
    eval_every: int = 1
    strides: list = field(default_factory=lambda: [1, 30])
    segment: list | None = None
    halt_factor: float | None = 10.0
    halt_patience: int = 50
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.detector, dict):
            self.detector = DetectorConfig.from_dict(self.detector)
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise SpecError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not self.seeds:
            raise SpecError("seeds must be a nonempty list")
        if self.epochs < 1:
            raise SpecError("epochs must be >= 1")
        if self.eval_every < 1:
            raise SpecError("eval_every must be >= 1")
        lrs = [self.lr] + [lr for grid in self.lr_grid.values() for lr in grid]
        if any(not lr > 0 for lr in lrs):
            raise SpecError("learning rates must be > 0")
        if self.scenario == "lr_sweep" and not any(self.lr_grid.values()):
            raise SpecError("lr_sweep needs a nonempty lr_grid")
        if self.scenario == "size_sweep" and not self.sizes:
            raise SpecError("size_sweep needs at least one size")
        if self.scenario == "alias_sweep" and (not self.strides or min(self.strides) < 1):
            raise SpecError("alias_sweep needs strides >= 1")
        if self.segment is not None:
            Segment(*self.segment)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown spec fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise SpecError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    cell: str
    seed: int
    report: PatternReport | None
    halted: bool = False
    error: str | None = None
    path: str | None = None

    @property
    def pattern(self) -> Pattern | None:
        return None if self.report is None else self.report.pattern


@dataclass(frozen=True)
class SweepResult:
    scenario: str
    records: tuple[RunRecord, ...]
    out_dir: str

    def table(self) -> dict[str, dict[int, str]]:
        """cell -> seed -> pattern name ('error' for failed runs)."""
        out: dict[str, dict[int, str]] = defaultdict(dict)
        for r in self.records:
            out[r.cell][r.seed] = r.pattern.value if r.pattern else "error"
        return dict(out)

    def frequency(self, cell: str, pattern: Pattern = Pattern.DOUBLE_DESCENT) -> float:
        rows = [r for r in self.records if r.cell == cell]
        return sum(r.pattern is pattern for r in rows) / len(rows) if rows else float("nan")


def environment_stamp() -> dict:
    return {"python": sys.version.split()[0], "numpy": np.__version__,
            "platform": platform.platform()}


# --- data + training ------------------------------------------------------

def _streams(seed: int) -> dict:
    names = ("direction", "train", "val", "train_noise", "val_noise", "init", "shuffle")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def make_datasets(spec: ExperimentSpec, seed: int, n_train: int | None = None,
                  train_noisy: bool | None = None, val_noisy: bool | None = None):
    """Train/val sets for one seed.  Clean and noisy variants share the base data."""
    s = _streams(seed)
    n_train = spec.n_train if n_train is None else n_train
    direction = datagen.random_direction(spec.d, s["direction"])
    tr = datagen.gen_gaussian_pair(n_train, spec.d, spec.separation, s["train"], direction)
    va = datagen.gen_gaussian_pair(spec.n_val, spec.d, spec.separation, s["val"], direction)
    if spec.train_noisy if train_noisy is None else train_noisy:
        tr = datagen.inject_swap_noise(tr, spec.noise_fraction, s["train_noise"])
    if spec.val_noisy if val_noisy is None else val_noisy:
        va = datagen.inject_swap_noise(va, spec.noise_fraction, s["val_noise"])
    return tr, va


def _init_seed(seed: int) -> int:
    return int(_streams(seed)["init"].generate_state(1)[0])


def _shuffle_seed(seed: int) -> int:
    return int(_streams(seed)["shuffle"].generate_state(1)[0])


def train_run(spec: ExperimentSpec, seed: int, train_set, val_set, optimizer: str | None = None,
              lr: float | None = None, eval_every: int | None = None) -> nn.TrainResult:
    dims = [spec.d, *spec.hidden, 1]
    model = nn.init_mlp(dims, _init_seed(seed))
    name = optimizer or spec.optimizer
    hyper = spec.hyper if name == spec.optimizer else {}
    opt = nn.OptimizerConfig(name, spec.lr if lr is None else lr, dict(hyper), spec.batch_size)
    return nn.train(model, train_set, val_set, opt, spec.epochs,
                    spec.eval_every if eval_every is None else eval_every,
                    _shuffle_seed(seed), spec.halt_factor, spec.halt_patience)


def analyse(spec: ExperimentSpec, val: LearningCurve | None, halted: bool) -> PatternReport:
    cfg = spec.detector
    segment = Segment(*spec.segment) if spec.segment else None
    if val is None:
        rep = PatternReport(Pattern.INCONCLUSIVE, None, None, None, (), None, cfg, None, 0,
                            True, ("too_few_points",))
    else:
        rep = detect(val, segment, cfg)
    if halted:
        # divergent runs are labelled as increasing regardless of the partial fit
        rep = PatternReport(Pattern.MONOTONE_INCREASE, None, None, None, rep.criticals, rep.fit,
                            cfg, rep.segment, rep.n_samples, rep.undersampled,
                            rep.flags + ("halted_divergence",))
    return rep


def _curve_or_none(t, v, label):
    return LearningCurve(t, v, label) if len(t) >= 2 else None


def _fit_samples(curve: LearningCurve, rep: PatternReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "value", "fit", "fit_derivative"])
    fit = rep.fit
    dfit = polyfit.derivative(fit) if fit is not None and fit.degree >= 1 else None
    for t, v in zip(curve.times, curve.values):
        f = polyfit.evaluate(fit, t, warn=False) if fit is not None else ""
        df = polyfit.evaluate(dfit, t, warn=False) if dfit is not None else ""
        w.writerow([format(t, ".17g"), format(v, ".17g"),
                    format(f, ".17g") if f != "" else "", format(df, ".17g") if df != "" else ""])
    return buf.getvalue()


def _persist(run_dir: Path, spec: ExperimentSpec, scenario: str, cell: str, seed: int,
             train: LearningCurve | None, val: LearningCurve | None, rep: PatternReport,
             meta: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    if train is not None:
        write_curve_file(train, run_dir / "train.csv")
    if val is not None:
        write_curve_file(val, run_dir / "val.csv")
        (run_dir / "fit.csv").write_text(_fit_samples(val, rep))
    doc = {"scenario": scenario, "cell": cell, "seed": seed, "report": rep.to_dict(),
           "run": meta, "spec": spec.to_dict(), "environment": environment_stamp()}
    (run_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


# --- per-cell jobs ----------------------------------------------------------

def _job(args) -> list[RunRecord]:
    kind, spec, scenario, cell, seed, params = args
    out = Path(spec.out) / scenario
    try:
        if kind == "alias":
            return _alias_job(spec, scenario, seed, out)
        tr, va = make_datasets(spec, seed, **params.get("data", {}))
        res = train_run(spec, seed, tr, va, **params.get("train", {}))
        train = _curve_or_none(res.epochs, res.train_loss, "train")
        val = _curve_or_none(res.epochs, res.val_loss, "val")
        rep = analyse(spec, val, res.halted)
        meta = {"halted": res.halted, "initial_val_loss": res.initial_val_loss,
                "n_params": res.model.n_params, "n_train": len(tr), "n_val": len(va),
                "train_noisy": tr.n_noisy > 0, "val_noisy": va.n_noisy > 0,
                "epochs_recorded": int(res.epochs.size), **params}
        run_dir = out / cell / str(seed)
        _persist(run_dir, spec, scenario, cell, seed, train, val, rep, meta)
        return [RunRecord(scenario, cell, seed, rep, res.halted, None, str(run_dir))]
    except Exception as exc:  # one failed cell must not stop the sweep
        log.exception("run %s/%s/%s failed", scenario, cell, seed)
        return [RunRecord(scenario, cell, seed, None, False, f"{type(exc).__name__}: {exc}")]


def _alias_job(spec: ExperimentSpec, scenario: str, seed: int, out: Path) -> list[RunRecord]:
    tr, va = make_datasets(spec, seed)
    # one run evaluated every epoch; coarser curves are exact subsamples of it
    res = train_run(spec, seed, tr, va, eval_every=1)
    full_train = _curve_or_none(res.epochs, res.train_loss, "train")
    full_val = _curve_or_none(res.epochs, res.val_loss, "val")
    records = []
    for stride in sorted(set(spec.strides)):
        cell = f"stride{stride}"
        run_dir = out / cell / str(seed)
        meta = {"halted": res.halted, "initial_val_loss": res.initial_val_loss, "stride": stride,
                "n_params": res.model.n_params}
        try:
            val = subsample(full_val, stride) if full_val is not None else None
            train = subsample(full_train, stride) if full_train is not None else None
        except ValueError:
            val = train = None
        rep = analyse(spec, val, res.halted)
        _persist(run_dir, spec, scenario, cell, seed, train, val, rep, meta)
        records.append(RunRecord(scenario, cell, seed, rep, res.halted, None, str(run_dir)))
    return records


def _fmt_lr(lr: float) -> str:
    return format(lr, "g")


def _jobs_for(spec: ExperimentSpec):
    sc = spec.scenario
    for seed in spec.seeds:
        if sc == "noise_matrix":
            for t, v in NOISE_CELLS:
                yield ("train", spec, sc, f"train_{t}__val_{v}", seed,
                       {"data": {"train_noisy": t == "noisy", "val_noisy": v == "noisy"}})
        elif sc == "size_sweep":
            for n in spec.sizes:
                yield ("train", spec, sc, f"n{n}", seed, {"data": {"n_train": n}})
        elif sc == "lr_sweep":
            for name, grid in spec.lr_grid.items():
                for lr in sorted(grid, reverse=True):
                    yield ("train", spec, sc, f"{name}__lr{_fmt_lr(lr)}", seed,
                           {"train": {"optimizer": name, "lr": lr}})
        else:
            yield ("alias", spec, sc, "", seed, {})


def run_sweep(spec: ExperimentSpec) -> SweepResult:
    spec.validate()
    out = Path(spec.out) / spec.scenario
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(
        {"spec": spec.to_dict(), "environment": environment_stamp()}, indent=2, sort_keys=True))
    jobs = list(_jobs_for(spec))
    if spec.jobs > 1:
        with ProcessPoolExecutor(spec.jobs) as pool:
            batches = list(pool.map(_job, jobs))
    else:
        batches = [_job(j) for j in jobs]
    records = tuple(r for batch in batches for r in batch)
    return SweepResult(spec.scenario, records, str(out))


def _require(spec: ExperimentSpec, scenario: str) -> None:
    if spec.scenario != scenario:
        raise SpecError(f"expected a {scenario} spec, got {spec.scenario}")


def run_noise_matrix(spec: ExperimentSpec) -> SweepResult:
    _require(spec, "noise_matrix")
    return run_sweep(spec)


def run_size_sweep(spec: ExperimentSpec) -> SweepResult:
    _require(spec, "size_sweep")
    return run_sweep(spec)


def run_lr_sweep(spec: ExperimentSpec) -> SweepResult:
    _require(spec, "lr_sweep")
    return run_sweep(spec)


def run_alias_sweep(spec: ExperimentSpec) -> SweepResult:
    _require(spec, "alias_sweep")
    return run_sweep(spec)


# --- reporting ---------------------------------------------------------------

def load_records(results_dir) -> tuple[list[RunRecord], list[str]]:
    """Read every report.json under ``results_dir``; unreadable ones are returned as errors."""
    root = Path(results_dir)
    records, errors = [], []
    for path in sorted(root.rglob("report.json")):
        try:
            doc = json.loads(path.read_text())
            rep = PatternReport.from_dict(doc["report"])
            records.append(RunRecord(doc["scenario"], doc["cell"], int(doc["seed"]), rep,
                                     bool(doc.get("run", {}).get("halted", False)), None,
                                     str(path.parent)))
        except Exception as exc:
            errors.append(f"{path.relative_to(root)}: {type(exc).__name__}: {exc}")
    return records, errors


def lr_structure(records: list[RunRecord]) -> dict:
    """Check the high-LR / converging / low-LR-double-descent ordering per optimizer and seed.

    Returns ``{optimizer: {"seeds": {seed: {...}}, "majority": bool,
    "upper_boundary_seen": int, "lower_boundary_seen": int, "n_seeds": int}}``.
    """
    by = defaultdict(lambda: defaultdict(list))
    for r in records:
        if r.scenario != "lr_sweep" or r.pattern is None:
            continue
        name, _, lr = r.cell.partition("__lr")
        by[name][r.seed].append((float(lr), r.pattern))
    out = {}
    for name, seeds in sorted(by.items()):
        per_seed = {}
        for seed, rows in sorted(seeds.items()):
            rows.sort(key=lambda x: -x[0])  # high LR first
            pats = [p for _, p in rows]
            full = any(pats[i] in NOT_CONVERGED and pats[j] in CONVERGING and pats[k] is Pattern.DOUBLE_DESCENT
                       for i in range(len(pats)) for j in range(i + 1, len(pats))
                       for k in range(j + 1, len(pats)))
            upper = any(pats[i] in NOT_CONVERGED and pats[j] in CONVERGING
                        for i in range(len(pats)) for j in range(i + 1, len(pats)))
            lower = any(pats[j] in CONVERGING and pats[k] is Pattern.DOUBLE_DESCENT
                        for j in range(len(pats)) for k in range(j + 1, len(pats)))
            per_seed[seed] = {"verdicts": {_fmt_lr(lr): p.value for lr, p in rows},
                              "structure": full, "upper_boundary": upper, "lower_boundary": lower}
        n = len(per_seed)
        out[name] = {
            "seeds": per_seed, "n_seeds": n,
            "majority": sum(v["structure"] for v in per_seed.values()) * 2 > n,
            "upper_boundary_seen": sum(v["upper_boundary"] for v in per_seed.values()),
            "lower_boundary_seen": sum(v["lower_boundary"] for v in per_seed.values()),
        }
    return out


def report(results_dir) -> str:
    """Aggregate verdicts into ``summary.md`` and ``summary.csv`` and return the markdown."""
    root = Path(results_dir)
    records, errors = load_records(root) if root.exists() else ([], [])
    lines = ["# Sweep summary", ""]
    rows_csv = [["scenario", "cell", "runs", "double_descent_freq", *[p.value for p in Pattern]]]
    if not records:
        log.warning("no run reports found under %s", root)
        lines += ["_No runs found._", ""]
    groups = defaultdict(list)
    for r in records:
        groups[(r.scenario, r.cell)].append(r)
    for scenario in sorted({s for s, _ in groups}):
        lines += [f"## {scenario}", "",
                  "| cell | runs | double descent | " + " | ".join(p.value for p in Pattern if p is not Pattern.DOUBLE_DESCENT) + " |",
                  "|---" * (len(Pattern) + 2) + "|"]
        for (sc, cell), recs in sorted(groups.items()):
            if sc != scenario:
                continue
            counts = Counter(r.pattern for r in recs)
            n = len(recs)
            dd = counts[Pattern.DOUBLE_DESCENT]
            lines.append(f"| {cell} | {n} | {dd}/{n} ({dd / n:.0%}) | "
                         + " | ".join(str(counts[p]) for p in Pattern if p is not Pattern.DOUBLE_DESCENT) + " |")
            rows_csv.append([scenario, cell, n, f"{dd / n:.6g}", *[counts[p] for p in Pattern]])
        lines.append("")
        if scenario == "lr_sweep":
            lines += _lr_section(lr_structure(records))
    if errors:
        lines += ["## Errors", ""] + [f"- {e}" for e in errors] + [""]
    text = "\n".join(lines)
    root.mkdir(parents=True, exist_ok=True)
    (root / "summary.md").write_text(text)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows_csv)
    (root / "summary.csv").write_text(buf.getvalue())
    return text


def _lr_section(struct: dict) -> list[str]:
    lines = ["### Learning-rate structure", "",
             "Looked for, per seed (LR decreasing): a diverging or non-converged LR, then a "
             "converging LR without double descent, then a double-descent LR.", ""]
    for name, s in struct.items():
        n = s["n_seeds"]
        found = sum(v["structure"] for v in s["seeds"].values())
        lines.append(f"- **{name}**: full structure in {found}/{n} seeds "
                     f"({'majority' if s['majority'] else 'NOT a majority'}).")
        if s["upper_boundary_seen"] == 0:
            lines.append(f"  - upper boundary NOT observed: no seed shows a diverging/non-converged LR "
                         f"above a converging one.")
        else:
            lines.append(f"  - upper boundary (diverging -> converging) observed in {s['upper_boundary_seen']}/{n} seeds.")
        if s["lower_boundary_seen"] == 0:
            lines.append(f"  - lower boundary NOT observed: no seed shows double descent below a converging LR.")
        else:
            lines.append(f"  - lower boundary (converging -> double descent) observed in {s['lower_boundary_seen']}/{n} seeds.")
        for seed, v in s["seeds"].items():
            verdicts = ", ".join(f"{lr}: {p}" for lr, p in v["verdicts"].items())
            missing = [b for b in ("upper", "lower") if not v[f"{b}_boundary"]]
            status = "full structure" if v["structure"] else (
                f"missing {' and '.join(missing)} boundary" if missing else "boundaries not nested")
            lines.append(f"  - seed {seed} ({status}): {verdicts}")
    lines.append("")
    return lines


def read_run_curves(run_dir) -> tuple[LearningCurve | None, LearningCurve | None]:
    run_dir = Path(run_dir)
    tr = read_curve_file(run_dir / "train.csv") if (run_dir / "train.csv").exists() else None
    va = read_curve_file(run_dir / "val.csv") if (run_dir / "val.csv").exists() else None
    return tr, va
