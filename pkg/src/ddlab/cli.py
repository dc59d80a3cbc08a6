"""``ddlab`` command line.

Curves are read from a file or ``-`` (stdin) in CSV or JSONL; the format is
taken from ``--format`` or the file extension.
"""

from __future__ import annotations

import json
import logging
import sys
import warnings
from pathlib import Path

import click
import numpy as np

from ddlab import datagen, lab, nn, polyfit
from ddlab.curve import CurveError, LearningCurve, Segment, load_curve, save_curve
from ddlab.detector import DetectorConfig, detect
from ddlab.smoothing import SGConfig, smooth
from ddlab.synth import BumpCurveSpec, aliasing_scan, gen_bump, gen_monotone

FORMAT = click.Choice(["csv", "jsonl"])


def _fmt_for(path: str, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "jsonl" if str(path).endswith((".jsonl", ".json")) else "csv"


def _read(path: str, fmt: str | None) -> LearningCurve:
    try:
        if path == "-":
            return load_curve(sys.stdin.buffer.read(), _fmt_for(path, fmt))
        with open(path, "rb") as fh:
            return load_curve(fh, _fmt_for(path, fmt))
    except (OSError, CurveError) as exc:
        raise click.ClickException(str(exc)) from None


def _write_bytes(path: str, data: bytes) -> None:
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _write_curve(curve: LearningCurve, path: str, fmt: str | None) -> None:
    _write_bytes(path, save_curve(curve, _fmt_for(path, fmt)))


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}") from None


def _segment(text: str | None) -> Segment | None:
    if not text:
        return None
    try:
        return Segment.parse(text)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--segment") from None


def _detector_cfg(degree, sg_window, sg_order, **extra) -> DetectorConfig:
    sg = None
    if sg_window is not None:
        sg = SGConfig(sg_window, 3 if sg_order is None else sg_order)
    try:
        return DetectorConfig(degree=degree, sg=sg, **extra)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Epoch-wise double-descent detection and a small training lab."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("smooth")
@click.argument("input", default="-")
@click.option("-o", "--output", default="-", show_default=True)
@click.option("--window", default=11, show_default=True)
@click.option("--order", default=3, show_default=True)
@click.option("--format", "fmt", type=FORMAT, default=None)
def smooth_cmd(input, output, window, order, fmt):
    """Savitzky-Golay smoothing of a uniformly sampled curve."""
    curve = _read(input, fmt)
    try:
        out = smooth(curve, SGConfig(window, order))
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    _write_curve(out, output, fmt)


@main.command("fit")
@click.argument("input", default="-")
@click.option("--degree", "-k", default=5, show_default=True)
@click.option("--format", "fmt", type=FORMAT, default=None)
def fit_cmd(input, degree, fmt):
    """Least-squares polynomial fit; prints the fit as JSON."""
    curve = _read(input, fmt)
    try:
        f = polyfit.fit(curve, degree)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps(f.to_dict()))


@main.command("detect")
@click.argument("input", default="-")
@click.option("--degree", "-k", default=5, show_default=True)
@click.option("--sg-window", type=int, default=None, help="Smooth before fitting.")
@click.option("--sg-order", type=int, default=None)
@click.option("--segment", default=None, help="A:B time range to analyse.")
@click.option("--min-prominence", type=float, default=DetectorConfig.min_prominence, show_default=True)
@click.option("--min-width", type=float, default=DetectorConfig.min_segment_width, show_default=True)
@click.option("--emit-fit-samples", type=int, default=None,
              help="Write N samples of the fit and its derivative as CSV.")
@click.option("--samples-out", default="fit_samples.csv", show_default=True)
@click.option("--format", "fmt", type=FORMAT, default=None)
def detect_cmd(input, degree, sg_window, sg_order, segment, min_prominence, min_width,
               emit_fit_samples, samples_out, fmt):
    """Classify a validation curve; JSON report on stdout, verdict line on stderr."""
    curve = _read(input, fmt)
    cfg = _detector_cfg(degree, sg_window, sg_order, min_prominence=min_prominence,
                        min_segment_width=min_width)
    try:
        rep = detect(curve, _segment(segment), cfg)
    except (ValueError, CurveError) as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(json.dumps(rep.to_dict(), indent=2))
    click.echo(rep.verdict(), err=True)
    if emit_fit_samples:
        if rep.fit is None or rep.fit.degree < 1:
            raise click.ClickException("no fit available to sample")
        if emit_fit_samples < 2:
            raise click.BadParameter("need at least 2 samples", param_hint="--emit-fit-samples")
        t = np.linspace(rep.segment.t_i, rep.segment.t_j, emit_fit_samples)
        v = polyfit.evaluate(rep.fit, t, warn=False)
        dv = polyfit.evaluate(polyfit.derivative(rep.fit), t, warn=False)
        rows = ["t,fit,derivative"] + [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(t, v, dv)]
        _write_bytes(samples_out, ("\n".join(rows) + "\n").encode())


@main.group("synth")
def synth_group():
    """Synthetic learning curves."""


@synth_group.command("bump")
@click.option("-o", "--output", default="-", show_default=True)
@click.option("--decay", default=15.0, show_default=True)
@click.option("--amplitude", default=0.5, show_default=True)
@click.option("--center", default=50.0, show_default=True)
@click.option("--width", default=8.0, show_default=True)
@click.option("--floor", default=0.0, show_default=True)
@click.option("--sigma", default=0.0, show_default=True)
@click.option("--n-points", default=201, show_default=True)
@click.option("--t-max", default=100.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "fmt", type=FORMAT, default=None)
def synth_bump(output, decay, amplitude, center, width, floor, sigma, n_points, t_max, seed, fmt):
    """Decaying curve with a Gaussian hump."""
    try:
        spec = BumpCurveSpec(decay, amplitude, center, width, floor, sigma, n_points, t_max, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    _write_curve(gen_bump(spec), output, fmt)


@synth_group.command("monotone")
@click.option("-o", "--output", default="-", show_default=True)
@click.option("--tau", default=20.0, show_default=True)
@click.option("--floor", default=0.0, show_default=True)
@click.option("--sigma", default=0.0, show_default=True)
@click.option("--n-points", default=200, show_default=True)
@click.option("--t-max", default=199.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--format", "fmt", type=FORMAT, default=None)
def synth_monotone(output, tau, floor, sigma, n_points, t_max, seed, fmt):
    """Exponential decay plus optional noise."""
    try:
        curve = gen_monotone(tau, floor, sigma, n_points, t_max, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    _write_curve(curve, output, fmt)


@main.command("alias")
@click.argument("input", default="-")
@click.option("--strides", default="1,5,30", show_default=True)
@click.option("--degree", "-k", default=5, show_default=True)
@click.option("--segment", default=None)
@click.option("--format", "fmt", type=FORMAT, default=None)
def alias_cmd(input, strides, degree, segment, fmt):
    """Detect on the curve subsampled at each stride."""
    curve = _read(input, fmt)
    try:
        scan = aliasing_scan(curve, _detector_cfg(degree, None, None), _ints(strides), _segment(segment))
    except (ValueError, CurveError) as exc:
        raise click.ClickException(str(exc)) from None
    for stride, rep in scan.rows:
        click.echo(f"stride {stride:>4}: {rep.verdict()}")
    if scan.departure_stride is not None:
        click.echo(f"verdict departs from stride 1 at stride {scan.departure_stride}")


@main.command("datagen")
@click.option("-o", "--output", default="-", show_default=True)
@click.option("--n", default=300, show_default=True)
@click.option("--d", default=20, show_default=True)
@click.option("--sep", default=4.0, show_default=True)
@click.option("--noise", default=0.1, show_default=True, help="Swap-noise fraction.")
@click.option("--seed", default=0, show_default=True)
@click.option("--direction-seed", type=int, default=None,
              help="Seed of the class-mean direction; share it between train and val files.")
def datagen_cmd(output, n, d, sep, noise, seed, direction_seed):
    """Two-Gaussian classification set with swap noise, as CSV."""
    try:
        direction = datagen.random_direction(d, seed if direction_seed is None else direction_seed)
        ds = datagen.gen_gaussian_pair(n, d, sep, seed, direction)
        if noise > 0:
            ds = datagen.inject_swap_noise(ds, noise, seed + 1)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    _write_bytes(output, ds.to_csv().encode())


@main.command("train")
@click.option("--train", "train_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--val", "val_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--optimizer", type=click.Choice(["adam", "adadelta", "sgd"]), default="adam", show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--epochs", default=200, show_default=True)
@click.option("--eval-every", default=1, show_default=True)
@click.option("--batch-size", type=int, default=None, help="Default: full batch.")
@click.option("--hidden", default="64,128", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", default=".", show_default=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=FORMAT, default="csv", show_default=True)
def train_cmd(train_path, val_path, optimizer, lr, epochs, eval_every, batch_size, hidden, seed,
              out_dir, fmt):
    """Train an MLP and write train/val loss curves."""
    try:
        tr = datagen.Dataset.from_csv(Path(train_path).read_text())
        va = datagen.Dataset.from_csv(Path(val_path).read_text())
        model = nn.init_mlp([tr.X.shape[1], *_ints(hidden), 1], seed)
        opt = nn.OptimizerConfig(optimizer, lr, {}, batch_size)
        res = nn.train(model, tr, va, opt, epochs, eval_every, seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if res.epochs.size >= 2:
        for name, curve in (("train", res.train_curve()), ("val", res.val_curve())):
            (out / f"{name}.{fmt}").write_bytes(save_curve(curve, fmt))
    else:
        click.echo(f"only {res.epochs.size} evaluation(s) recorded; no curve files written", err=True)
    click.echo(f"{res.model.n_params} parameters, {res.epochs.size} evaluations"
               + (", halted (diverged)" if res.halted else ""), err=True)


@main.command("sweep")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None, help="Override the spec's output directory.")
@click.option("--jobs", type=int, default=None, help="Worker processes (default from spec).")
def sweep_cmd(spec_path, out, jobs):
    """Run an experiment sweep described by a JSON spec, then summarize."""
    try:
        raw = json.loads(Path(spec_path).read_text())
        if out is not None:
            raw["out"] = out
        if jobs is not None:
            raw["jobs"] = jobs
        spec = lab.ExperimentSpec.from_dict(raw)
    except (ValueError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"invalid spec: {exc}") from None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", polyfit.ExtrapolationWarning)
        result = lab.run_sweep(spec)
    failed = [r for r in result.records if r.error]
    for r in failed:
        click.echo(f"run {r.cell}/{r.seed} failed: {r.error}", err=True)
    click.echo(lab.report(spec.out))


@main.command("report")
@click.argument("results_dir", type=click.Path(file_okay=False))
def report_cmd(results_dir):
    """Rebuild summary.md / summary.csv from a results directory."""
    click.echo(lab.report(results_dir))


if __name__ == "__main__":
    main()
