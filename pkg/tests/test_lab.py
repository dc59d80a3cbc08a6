import json

import numpy as np
import pytest

from ddlab import lab
from ddlab.curve import read_curve_file
from ddlab.detector import DetectorConfig, Pattern, PatternReport
from ddlab.synth import subsample


def tiny(tmp_path, scenario_name, **kw):
    base = dict(scenario=scenario_name, seeds=[0, 1], out=str(tmp_path / "runs"), n_train=40, n_val=40,
                d=3, hidden=[8], epochs=40, lr=1e-2, strides=[1, 5],
                lr_grid={"adam": [1e-1, 1e-3]}, sizes=[40, 80],
                detector=DetectorConfig(degree=3))
    base.update(kw)
    return lab.ExperimentSpec(**base)


@pytest.mark.parametrize("kw", [dict(seeds=[]), dict(epochs=0), dict(lr_grid={"adam": [0.0]}),
                                dict(scenario="bogus"), dict(segment=[5, 5])])
def test_spec_validation(tmp_path, kw):
    with pytest.raises(ValueError):
        tiny(tmp_path, "noise_matrix", **kw)


def test_spec_json_round_trip(tmp_path):
    spec = tiny(tmp_path, "lr_sweep")
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    back = lab.ExperimentSpec.load(path)
    assert back.to_dict() == spec.to_dict()
    with pytest.raises(lab.SpecError):
        lab.ExperimentSpec.from_dict({"scenario": "lr_sweep", "seeds": [0], "typo": 1})


def test_noise_matrix_layout_and_cells(tmp_path):
    spec = tiny(tmp_path, "noise_matrix")
    res = lab.run_noise_matrix(spec)
    table = res.table()
    assert set(table) == {"train_clean__val_clean", "train_noisy__val_noisy",
                          "train_noisy__val_clean", "train_clean__val_noisy"}
    run = tmp_path / "runs" / "noise_matrix" / "train_noisy__val_clean" / "1"
    for name in ("train.csv", "val.csv", "report.json", "fit.csv"):
        assert (run / name).exists()
    doc = json.loads((run / "report.json").read_text())
    assert doc["run"]["train_noisy"] and not doc["run"]["val_noisy"]
    assert doc["spec"]["scenario"] == "noise_matrix"
    assert "numpy" in doc["environment"]
    PatternReport.from_dict(doc["report"])


def test_wrong_runner_rejected(tmp_path):
    with pytest.raises(lab.SpecError):
        lab.run_size_sweep(tiny(tmp_path, "noise_matrix"))


def test_size_sweep_single_size(tmp_path):
    res = lab.run_size_sweep(tiny(tmp_path, "size_sweep", sizes=[40]))
    assert list(res.table()) == ["n40"]


def test_lr_sweep_single_cell(tmp_path):
    res = lab.run_lr_sweep(tiny(tmp_path, "lr_sweep", lr_grid={"adam": [1e-3]}, seeds=[0]))
    assert res.table() == {"adam__lr0.001": {0: res.records[0].pattern.value}}


def test_alias_sweep_curves_are_exact_subsamples(tmp_path):
    res = lab.run_alias_sweep(tiny(tmp_path, "alias_sweep", strides=[1, 5]))
    root = tmp_path / "runs" / "alias_sweep"
    for seed in (0, 1):
        full = read_curve_file(root / "stride1" / str(seed) / "val.csv")
        coarse = read_curve_file(root / "stride5" / str(seed) / "val.csv")
        expected = subsample(full, 5)
        assert np.array_equal(coarse.times, expected.times)
        assert np.array_equal(coarse.values, expected.values)
    assert {r.cell for r in res.records} == {"stride1", "stride5"}


def test_divergent_runs_labelled_increasing(tmp_path):
    spec = tiny(tmp_path, "lr_sweep", optimizer="sgd", lr_grid={"sgd": [1e4]}, seeds=[0],
                halt_patience=3, epochs=200, separation=8.0)
    res = lab.run_lr_sweep(spec)
    (rec,) = res.records
    assert rec.halted
    assert rec.pattern is Pattern.MONOTONE_INCREASE
    assert "halted_divergence" in rec.report.flags


def test_sweeps_are_deterministic(tmp_path):
    a = lab.run_sweep(tiny(tmp_path / "a", "noise_matrix"))
    b = lab.run_sweep(tiny(tmp_path / "b", "noise_matrix"))
    assert a.table() == b.table()
    for ra, rb in zip(a.records, b.records):
        va = read_curve_file(f"{ra.path}/val.csv")
        vb = read_curve_file(f"{rb.path}/val.csv")
        assert np.array_equal(va.values, vb.values)


def test_failed_cell_does_not_stop_sweep(tmp_path, monkeypatch):
    real = lab.train_run

    def flaky(spec, seed, *a, **k):
        if seed == 1:
            raise RuntimeError("boom")
        return real(spec, seed, *a, **k)

    monkeypatch.setattr(lab, "train_run", flaky)
    res = lab.run_sweep(tiny(tmp_path, "size_sweep", sizes=[40]))
    errors = [r for r in res.records if r.error]
    assert len(errors) == 1 and "boom" in errors[0].error
    assert res.table()["n40"][1] == "error"


def test_report_summary(tmp_path):
    lab.run_sweep(tiny(tmp_path, "noise_matrix"))
    text = lab.report(tmp_path / "runs")
    assert text.count("| train_") == 4
    assert (tmp_path / "runs" / "summary.md").exists()
    rows = (tmp_path / "runs" / "summary.csv").read_text().splitlines()
    assert rows[0].startswith("scenario,cell,runs,double_descent_freq")
    assert len(rows) == 5


def test_report_empty_directory(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    text = lab.report(tmp_path / "empty")
    assert "No runs found" in text
    assert any("no run reports" in r.message for r in caplog.records)


def test_report_lists_corrupt_file(tmp_path):
    lab.run_sweep(tiny(tmp_path, "size_sweep", sizes=[40]))
    bad = tmp_path / "runs" / "size_sweep" / "n40" / "0" / "report.json"
    bad.write_text("{not json")
    text = lab.report(tmp_path / "runs")
    assert "## Errors" in text and "n40/0/report.json" in text
    assert "| n40 | 1 |" in text


def _rec(cell, seed, pattern):
    rep = PatternReport(Pattern(pattern), None, None, None, (), None, DetectorConfig())
    return lab.RunRecord("lr_sweep", cell, seed, rep)


def test_lr_structure_detects_full_ordering():
    recs = [_rec("adam__lr0.01", 0, "monotone_increase"), _rec("adam__lr0.001", 0, "monotone_decrease"),
            _rec("adam__lr0.0001", 0, "double_descent")]
    s = lab.lr_structure(recs)["adam"]
    assert s["majority"] and s["seeds"][0]["structure"]


def test_lr_structure_reports_missing_boundary():
    recs = [_rec(f"adadelta__lr{lr:g}", seed, p) for seed in (0, 1)
            for lr, p in ((1.0, "monotone_decrease"), (0.1, "monotone_decrease"), (0.01, "plateau"))]
    s = lab.lr_structure(recs)["adadelta"]
    assert not s["majority"]
    assert s["upper_boundary_seen"] == 0 and s["lower_boundary_seen"] == 0
    text = "\n".join(lab._lr_section({"adadelta": s}))
    assert "upper boundary NOT observed" in text and "lower boundary NOT observed" in text
