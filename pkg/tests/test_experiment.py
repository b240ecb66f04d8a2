import math

import numpy as np
import pytest

from nbcverify.bounds import stable_percent
from nbcverify.experiment import (CSV_COLUMNS, ExperimentConfig, MetricsReport, MetricsRow,
                                  load_datasets, make_properties, parse_metrics_csv,
                                  read_metrics_csv, report_render, run_experiment, synthetic_config)
from nbcverify.training import Phase


def tiny(tmp_path, **kw):
    base = dict(dataset={"kind": "blobs", "n": 60, "n_test": 40, "noise": 0.1}, arch=[2, 6, 2],
                methods={"ce": [Phase("ce", 3)], "nbc": [Phase("nbc", 3)]}, radii=[0.05, 0.2],
                k=3, out=str(tmp_path / "run"), budget={"branches": 20}, pgd_steps=10)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(radii=[])
    with pytest.raises(ValueError):
        ExperimentConfig(radii=[-0.1])
    with pytest.raises(ValueError):
        ExperimentConfig(k=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_config_roundtrip(tmp_path):
    cfg = tiny(tmp_path)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_arity_k1_one_radius_one_method(tmp_path):
    cfg = ExperimentConfig(dataset={"kind": "mnist", "root": "data/mnist5k", "train_per_class": 20},
                           arch=[784, 8, 10], methods={"ce": [Phase("ce", 1)]}, radii=[0.01], k=1,
                           out=str(tmp_path / "a"), pgd_limit=20, pgd_steps=5)
    try:
        load_datasets(cfg.dataset)
    except FileNotFoundError:
        pytest.skip("MNIST IDX files not prepared")
    rep = run_experiment(cfg)
    assert len(rep.properties) == 10 and len(rep.rows) == 1
    assert rep.rows[0].n_props == 10


def test_pipeline_outputs_and_invariants(tmp_path):
    cfg = tiny(tmp_path)
    rep = run_experiment(cfg)
    assert len(rep.rows) == 4 and not rep.errors
    out = tmp_path / "run"
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert (out / "report.txt").exists()
    assert len(list((out / "verdicts").glob("*.json"))) == 4 * 6
    _, test = load_datasets(cfg.dataset, cfg.seed)
    from nbcverify.data import load_model
    for row in rep.rows:
        pct = rep.status_pct(row.method, row.radius)
        assert sum(pct.values()) == pytest.approx(100.0)
        assert 0 <= row.unsat_pct <= 100 and row.unsat_pct == pytest.approx(pct["UNSAT"])
        net = load_model(out / "models" / f"{row.method}.json")
        assert row.stable_pct == stable_percent(net, make_properties(test, cfg.k, row.radius))
        res = rep.results(row.method, row.radius)
        ut = [r.time_s for r in res if r.status in ("UNSAT", "UNKNOWN")]
        assert (math.isnan(row.time_ut_mean_s) and not ut) or row.time_ut_mean_s == pytest.approx(np.mean(ut))
    # both methods verified the same inputs
    a = [(p.index, p.label) for p in rep.results("ce", 0.2)]
    assert a == [(p.index, p.label) for p in rep.results("nbc", 0.2)]


def test_rerun_is_deterministic(tmp_path):
    a = run_experiment(tiny(tmp_path, out=str(tmp_path / "a")), write=False)
    b = run_experiment(tiny(tmp_path, out=str(tmp_path / "b")), write=False)
    for ra, rb in zip(a.rows, b.rows):
        assert (ra.unsat_pct, ra.stable_pct, ra.branches_mean) == (rb.unsat_pct, rb.stable_pct, rb.branches_mean)


def test_failures_are_recorded(tmp_path):
    cfg = tiny(tmp_path, methods={"ce": [Phase("ce", 2)]}, models={"ghost": str(tmp_path / "none.json")})
    rep = run_experiment(cfg, write=False)
    assert [e[0] for e in rep.errors] == ["ghost"]
    assert len(rep.rows) == 4
    assert math.isnan(rep.row("ghost", 0.05).unsat_pct)


def test_render_and_csv_roundtrip(tmp_path):
    rows = [MetricsRow("nbc", 0.1, 0.9, 40.0, 63.25, 0.125, float("nan"), 0.88, 1.5, 50)]
    rep = MetricsReport(rows)
    text, csv_text = report_render(rep)
    assert len(text.strip().splitlines()) == 3
    assert parse_metrics_csv(csv_text)[0].__dict__.keys() == rows[0].__dict__.keys()
    back = parse_metrics_csv(csv_text)[0]
    for k, v in rows[0].__dict__.items():
        w = getattr(back, k)
        assert (isinstance(v, float) and math.isnan(v) and math.isnan(w)) or v == w
    (tmp_path / "m.csv").write_text(csv_text)
    assert read_metrics_csv(tmp_path / "m.csv").rows[0].method == "nbc"
    with pytest.raises(ValueError):
        report_render(MetricsReport([]))


def test_presets_validate():
    cfg = synthetic_config()
    assert cfg.arch == [2, 16, 16, 2] and cfg.methods["nbc"][0].epochs == 200
