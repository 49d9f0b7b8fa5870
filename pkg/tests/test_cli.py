import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dynsurr.cli import main
from dynsurr.experiments import (
    ExperimentConfig,
    render_report,
    run_experiment,
    summarize,
)
from dynsurr.exceptions import ConfigError, EmptyResults

GOLDEN = Path(__file__).parent / "golden"


def _write_config(tmp_path, **overrides):
    payload = {
        "dgp": {"kind": "linear", "p": 2, "k": 1, "param_seed": 33},
        "n_grid": [150], "m_grid": [2], "estimators": ["deb_new_treat"],
        "replications": 2, "alpha": 0.05, "base_seed": 3,
        "out_dir": str(tmp_path / "out"),
    }
    payload.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_writes_canonical_files(tmp_path, capsys):
    out = tmp_path / "panel.csv"
    rc = main(["simulate", "--dgp", "linear", "--p", "2", "--k", "1",
               "--M", "2", "--n-e", "30", "--n-o", "40", "--seed", "9",
               "--out", str(out)])
    assert rc == 0
    assert out.exists() and (tmp_path / "panel.meta.json").exists()
    header = out.read_text().splitlines()[0]
    assert header == "unit,setting,period,y,t_1,s_1,s_2"
    meta = json.loads((tmp_path / "panel.meta.json").read_text())
    assert meta["n_e"] == 30 and meta["n_o"] == 40 and meta["seed"] == 9


def test_simulate_same_seed_identical_bytes(tmp_path):
    args = ["simulate", "--dgp", "linear", "--p", "2", "--k", "1", "--M", "2",
            "--n-e", "20", "--n-o", "20", "--seed", "4"]
    main(args + ["--out", str(tmp_path / "a.csv")])
    main(args + ["--out", str(tmp_path / "b.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_simulate_unstable_dgp_fails_before_writing(tmp_path):
    cfg = tmp_path / "dgp.json"
    cfg.write_text(json.dumps({
        "kind": "linear",
        "params": {"p": 1, "k_e": 1, "k_o": 1, "M": 2,
                   "A_e": [[1.0]], "A_o": [[1.0]], "B": [[1.2]], "C": [1.0],
                   "D_e": [[0.0]], "D_o": [[0.0]],
                   "G_e": [[0.0]], "G_o": [[0.0]]},
    }))
    out = tmp_path / "never.csv"
    rc = main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert rc == 4
    assert not out.exists()


# ---------------------------------------------------------------------------
# estimate: golden smoke reports
# ---------------------------------------------------------------------------

def _assert_close_payload(actual, expected, path=""):
    if isinstance(expected, dict):
        assert set(actual) == set(expected), path
        for key in expected:
            _assert_close_payload(actual[key], expected[key], f"{path}.{key}")
    elif isinstance(expected, list):
        np.testing.assert_allclose(
            np.asarray(actual, dtype=float), np.asarray(expected, dtype=float),
            rtol=1e-9, atol=1e-12, err_msg=path)
    elif isinstance(expected, float):
        assert actual == pytest.approx(expected, rel=1e-9, abs=1e-12), path
    else:
        assert actual == expected, path


@pytest.mark.parametrize("kind", ["surrogate", "new_treat", "deb_new_treat"])
def test_estimate_matches_golden_report(tmp_path, kind):
    out = tmp_path / "report.json"
    rc = main(["estimate", str(GOLDEN / "smoke_panel.csv"),
               "--estimator", kind, "--seed", "2", "--alpha", "0.05",
               "--out", str(out)])
    assert rc == 0
    actual = json.loads(out.read_text())
    expected = json.loads((GOLDEN / f"report_{kind}.json").read_text())
    _assert_close_payload(actual, expected)


def test_estimate_missing_file_is_data_error(tmp_path):
    rc = main(["estimate", str(tmp_path / "nope.csv")])
    assert rc == 3


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

def _strip_wall(rows):
    return [{k: v for k, v in row.items() if k != "wall_time"} for row in rows]


def test_experiment_smoke_and_rerun_identical(tmp_path):
    cfg = _write_config(tmp_path)
    rc = main(["experiment", "--config", str(cfg), "--quiet"])
    assert rc == 0
    results = tmp_path / "out" / "results.csv"
    with results.open() as fh:
        rows1 = list(csv.DictReader(fh))
    assert len(rows1) == 2  # R=2, one cell, one estimator
    assert {r["rep"] for r in rows1} == {"0", "1"}
    rc = main(["experiment", "--config", str(cfg), "--quiet",
               "--out", str(tmp_path / "out2")])
    assert rc == 0
    with (tmp_path / "out2" / "results.csv").open() as fh:
        rows2 = list(csv.DictReader(fh))
    assert _strip_wall(rows1) == _strip_wall(rows2)


def test_experiment_extending_replications_preserves_prefix(tmp_path):
    base = ExperimentConfig(
        dgp={"kind": "linear", "p": 2, "k": 1, "param_seed": 33},
        n_grid=[150], m_grid=[2], estimators=["deb_new_treat"],
        replications=2, base_seed=3,
    )
    rows2 = run_experiment(base)
    import dataclasses
    rows3 = run_experiment(dataclasses.replace(base, replications=3))
    assert _strip_wall(rows3[:2]) == _strip_wall(rows2)


def test_experiment_bad_config_exit_code(tmp_path):
    cfg = _write_config(tmp_path, alpha=2.0)
    assert main(["experiment", "--config", str(cfg), "--quiet"]) == 2
    cfg2 = _write_config(tmp_path, estimators=["nonsense"])
    assert main(["experiment", "--config", str(cfg2), "--quiet"]) == 2
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json(_write_config(tmp_path, bogus_key=1))


def test_experiment_summary_reproduces_error_ordering():
    from dynsurr.dgp import adaptive_comparison_params
    params = adaptive_comparison_params(p=3, k=1, M=3, seed=11)
    config = ExperimentConfig(
        dgp={"kind": "linear", "params": params.to_dict()},
        n_grid=[800], m_grid=[3],
        estimators=["total", "surrogate", "deb_new_treat"],
        replications=4, base_seed=5,
    )
    rows = run_experiment(config)
    cells = {s["estimator"]: s["l2_error_mean"] for s in summarize(rows)}
    assert cells["deb_new_treat"] < cells["surrogate"] < cells["total"]


def test_experiment_parallel_matches_serial():
    base = ExperimentConfig(
        dgp={"kind": "linear", "p": 2, "k": 1, "param_seed": 33},
        n_grid=[120], m_grid=[2], estimators=["deb_new_treat"],
        replications=3, base_seed=3, jobs=1,
    )
    import dataclasses
    serial = run_experiment(base)
    parallel = run_experiment(dataclasses.replace(base, jobs=2))
    assert _strip_wall(serial) == _strip_wall(parallel)


def test_experiment_failures_recorded_not_raised():
    # n too small to split produces error rows, not an aborted sweep
    config = ExperimentConfig(
        dgp={"kind": "linear", "p": 2, "k": 1, "param_seed": 33},
        n_grid=[1], m_grid=[2], estimators=["deb_new_treat"],
        replications=2, base_seed=3,
    )
    rows = run_experiment(config)
    assert len(rows) == 2
    assert all(r["status"].startswith("error:") for r in rows)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def test_report_from_golden_results(tmp_path):
    rc = main(["report", str(GOLDEN / "smoke_results.csv"),
               "--out", str(tmp_path / "rep")])
    assert rc == 0
    svg = tmp_path / "rep" / "errors_M2.svg"
    assert svg.exists()
    assert svg.read_bytes() == (GOLDEN / "errors_M2.svg").read_bytes()
    summary = (tmp_path / "rep" / "summary.csv").read_text().splitlines()
    assert len(summary) == 2  # header + single cell


def test_report_empty_results(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("rep,n,M,estimator,seed,status,l2_error\n")
    assert main(["report", str(empty), "--out", str(tmp_path / "rep")]) == 3
    with pytest.raises(EmptyResults):
        summarize([])


def test_render_report_single_cell(tmp_path):
    rows = [{"rep": 0, "n": 100, "M": 2, "estimator": "total",
             "status": "ok", "l2_error": "0.5", "theta0_coverage": "1.0",
             "effect_coverage": "1.0", "theta0_ci_width": "0.1",
             "wall_time": "0.01"}]
    paths = render_report(rows, tmp_path / "single")
    assert len(paths) == 2  # summary + one plot
