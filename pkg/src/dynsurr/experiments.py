"""Monte-Carlo experiment harness: sweeps over (n, M, estimator) cells with
derived per-replication seeds, results/summary CSV emission, and plots."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data_model import PanelDataset
from .dgp import (
    LinearDGPParams,
    SemiSynthConfig,
    ground_truth_theta,
    random_linear_params,
    semi_synthetic_truth,
    simulate_linear,
    simulate_semi_synthetic,
)
from .estimators import EstimatorConfig, EstimatorKind, run_estimator
from .exceptions import ConfigError, EmptyResults
from .learners import LearnerConfig

RESULT_COLUMNS = [
    "rep", "n", "M", "estimator", "seed", "status", "l2_error",
    "theta0_coverage", "effect_coverage", "theta0_ci_width",
    "effect_ci_width", "tau_hat", "tau_true", "wall_time",
]


@dataclass
class ExperimentConfig:
    dgp: dict = field(default_factory=lambda: {"kind": "linear", "p": 3, "k": 2})
    n_grid: list[int] = field(default_factory=lambda: [2000])
    m_grid: list[int] = field(default_factory=lambda: [2])
    estimators: list[str] = field(default_factory=lambda: ["deb_new_treat"])
    replications: int = 10
    alpha: float = 0.05
    base_seed: int = 0
    learner: dict = field(default_factory=lambda: {"kind": "ols"})
    out_dir: str = "experiment_out"
    jobs: int = 0                # 0 = one worker per available core
    t1: Optional[list[float]] = None
    t0: Optional[list[float]] = None
    surrogate_rep: str = "orthogonal"

    def validate(self) -> None:
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.jobs < 0:
            raise ConfigError("jobs must be >= 0 (0 means one per core)")
        if not self.n_grid or not self.m_grid or not self.estimators:
            raise ConfigError("n_grid, m_grid and estimators must be non-empty")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        for name in self.estimators:
            EstimatorKind(name)
        kind = self.dgp.get("kind")
        if kind not in ("linear", "semi_synthetic"):
            raise ConfigError(f"unknown dgp kind {kind!r}")

    @staticmethod
    def from_json(path: str | Path) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = ExperimentConfig(**payload)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    def learner_config(self) -> LearnerConfig:
        known = {f.name for f in dataclasses.fields(LearnerConfig)}
        opts = {k: v for k, v in self.learner.items() if k in known}
        unknown = set(self.learner) - known
        if unknown:
            raise ConfigError(f"unknown learner keys: {sorted(unknown)}")
        return LearnerConfig(**opts)


# ---------------------------------------------------------------------------
# DGP materialization per grid cell
# ---------------------------------------------------------------------------

def materialize_dgp(dgp: dict, M: int):
    """Return (simulate_fn(n_e, n_o, seed) -> PanelDataset, theta0_true)."""
    kind = dgp.get("kind")
    if kind == "linear":
        if "params" in dgp:
            params = LinearDGPParams.from_dict({**dgp["params"], "M": M})
        else:
            params = random_linear_params(
                p=dgp.get("p", 3), k=dgp.get("k", 2), M=M,
                seed=dgp.get("param_seed", 1),
                adaptive=dgp.get("adaptive", True),
                shared_policy=dgp.get("shared_policy", True),
                sigma_eps=dgp.get("sigma_eps", 1.0),
                sigma_eta=dgp.get("sigma_eta", 0.5),
                sigma_zeta=dgp.get("sigma_zeta", 1.0),
            )
        truth = ground_truth_theta(params).theta0

        def _sim(n_e: int, n_o: int, seed: int) -> PanelDataset:
            return simulate_linear(params, n_e, n_o, seed)

        return _sim, truth

    if kind == "semi_synthetic":
        known = {f.name for f in dataclasses.fields(SemiSynthConfig)}
        opts = {k: v for k, v in dgp.items() if k in known}
        cfg = SemiSynthConfig(**{**opts, "M": M})
        truth = semi_synthetic_truth(cfg)

        def _sim(n_e: int, n_o: int, seed: int) -> PanelDataset:
            return simulate_semi_synthetic(cfg, n_e, n_o, seed)

        return _sim, truth

    raise ConfigError(f"unknown dgp kind {kind!r}")


def replication_seed(base_seed: int, n: int, M: int, rep: int) -> int:
    """Splittable per-cell seed: extending R never reshuffles earlier reps."""
    ss = np.random.SeedSequence([base_seed, n, M, rep])
    return int(ss.generate_state(1)[0])


def _contrast(config: ExperimentConfig, k_e: int):
    t1 = np.array(config.t1, float) if config.t1 else np.eye(k_e)[0]
    t0 = np.array(config.t0, float) if config.t0 else np.zeros(k_e)
    return t1, t0


def run_cell_replication(config: ExperimentConfig, n: int, M: int,
                         rep: int) -> list[dict]:
    """All estimator rows for one (rep, n, M) cell; failures become rows."""
    sim, truth = materialize_dgp(config.dgp, M)
    seed = replication_seed(config.base_seed, n, M, rep)
    data = sim(n, n, seed)
    k_e = truth.shape[0]
    t1, t0 = _contrast(config, k_e)
    tau_true = float(truth @ (t1 - t0))
    est_cfg = EstimatorConfig(
        learner=config.learner_config(), alpha=config.alpha, seed=seed,
        t1=t1, t0=t0, surrogate_rep=config.surrogate_rep,
    )
    rows = []
    for name in config.estimators:
        row = {"rep": rep, "n": n, "M": M, "estimator": name, "seed": seed,
               "status": "ok", "l2_error": "", "theta0_coverage": "",
               "effect_coverage": "", "theta0_ci_width": "",
               "effect_ci_width": "", "tau_hat": "", "tau_true": tau_true,
               "wall_time": ""}
        start = time.perf_counter()
        try:
            report = run_estimator(name, data, est_cfg)
            theta0 = report.theta0
            if theta0.shape[0] == truth.shape[0]:
                row["l2_error"] = float(np.linalg.norm(theta0 - truth))
                ci = report.theta0_ci
                row["theta0_coverage"] = float(np.mean(
                    (ci[:, 0] <= truth) & (truth <= ci[:, 1])))
                row["theta0_ci_width"] = float(np.mean(ci[:, 1] - ci[:, 0]))
            if report.effect is not None:
                lo, hi = report.effect.ci
                row["effect_coverage"] = float(lo <= tau_true <= hi)
                row["effect_ci_width"] = float(hi - lo)
                row["tau_hat"] = report.effect.tau_hat
        except Exception as exc:  # failures recorded, sweep continues
            row["status"] = f"error:{type(exc).__name__}"
        row["wall_time"] = round(time.perf_counter() - start, 4)
        rows.append(row)
    return rows


def _cell_task(args):
    config_dict, n, M, rep = args
    config = ExperimentConfig(**config_dict)
    return run_cell_replication(config, n, M, rep)


def run_experiment(config: ExperimentConfig,
                   progress: bool = False) -> list[dict]:
    """Run the full sweep; rows are ordered by (n, M, rep, estimator).

    Replication-level parallelism with splittable per-replication seeds and
    a final sort, so output is identical for every worker count.
    """
    config.validate()
    tasks = [(n, M, rep) for n in config.n_grid for M in config.m_grid
             for rep in range(config.replications)]
    rows: list[dict] = []
    jobs = config.jobs if config.jobs >= 1 else (os.cpu_count() or 1)
    if jobs > 1:
        payload = dataclasses.asdict(config)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_cell_task,
                                  [(payload, n, M, rep) for n, M, rep in tasks]):
                rows.extend(chunk)
    else:
        for i, (n, M, rep) in enumerate(tasks):
            rows.extend(run_cell_replication(config, n, M, rep))
            if progress and (i + 1) % 10 == 0:
                print(f"  {i + 1}/{len(tasks)} replications done", flush=True)
    rows.sort(key=lambda r: (r["n"], r["M"], r["rep"],
                             config.estimators.index(r["estimator"])))
    return rows


def write_results_csv(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_results_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyResults(f"{path}: no result rows")
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Per-cell mean/median error, coverage, and width aggregates."""
    cells: dict[tuple, list[dict]] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        cells.setdefault((int(row["n"]), int(row["M"]), row["estimator"]),
                         []).append(row)
    if not cells:
        raise EmptyResults("no successful rows to summarize")
    out = []
    for (n, M, est), group in sorted(cells.items(), key=lambda kv: (
            kv[0][0], kv[0][1], kv[0][2])):
        def col(name):
            vals = [float(r[name]) for r in group if r[name] != ""]
            return np.array(vals) if vals else np.array([np.nan])
        err = col("l2_error")
        out.append({
            "n": n, "M": M, "estimator": est, "reps": len(group),
            "l2_error_mean": float(np.mean(err)),
            "l2_error_median": float(np.median(err)),
            "l2_error_q25": float(np.quantile(err, 0.25)),
            "l2_error_q75": float(np.quantile(err, 0.75)),
            "theta0_coverage_mean": float(np.mean(col("theta0_coverage"))),
            "effect_coverage_mean": float(np.mean(col("effect_coverage"))),
            "theta0_ci_width_mean": float(np.mean(col("theta0_ci_width"))),
            "wall_time_mean": float(np.mean(col("wall_time"))),
        })
    return out


def write_summary_csv(summary: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary[0].keys()))
        writer.writeheader()
        for row in summary:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Plots: per-M panel of error distributions per estimator across n
# ---------------------------------------------------------------------------

def render_report(rows: list[dict], out_dir: str | Path) -> list[Path]:
    """Summary CSV plus one deterministic SVG boxplot figure per M."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "dynsurr"

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    paths = [out_dir / "summary.csv"]
    write_summary_csv(summary, paths[0])

    ok = [r for r in rows if r["status"] == "ok" and r["l2_error"] != ""]
    if not ok:
        raise EmptyResults("no successful rows to plot")
    m_values = sorted({int(r["M"]) for r in ok})
    for M in m_values:
        sub = [r for r in ok if int(r["M"]) == M]
        n_values = sorted({int(r["n"]) for r in sub})
        estimators = sorted({r["estimator"] for r in sub})
        fig, axes = plt.subplots(1, len(n_values),
                                 figsize=(4 * len(n_values), 3.2),
                                 squeeze=False, sharey=True)
        for col_i, n in enumerate(n_values):
            ax = axes[0][col_i]
            series = []
            for est in estimators:
                vals = [float(r["l2_error"]) for r in sub
                        if int(r["n"]) == n and r["estimator"] == est]
                series.append(vals if vals else [np.nan])
            ax.boxplot(series, tick_labels=estimators)
            ax.set_title(f"n={n}")
            ax.tick_params(axis="x", rotation=60)
            if col_i == 0:
                ax.set_ylabel("coefficient error (l2)")
        fig.suptitle(f"estimation error, M={M} periods")
        fig.tight_layout()
        svg = out_dir / f"errors_M{M}.svg"
        fig.savefig(svg, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(svg)
    return paths
