"""The six end-to-end effect estimation pipelines.

Four baselines run on a long-format dataset that contains the period-1
treatments of interest together with realized cumulative outcomes:

* ``total``          : partially linear regression of Ybar on the period-1
                       treatment features, controlling the initial state,
                       with cross-fitted first stages.
* ``surrogate``      : projection of the raw Ybar onto the period-1 state
                       (the surrogate index), no dynamic adjustment. Default
                       representation is the orthogonal two-sample moment;
                       an index-only variant is switchable.
* ``adj_total``      : blip parameters from the per-period orthogonal moment
                       blocks, outcomes adjusted, then ``total`` machinery.
* ``adj_surrogate``  : as ``adj_total`` but the adjusted outcome is first
                       projected onto the period-1 state.

Two transfer pipelines use the short-term experimental sample together with
the long-term observational sample:

* ``new_treat``      : dynamically adjusted surrogate index learned on the
                       observational sample and transferred to the
                       experimental sample (index representation).
* ``deb_new_treat``  : the fully orthogonal joint moment system with
                       two-fold cross-fitting and sandwich intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .data_model import (
    ExperimentalArrays,
    FeatureMaps,
    FeatureMapSpec,
    PanelDataset,
    Setting,
    eval_feature_map,
)
from .exceptions import SettingMissing
from .inference import (
    EstimateReport,
    coordinate_cis,
    effect_ci,
    sandwich,
)
from .learners import LearnerConfig
from .nuisance import FOLD_S, FOLD_S_PRIME, FoldPair, fit_nuisance_set, split_halves
from .snmm import (
    MomentSystem,
    SystemMode,
    ThetaVector,
    adjusted_outcomes,
    assemble_system,
    min_block_singular_values,
    solve_theta,
)


class EstimatorKind(str, Enum):
    TOTAL = "total"
    SURROGATE = "surrogate"
    ADJ_TOTAL = "adj_total"
    ADJ_SURROGATE = "adj_surrogate"
    NEW_TREAT = "new_treat"
    DEB_NEW_TREAT = "deb_new_treat"


@dataclass(frozen=True)
class EstimatorConfig:
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    alpha: float = 0.05
    seed: int = 0
    t1: Optional[np.ndarray] = None
    t0: Optional[np.ndarray] = None
    surrogate_rep: str = "orthogonal"     # "orthogonal" | "index"
    maps: Optional[FeatureMaps] = None

    def maps_for(self, data: PanelDataset) -> FeatureMaps:
        if self.maps is not None:
            return self.maps
        k_e = data.k_e if data.n_e else data.k_o
        return FeatureMaps.identity(k_e, data.k_o)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _cross_fit_predict(x: np.ndarray, y: np.ndarray, idx_a: np.ndarray,
                       idx_b: np.ndarray, learner: LearnerConfig) -> np.ndarray:
    """Out-of-fold predictions of E[y | x] under a two-fold split."""
    out = np.zeros(y.shape, dtype=float)
    for train, test in ((idx_b, idx_a), (idx_a, idx_b)):
        model = learner.fit_regression(x[train], y[train])
        pred = model.predict(x[test])
        out[test] = pred if y.ndim > 1 else np.ravel(pred)
    return out


def _plr_system(phi: np.ndarray, controls: np.ndarray, outcome: np.ndarray,
                idx_a: np.ndarray, idx_b: np.ndarray,
                learner: LearnerConfig) -> MomentSystem:
    """Residual-on-residual moment system for a partially linear effect."""
    phi_hat = _cross_fit_predict(controls, phi, idx_a, idx_b, learner)
    y_hat = _cross_fit_predict(controls, outcome, idx_a, idx_b, learner)
    phi_t = phi - phi_hat
    y_t = outcome - y_hat
    d = phi.shape[1]
    a_units = phi_t * y_t[:, None]
    G_units = phi_t[:, :, None] * phi_t[:, None, :]
    return MomentSystem(
        mode=SystemMode.STATIC, d_e=d, d_o=0, M=1, n=phi.shape[0],
        a=a_units.sum(axis=0), G=G_units.sum(axis=0),
        a_units=a_units, G_units=G_units, blocks=[(1, slice(0, d))],
    )


def _fit_blips(data: PanelDataset, folds: FoldPair, maps: FeatureMaps,
               learner: LearnerConfig) -> tuple[ThetaVector, dict]:
    """Cross-fitted blip parameters from the per-period moment blocks."""
    halves = []
    for tag in (FOLD_S, FOLD_S_PRIME):
        e_idx, o_idx = folds.half(tag)
        halves.append(fit_nuisance_set(
            data.subset(np.array([], dtype=int), o_idx), maps, learner,
            fold=tag, scope="blips"))
    sys = assemble_system(data, folds, tuple(halves), SystemMode.BLIPS)
    theta = solve_theta(sys)
    return theta, {"blips_min_singular_values": {
        str(t): v for t, v in min_block_singular_values(sys).items()}}


def _default_contrast(cfg: EstimatorConfig, d_treat: int):
    t1 = cfg.t1 if cfg.t1 is not None else np.eye(d_treat)[0]
    t0 = cfg.t0 if cfg.t0 is not None else np.zeros(d_treat)
    return np.asarray(t1, float), np.asarray(t0, float)


def _build_report(kind: EstimatorKind, sys: MomentSystem, theta: ThetaVector,
                  data: PanelDataset, map_e1: FeatureMapSpec,
                  cfg: EstimatorConfig, diagnostics: dict) -> EstimateReport:
    cov = sandwich(sys, theta)
    cis = coordinate_cis(theta, cov, cfg.alpha)
    d_e = theta.theta0.shape[0]
    t1, t0 = _default_contrast(cfg, map_e1.treat_dim)
    pop = "e" if data.n_e else "o"
    eff_data = data if pop == "e" else _as_effect_population(data)
    effect = effect_ci(theta, cov, eff_data, map_e1, t1, t0, cfg.alpha)
    diagnostics = dict(diagnostics)
    diagnostics.update({
        "effect_population": pop,
        "min_block_singular_values": {
            str(t): v for t, v in min_block_singular_values(sys).items()},
        "seed": cfg.seed,
        "n_pooled": sys.n,
    })
    return EstimateReport(
        estimator=kind.value, theta0=theta.theta0, theta_o=theta.theta_o,
        alpha=cfg.alpha, n_e=data.n_e, n_o=data.n_o,
        theta0_ci=cis[:d_e], all_cis=cis, V_hat=cov.V_hat, effect=effect,
        diagnostics=diagnostics,
    )


def _as_effect_population(data: PanelDataset) -> PanelDataset:
    """Expose observational initial states as the effect-averaging population."""
    o = data.observational
    exp = ExperimentalArrays(
        unit_ids=tuple(f"{u}::ref" for u in o.unit_ids),
        s0=o.s0, t1=o.treatments[:, 0, :], s1=o.state(1),
        y1=np.full(o.n, np.nan),
    )
    return PanelDataset.from_arrays(exp, None)


def _two_role_view(data: PanelDataset) -> tuple[PanelDataset, FoldPair, FeatureMaps]:
    """Single long dataset playing both roles: each unit contributes its
    short-term prefix as an experimental record and its full trajectory as an
    observational one. Folds keep the two copies of a unit together."""
    o = data.observational
    exp = ExperimentalArrays(
        unit_ids=tuple(f"{u}::short" for u in o.unit_ids),
        s0=o.s0, t1=o.treatments[:, 0, :], s1=o.state(1),
        y1=np.full(o.n, np.nan),
    )
    view = PanelDataset.from_arrays(exp, o, metadata=data.metadata)
    maps = FeatureMaps.identity(view.k_e, view.k_o)
    return view, maps


def _paired_folds(n: int, seed: int) -> FoldPair:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = (n + 1) // 2
    a, b = np.sort(perm[:cut]), np.sort(perm[cut:])
    return FoldPair(e_s=a, e_s_prime=b, o_s=a, o_s_prime=b, seed=seed)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def _long_inputs(data: PanelDataset, map_treat: FeatureMapSpec):
    o = data.observational
    phi = np.atleast_2d(eval_feature_map(map_treat, o.treatments[:, 0, :], o.s0))
    return o, phi


def _run_total(data: PanelDataset, cfg: EstimatorConfig,
               outcome: Optional[np.ndarray] = None,
               diagnostics: Optional[dict] = None,
               kind: EstimatorKind = EstimatorKind.TOTAL) -> EstimateReport:
    data.require_setting(Setting.OBSERVATIONAL)
    maps = cfg.maps_for(data)
    map_treat = FeatureMapSpec.identity(data.k_o) if maps.o.treat_dim != data.k_o \
        else maps.o
    o, phi = _long_inputs(data, map_treat)
    y = o.ybar() if outcome is None else outcome
    folds = split_halves(data.subset(np.array([], int), np.arange(o.n)), cfg.seed)
    sys = _plr_system(phi, o.s0, y, folds.o_s, folds.o_s_prime, cfg.learner)
    theta = solve_theta(sys)
    return _build_report(kind, sys, theta, data, map_treat, cfg,
                         diagnostics or {})


def _run_adj_total(data: PanelDataset, cfg: EstimatorConfig) -> EstimateReport:
    data.require_setting(Setting.OBSERVATIONAL)
    maps = cfg.maps_for(data)
    o_only = data.subset(np.array([], int), np.arange(data.n_o))
    folds = split_halves(o_only, cfg.seed)
    theta_o, diag = _fit_blips(o_only, folds, maps, cfg.learner)
    y_adj = adjusted_outcomes(data, theta_o.theta_o, maps)
    report = _run_total(data, cfg, outcome=y_adj, diagnostics=diag,
                        kind=EstimatorKind.ADJ_TOTAL)
    report.theta_o = theta_o.theta_o
    return report


def _run_adj_surrogate(data: PanelDataset, cfg: EstimatorConfig) -> EstimateReport:
    data.require_setting(Setting.OBSERVATIONAL)
    maps = cfg.maps_for(data)
    o = data.observational
    o_only = data.subset(np.array([], int), np.arange(o.n))
    folds = split_halves(o_only, cfg.seed)
    theta_o, diag = _fit_blips(o_only, folds, maps, cfg.learner)
    y_adj = adjusted_outcomes(data, theta_o.theta_o, maps)
    index = _cross_fit_predict(o.state(1), y_adj, folds.o_s, folds.o_s_prime,
                               cfg.learner)
    map_treat = FeatureMapSpec.identity(data.k_o)
    phi = np.atleast_2d(eval_feature_map(map_treat, o.treatments[:, 0, :], o.s0))
    sys = _plr_system(phi, o.s0, index, folds.o_s, folds.o_s_prime, cfg.learner)
    theta = solve_theta(sys)
    report = _build_report(EstimatorKind.ADJ_SURROGATE, sys, theta, data,
                           map_treat, cfg, diag)
    report.theta_o = theta_o.theta_o
    return report


def _index_transfer_system(data: PanelDataset, folds: FoldPair,
                           maps: FeatureMaps, learner: LearnerConfig,
                           theta_o: dict[int, np.ndarray],
                           adjust: bool) -> MomentSystem:
    """Experimental-sample moment for the (adjusted) surrogate index
    representation: fit the index and its projections per training half,
    evaluate on the held-out experimental units."""
    e = data.experimental
    n_e = e.n
    phi1 = np.atleast_2d(eval_feature_map(maps.e1, e.t1, e.s0))
    d = phi1.shape[1]
    index_val = np.zeros(n_e)
    h_val = np.zeros(n_e)
    p_val = np.zeros((n_e, d))
    for eval_tag, train_tag in ((FOLD_S, FOLD_S_PRIME), (FOLD_S_PRIME, FOLD_S)):
        e_eval, _ = folds.half(eval_tag)
        e_tr, o_tr = folds.half(train_tag)
        train = data.subset(e_tr, o_tr)
        o_half = train.observational
        y = o_half.ybar()
        if adjust:
            y = adjusted_outcomes(train, theta_o, maps)
        g_model = learner.fit_regression(o_half.state(1), y)
        e_half = train.experimental
        idx_on_e = np.ravel(g_model.predict(e_half.s1))
        h_model = learner.fit_regression(e_half.s0, idx_on_e)
        phi_half = np.atleast_2d(eval_feature_map(maps.e1, e_half.t1, e_half.s0))
        p_model = learner.fit_regression(e_half.s0, phi_half)
        index_val[e_eval] = np.ravel(g_model.predict(e.s1[e_eval]))
        h_val[e_eval] = np.ravel(h_model.predict(e.s0[e_eval]))
        p_val[e_eval] = np.atleast_2d(p_model.predict(e.s0[e_eval]))
    phi_t = phi1 - p_val
    resid = index_val - h_val
    a_units = phi_t * resid[:, None]
    G_units = phi_t[:, :, None] * phi_t[:, None, :]
    return MomentSystem(
        mode=SystemMode.STATIC, d_e=d, d_o=0, M=1, n=n_e,
        a=a_units.sum(axis=0), G=G_units.sum(axis=0),
        a_units=a_units, G_units=G_units, blocks=[(1, slice(0, d))],
    )


def _run_surrogate(data: PanelDataset, cfg: EstimatorConfig) -> EstimateReport:
    data.require_setting(Setting.OBSERVATIONAL)
    if data.n_e == 0:
        view, maps = _two_role_view(data)
        folds = _paired_folds(data.n_o, cfg.seed)
    else:
        view, maps = data, cfg.maps_for(data)
        folds = split_halves(view, cfg.seed)
    if cfg.surrogate_rep == "index":
        sys = _index_transfer_system(view, folds, maps, cfg.learner,
                                     theta_o={}, adjust=False)
        theta = solve_theta(sys)
        return _build_report(EstimatorKind.SURROGATE, sys, theta, data,
                             maps.e1, cfg, {"representation": "index"})
    halves = tuple(
        fit_nuisance_set(view.subset(*folds.half(tag)), maps, cfg.learner,
                         fold=tag, scope="static")
        for tag in (FOLD_S, FOLD_S_PRIME)
    )
    sys = assemble_system(view, folds, halves, SystemMode.STATIC)
    theta = solve_theta(sys)
    return _build_report(EstimatorKind.SURROGATE, sys, theta, data, maps.e1,
                         cfg, {"representation": "orthogonal"})


def _run_new_treat(data: PanelDataset, cfg: EstimatorConfig) -> EstimateReport:
    data.require_setting(Setting.EXPERIMENTAL)
    data.require_setting(Setting.OBSERVATIONAL)
    maps = cfg.maps_for(data)
    folds = split_halves(data, cfg.seed)
    theta_o, diag = _fit_blips(data, folds, maps, cfg.learner)
    sys = _index_transfer_system(data, folds, maps, cfg.learner,
                                 theta_o=theta_o.theta_o, adjust=True)
    theta = solve_theta(sys)
    report = _build_report(EstimatorKind.NEW_TREAT, sys, theta, data,
                           maps.e1, cfg, diag)
    report.theta_o = theta_o.theta_o
    return report


def _run_deb_new_treat(data: PanelDataset, cfg: EstimatorConfig) -> EstimateReport:
    data.require_setting(Setting.EXPERIMENTAL)
    data.require_setting(Setting.OBSERVATIONAL)
    maps = cfg.maps_for(data)
    folds = split_halves(data, cfg.seed)
    halves = tuple(
        fit_nuisance_set(data.subset(*folds.half(tag)), maps, cfg.learner,
                         fold=tag, scope="dynamic")
        for tag in (FOLD_S, FOLD_S_PRIME)
    )
    sys = assemble_system(data, folds, halves, SystemMode.DYNAMIC)
    theta = solve_theta(sys)
    diag = {"odds_clip_count": sys.odds_clip_count}
    return _build_report(EstimatorKind.DEB_NEW_TREAT, sys, theta, data,
                         maps.e1, cfg, diag)


_DISPATCH = {
    EstimatorKind.TOTAL: _run_total,
    EstimatorKind.SURROGATE: _run_surrogate,
    EstimatorKind.ADJ_TOTAL: _run_adj_total,
    EstimatorKind.ADJ_SURROGATE: _run_adj_surrogate,
    EstimatorKind.NEW_TREAT: _run_new_treat,
    EstimatorKind.DEB_NEW_TREAT: _run_deb_new_treat,
}


def run_estimator(kind: EstimatorKind | str, data: PanelDataset,
                  config: Optional[EstimatorConfig] = None) -> EstimateReport:
    """Run one pipeline and return its report.

    ``new_treat`` and ``deb_new_treat`` need both settings; the four
    baselines need observational (long-format) units and ignore the
    experimental sample except as the effect-averaging population.
    """
    kind = EstimatorKind(kind)
    config = config or EstimatorConfig()
    if kind in (EstimatorKind.NEW_TREAT, EstimatorKind.DEB_NEW_TREAT):
        if data.n_e == 0 or data.n_o == 0:
            raise SettingMissing(f"{kind.value} requires both settings")
    return _DISPATCH[kind](data, config)
