"""Two-fold splitting and construction of the first-stage nuisance models.

The full nuisance set for the dynamic estimator consists of

* ``g``      : S_1 -> E[Ybar | S_1] on observational units
* ``g_t``    : S_1 -> E[Phi_{o,t} | S_1], t = 2..M
* ``q``      : odds-ratio model Pr(e|S_1)/Pr(o|S_1) times the regression of
               the residual period-1 treatment features on S_1 over e-units
* ``h``      : S_0 -> E[g(S_1) | S_0] on experimental units
* ``p_e1``   : S_0 -> E[Phi_1 | S_0] on experimental units
* ``p_et``   : S_0 -> E[g_t(S_1) | S_0] on experimental units
* ``b_ot``   : S_{t-1} -> E[Ybar_t | S_{t-1}] on observational units
* ``p_o``    : S_{t-1} -> E[Phi_{o,tau} | S_{t-1}] for 2 <= t <= tau <= M

Nested models (q's regression part, h, p_et) consume predictions of models
fit on the same half; cross-fitting happens one level up, in the moment
assembly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data_model import FeatureMaps, PanelDataset, Setting, eval_feature_map
from .exceptions import TooFewUnits
from .learners import LearnerConfig, LinearModel, LogisticModel, fit_logistic

FOLD_S = "S"
FOLD_S_PRIME = "S_prime"


@dataclass(frozen=True)
class FoldPair:
    """Disjoint halves of a dataset, stratified by setting."""

    e_s: np.ndarray
    e_s_prime: np.ndarray
    o_s: np.ndarray
    o_s_prime: np.ndarray
    seed: int

    def half(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        if tag == FOLD_S:
            return self.e_s, self.o_s
        return self.e_s_prime, self.o_s_prime


def split_halves(data: PanelDataset, seed: int) -> FoldPair:
    """Random half/half split within each setting, deterministic per seed."""
    rng = np.random.default_rng(seed)

    def _split(n: int, label: str) -> tuple[np.ndarray, np.ndarray]:
        if n == 0:
            empty = np.array([], dtype=int)
            return empty, empty
        if n < 2:
            raise TooFewUnits(f"need at least 2 {label} units to split, got {n}")
        perm = rng.permutation(n)
        cut = (n + 1) // 2
        return np.sort(perm[:cut]), np.sort(perm[cut:])

    e_s, e_sp = _split(data.n_e, "experimental")
    o_s, o_sp = _split(data.n_o, "observational")
    return FoldPair(e_s=e_s, e_s_prime=e_sp, o_s=o_s, o_s_prime=o_sp, seed=seed)


# ---------------------------------------------------------------------------
# Fitted nuisance set
# ---------------------------------------------------------------------------

@dataclass
class NuisanceSet:
    maps: FeatureMaps
    M: int
    fold: str
    clip_eps: float
    scope: str                                   # "dynamic" | "static"
    g: LinearModel = None
    q_odds: LogisticModel = None
    q_reg: LinearModel = None
    h: LinearModel = None
    p_e1: LinearModel = None
    g_t: dict[int, LinearModel] = field(default_factory=dict)      # t -> model
    p_et: dict[int, LinearModel] = field(default_factory=dict)     # t -> model
    b_ot: dict[int, LinearModel] = field(default_factory=dict)     # t -> model
    p_o: dict[tuple[int, int], LinearModel] = field(default_factory=dict)
    # p_o[(tau, t)](S_{t-1}) predicts Phi_{o,tau}, for 2 <= t <= tau <= M
    pr_e_train: float = 0.0

    def values_for(self, data: PanelDataset) -> "NuisanceValues":
        return _predict_all(self, data)


def fit_nuisance_set(train: PanelDataset, maps: FeatureMaps,
                     config: LearnerConfig, *, fold: str,
                     scope: str = "dynamic") -> NuisanceSet:
    """Fit the nuisance models on one half-sample, in dependency order.

    ``scope`` selects which roles are needed: "dynamic" fits everything,
    "static" only the no-adjustment roles (g, q, h, p_e1), and "blips" only
    the per-period observational roles (b_ot, p_o).
    """
    train.require_setting(Setting.OBSERVATIONAL)
    if scope not in ("dynamic", "static", "blips"):
        raise ValueError(f"unknown scope {scope!r}")
    e = train.experimental
    o = train.observational
    M = train.M
    ns = NuisanceSet(maps=maps, M=M, fold=fold, clip_eps=config.clip_eps,
                     scope=scope,
                     pr_e_train=e.n / max(e.n + o.n, 1))

    s1_o = o.state(1)
    ybar = o.ybar()

    if scope != "blips":
        # (1) g: long-horizon outcome projection on period-1 state
        ns.g = config.fit_regression(s1_o, ybar, fitted_on=fold)

    if scope != "static" and M >= 2:
        phi_o = np.stack(
            [eval_feature_map(maps.o, o.treatments[:, t - 1, :], o.state(t - 1))
             for t in range(2, M + 1)], axis=1,
        )
        if scope == "dynamic":
            # (2) g_t: projections of future blip features on the period-1 state
            for t in range(2, M + 1):
                ns.g_t[t] = config.fit_regression(s1_o, phi_o[:, t - 2, :],
                                                  fitted_on=fold)
        # (3) per-period baselines and treatment-feature projections
        for t in range(2, M + 1):
            s_prev = o.state(t - 1)
            ns.b_ot[t] = config.fit_regression(s_prev, o.ybar_from(t), fitted_on=fold)
            for tau in range(t, M + 1):
                if t == 2 and scope == "dynamic" and config.alias_shared_projections:
                    ns.p_o[(tau, 2)] = ns.g_t[tau]
                else:
                    ns.p_o[(tau, t)] = config.fit_regression(
                        s_prev, phi_o[:, tau - 2, :], fitted_on=fold)

    if scope == "blips":
        return ns

    train.require_setting(Setting.EXPERIMENTAL)
    phi1 = eval_feature_map(maps.e1, e.t1, e.s0)

    # (4) p_e1: period-1 treatment feature projection on the initial state
    ns.p_e1 = config.fit_regression(e.s0, phi1, fitted_on=fold)

    # (5) q: pooled odds model x regression of residual features on S_1
    pooled_s1 = np.vstack([e.s1, s1_o])
    labels = np.r_[np.ones(e.n), np.zeros(o.n)]
    ns.q_odds = fit_logistic(pooled_s1, labels, fitted_on=fold)
    resid_phi1 = phi1 - np.atleast_2d(ns.p_e1.predict(e.s0))
    ns.q_reg = config.fit_regression(e.s1, resid_phi1, fitted_on=fold)

    # (6) h: projection of the fitted surrogate index onto the initial state
    g_on_e = ns.g.predict(e.s1)
    ns.h = config.fit_regression(e.s0, g_on_e, fitted_on=fold)

    # (7) p_et: projections of the fitted g_t onto the initial state
    if scope == "dynamic":
        for t in range(2, M + 1):
            gt_on_e = np.atleast_2d(ns.g_t[t].predict(e.s1))
            ns.p_et[t] = config.fit_regression(e.s0, gt_on_e, fitted_on=fold)

    return ns


# ---------------------------------------------------------------------------
# Predicted values, aligned to a dataset
# ---------------------------------------------------------------------------

@dataclass
class EValues:
    """Per-experimental-unit nuisance predictions."""

    phi1: np.ndarray          # (n_e, d_e)
    p_e1: np.ndarray          # (n_e, d_e)
    g_s1: np.ndarray          # (n_e,)
    h_s0: np.ndarray          # (n_e,)
    g_t: np.ndarray           # (n_e, M-1, d_o)
    p_et: np.ndarray          # (n_e, M-1, d_o)


@dataclass
class OValues:
    """Per-observational-unit nuisance predictions."""

    ybar: np.ndarray          # (n_o,)
    g_s1: np.ndarray          # (n_o,)
    q: np.ndarray             # (n_o, d_e)
    phi_ot: np.ndarray        # (n_o, M-1, d_o)
    g_t: np.ndarray           # (n_o, M-1, d_o)
    ybar_t: np.ndarray        # (n_o, M-1)
    b_ot: np.ndarray          # (n_o, M-1)
    p_o: np.ndarray           # (n_o, M-1, M-1, d_o), [i, tau-2, t-2], tau >= t


@dataclass
class NuisanceValues:
    d_e: int
    d_o: int
    M: int
    e: EValues
    o: OValues
    source_fold: Optional[str] = None
    odds_clip_count: int = 0


def _predict_all(ns: NuisanceSet, data: PanelDataset) -> NuisanceValues:
    maps = ns.maps
    d_e, d_o, M = maps.d_e, maps.d_o, data.M
    m1 = max(M - 1, 0)
    e = data.experimental
    o = data.observational

    if e.n and ns.scope != "blips":
        phi1 = np.atleast_2d(eval_feature_map(maps.e1, e.t1, e.s0))
        p_e1 = np.atleast_2d(ns.p_e1.predict(e.s0))
        g_s1 = np.ravel(ns.g.predict(e.s1))
        h_s0 = np.ravel(ns.h.predict(e.s0))
        if ns.scope == "dynamic" and M >= 2:
            g_t_e = np.stack([np.atleast_2d(ns.g_t[t].predict(e.s1))
                              for t in range(2, M + 1)], axis=1)
            p_et_e = np.stack([np.atleast_2d(ns.p_et[t].predict(e.s0))
                               for t in range(2, M + 1)], axis=1)
        else:
            g_t_e = np.zeros((e.n, m1, d_o))
            p_et_e = np.zeros((e.n, m1, d_o))
        ev = EValues(phi1, p_e1, g_s1, h_s0, g_t_e, p_et_e)
    else:
        z = np.zeros
        ev = EValues(z((e.n, d_e)), z((e.n, d_e)), z(e.n), z(e.n),
                     z((e.n, m1, d_o)), z((e.n, m1, d_o)))

    clip_count = 0
    if o.n:
        s1_o = o.state(1)
        ybar = o.ybar()
        if ns.scope != "blips":
            raw_prob = ns.q_odds.predict_proba(s1_o, clip=0.0)
            clip_count = int(((raw_prob < ns.clip_eps)
                              | (raw_prob > 1 - ns.clip_eps)).sum())
            odds = ns.q_odds.predict_odds(s1_o, clip=ns.clip_eps)
            q = odds[:, None] * np.atleast_2d(ns.q_reg.predict(s1_o))
            g_s1_o = np.ravel(ns.g.predict(s1_o))
        else:
            q = np.zeros((o.n, d_e))
            g_s1_o = np.zeros(o.n)
        if ns.scope != "static" and M >= 2:
            phi_ot = np.stack(
                [eval_feature_map(maps.o, o.treatments[:, t - 1, :], o.state(t - 1))
                 for t in range(2, M + 1)], axis=1)
            ybar_t = np.stack([o.ybar_from(t) for t in range(2, M + 1)], axis=1)
            b_ot = np.stack([np.ravel(ns.b_ot[t].predict(o.state(t - 1)))
                             for t in range(2, M + 1)], axis=1)
            p_o = np.full((o.n, M - 1, M - 1, d_o), np.nan)
            for t in range(2, M + 1):
                s_prev = o.state(t - 1)
                for tau in range(t, M + 1):
                    p_o[:, tau - 2, t - 2, :] = np.atleast_2d(
                        ns.p_o[(tau, t)].predict(s_prev))
            if ns.scope == "dynamic":
                g_t_o = np.stack([np.atleast_2d(ns.g_t[t].predict(s1_o))
                                  for t in range(2, M + 1)], axis=1)
            else:
                g_t_o = np.zeros((o.n, m1, d_o))
        else:
            phi_ot = np.zeros((o.n, m1, d_o))
            g_t_o = np.zeros((o.n, m1, d_o))
            ybar_t = np.zeros((o.n, m1))
            b_ot = np.zeros((o.n, m1))
            p_o = np.zeros((o.n, m1, m1, d_o))
        ov = OValues(ybar, g_s1_o, q, phi_ot, g_t_o, ybar_t, b_ot, p_o)
    else:
        z = np.zeros
        m1 = max(M - 1, 0)
        ov = OValues(z(0), z(0), z((0, d_e)), z((0, m1, d_o)), z((0, m1, d_o)),
                     z((0, m1)), z((0, m1)), z((0, m1, m1, d_o)))

    return NuisanceValues(d_e=d_e, d_o=d_o, M=M, e=ev, o=ov,
                          source_fold=ns.fold, odds_clip_count=clip_count)


def predict_nuisances(ns: NuisanceSet, data: PanelDataset) -> NuisanceValues:
    """All score inputs for each unit of ``data``, as dataset-aligned arrays."""
    return ns.values_for(data)
