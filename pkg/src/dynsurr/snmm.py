"""Score evaluation, the stacked linear moment system, and its solution.

Every score is affine in the structural parameter vector
``theta = (theta0; theta_{o,2}; ...; theta_{o,M})``, so each unit contributes
``psi_i(theta) = a_i - G_i theta`` and the estimator is the exact solution of
``(sum_i G_i) theta = sum_i a_i``. The stacked Jacobian is block upper
triangular in the block order (theta0, theta_{o,2}, ..., theta_{o,M}):
period-t scores involve only theta_{o,tau} for tau >= t, and the period-1
score is the only one touching theta0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .data_model import FeatureMaps, PanelDataset, UnitTrajectory, eval_feature_map
from .exceptions import MissingOutcome, SingularBlock, SingularCovariance
from .learners import LearnerConfig
from .nuisance import FOLD_S, FOLD_S_PRIME, FoldPair, NuisanceSet, NuisanceValues

BLOCK_TOL_FACTOR = 1e-8


class SystemMode(str, Enum):
    STATIC = "static"     # theta0 only, no dynamic adjustment terms
    DYNAMIC = "dynamic"   # full stacked system
    BLIPS = "blips"       # theta_{o,t} blocks only (observational scores)


@dataclass(frozen=True)
class ScoreOptions:
    """Sensitivity switches for two ambiguous score readings.

    ``psi1_include_o`` toggles the observational correction term of the
    period-1 score (dropping it doubles down on the experimental part and
    reproduces the index-style estimate). ``psi_t_multiplier_tau`` replaces
    the period-t multiplier's own-period projection p_{o,t,t} with
    p_{o,tau,t} for a fixed later tau; the moment stays zero at the truth
    either way, only efficiency changes.
    """

    psi1_include_o: bool = True
    psi_t_multiplier_tau: Optional[int] = None


DEFAULT_SCORE_OPTIONS = ScoreOptions()


@dataclass(frozen=True)
class ThetaVector:
    theta0: np.ndarray                 # (d_e,); empty in BLIPS mode
    theta_o: dict[int, np.ndarray]     # t -> (d_o,)

    @property
    def stacked(self) -> np.ndarray:
        parts = [self.theta0] + [self.theta_o[t] for t in sorted(self.theta_o)]
        return np.concatenate(parts) if parts else np.zeros(0)

    @staticmethod
    def zeros(d_e: int, d_o: int, M: int) -> "ThetaVector":
        return ThetaVector(np.zeros(d_e), {t: np.zeros(d_o) for t in range(2, M + 1)})


def _blocks(mode: SystemMode, d_e: int, d_o: int, M: int) -> list[tuple[int, slice]]:
    """(period, slice) pairs defining the stacked layout; period 1 <-> theta0."""
    out: list[tuple[int, slice]] = []
    off = 0
    if mode is not SystemMode.BLIPS:
        out.append((1, slice(0, d_e)))
        off = d_e
    if mode is not SystemMode.STATIC:
        for t in range(2, M + 1):
            out.append((t, slice(off, off + d_o)))
            off += d_o
    return out


@dataclass
class MomentSystem:
    mode: SystemMode
    d_e: int
    d_o: int
    M: int
    n: int                      # pooled sample count (both settings)
    a: np.ndarray               # (D,)
    G: np.ndarray               # (D, D)
    a_units: np.ndarray         # (n, D) per-unit theta-free parts
    G_units: np.ndarray         # (n, D, D) per-unit gradients
    blocks: list[tuple[int, slice]] = field(default_factory=list)
    odds_clip_count: int = 0

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def scores_at(self, theta: ThetaVector | np.ndarray) -> np.ndarray:
        """Per-unit score vectors psi_i(theta), shape (n, D)."""
        vec = theta.stacked if isinstance(theta, ThetaVector) else np.asarray(theta)
        return self.a_units - self.G_units @ vec

    def empirical_moment(self, theta: ThetaVector | np.ndarray) -> np.ndarray:
        vec = theta.stacked if isinstance(theta, ThetaVector) else np.asarray(theta)
        return (self.a - self.G @ vec) / self.n

    def unstack(self, vec: np.ndarray) -> ThetaVector:
        theta0 = np.zeros(0)
        theta_o: dict[int, np.ndarray] = {}
        for t, sl in self.blocks:
            if t == 1:
                theta0 = vec[sl]
            else:
                theta_o[t] = vec[sl]
        return ThetaVector(theta0, theta_o)


# ---------------------------------------------------------------------------
# Per-unit score components
# ---------------------------------------------------------------------------

def score_components(values: NuisanceValues, mode: SystemMode,
                     options: ScoreOptions = DEFAULT_SCORE_OPTIONS
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-unit (a_i, G_i) plus a boolean experimental-setting mask.

    Units are stacked experimental-first. Accumulation over units is done
    with ``np.sum`` (pairwise), so totals do not depend on worker count or
    chunking.
    """
    d_e, d_o, M = values.d_e, values.d_o, values.M
    blocks = _blocks(mode, d_e, d_o, M)
    D = blocks[-1][1].stop if blocks else 0
    ev, ov = values.e, values.o
    n_e, n_o = ev.g_s1.shape[0], ov.ybar.shape[0]

    a_e = np.zeros((n_e, D))
    G_e = np.zeros((n_e, D, D))
    a_o = np.zeros((n_o, D))
    G_o = np.zeros((n_o, D, D))

    if mode is not SystemMode.BLIPS and n_e:
        b1 = blocks[0][1]
        r = ev.phi1 - ev.p_e1                      # (n_e, d_e)
        c = ev.g_s1 - ev.h_s0                      # (n_e,)
        a_e[:, b1] = c[:, None] * r
        G_e[:, b1, b1] = r[:, :, None] * r[:, None, :]
        if mode is SystemMode.DYNAMIC:
            w = ev.g_t - ev.p_et                   # (n_e, M-1, d_o)
            for t in range(2, M + 1):
                bt = blocks[t - 1][1]
                G_e[:, b1, bt] = r[:, :, None] * w[:, t - 2, None, :]

    if n_o:
        if mode is not SystemMode.BLIPS and options.psi1_include_o:
            b1 = blocks[0][1]
            u = ov.ybar - ov.g_s1
            a_o[:, b1] = ov.q * u[:, None]
            if mode is SystemMode.DYNAMIC:
                v = ov.phi_ot - ov.g_t             # (n_o, M-1, d_o)
                for t in range(2, M + 1):
                    bt = blocks[t - 1][1]
                    G_o[:, b1, bt] = ov.q[:, :, None] * v[:, t - 2, None, :]
        if mode is not SystemMode.STATIC:
            boff = 0 if mode is SystemMode.BLIPS else 1
            for t in range(2, M + 1):
                bt = blocks[boff + t - 2][1]
                mult_tau = t if options.psi_t_multiplier_tau is None \
                    else max(t, options.psi_t_multiplier_tau)
                m_t = ov.phi_ot[:, t - 2, :] - ov.p_o[:, mult_tau - 2, t - 2, :]
                c_t = ov.ybar_t[:, t - 2] - ov.b_ot[:, t - 2]
                a_o[:, bt] = c_t[:, None] * m_t
                for tau in range(t, M + 1):
                    btau = blocks[boff + tau - 2][1]
                    z = ov.phi_ot[:, tau - 2, :] - ov.p_o[:, tau - 2, t - 2, :]
                    G_o[:, bt, btau] = m_t[:, :, None] * z[:, None, :]

    a_units = np.vstack([a_e, a_o])
    G_units = np.concatenate([G_e, G_o], axis=0)
    mask = np.r_[np.ones(n_e, dtype=bool), np.zeros(n_o, dtype=bool)]
    return a_units, G_units, mask


def dynamic_scores(values: NuisanceValues, theta: ThetaVector) -> np.ndarray:
    """Stacked per-unit orthogonal scores psi(Z; theta, f), shape (n, D)."""
    a, G, _ = score_components(values, SystemMode.DYNAMIC)
    return a - G @ theta.stacked


def static_scores(values: NuisanceValues, theta0: np.ndarray) -> np.ndarray:
    """Per-unit static scores (no dynamic adjustment), shape (n, d_e)."""
    a, G, _ = score_components(values, SystemMode.STATIC)
    return a - G @ np.asarray(theta0, dtype=float)


def assemble_from_values(values: NuisanceValues, mode: SystemMode,
                         options: ScoreOptions = DEFAULT_SCORE_OPTIONS
                         ) -> MomentSystem:
    """Build the linear moment system from precomputed nuisance values."""
    a_units, G_units, _ = score_components(values, mode, options)
    blocks = _blocks(mode, values.d_e, values.d_o, values.M)
    return MomentSystem(
        mode=mode, d_e=values.d_e, d_o=values.d_o, M=values.M,
        n=a_units.shape[0], a=a_units.sum(axis=0), G=G_units.sum(axis=0),
        a_units=a_units, G_units=G_units, blocks=blocks,
        odds_clip_count=values.odds_clip_count,
    )


def assemble_system(data: PanelDataset, fold_pair: FoldPair,
                    nuisance_sets: tuple[NuisanceSet, NuisanceSet],
                    mode: SystemMode = SystemMode.DYNAMIC,
                    options: ScoreOptions = DEFAULT_SCORE_OPTIONS
                    ) -> MomentSystem:
    """Cross-fitted assembly: each half is scored with the other half's models.

    ``nuisance_sets`` is (model trained on S, model trained on S').
    """
    ns_s, ns_sp = nuisance_sets
    if ns_s.fold != FOLD_S or ns_sp.fold != FOLD_S_PRIME:
        raise ValueError(
            "cross-fitting discipline: pass (trained-on-S, trained-on-S') "
            f"in order, got folds ({ns_s.fold!r}, {ns_sp.fold!r})"
        )
    systems = []
    for eval_tag, ns in ((FOLD_S, ns_sp), (FOLD_S_PRIME, ns_s)):
        e_idx, o_idx = fold_pair.half(eval_tag)
        part = data.subset(e_idx, o_idx)
        systems.append(assemble_from_values(ns.values_for(part), mode, options))
    s0, s1 = systems
    return MomentSystem(
        mode=mode, d_e=s0.d_e, d_o=s0.d_o, M=s0.M,
        n=s0.n + s1.n, a=s0.a + s1.a, G=s0.G + s1.G,
        a_units=np.vstack([s0.a_units, s1.a_units]),
        G_units=np.concatenate([s0.G_units, s1.G_units], axis=0),
        blocks=s0.blocks,
        odds_clip_count=s0.odds_clip_count + s1.odds_clip_count,
    )


# ---------------------------------------------------------------------------
# Solving the moment system
# ---------------------------------------------------------------------------

def _check_block(G: np.ndarray, sl: slice, period: int) -> None:
    block = G[sl, sl]
    fro = np.linalg.norm(block)
    if fro == 0.0:
        raise SingularBlock(period, 0.0, 0.0)
    smin = np.linalg.svd(block, compute_uv=False).min()
    tol = BLOCK_TOL_FACTOR * fro
    if smin < tol:
        raise SingularBlock(period, float(smin), float(tol))


def solve_theta(sys: MomentSystem, method: str = "block") -> ThetaVector:
    """Solve G theta = a by block back-substitution (or a dense solve).

    Back-substitution runs from the last period block down to theta0; the
    two methods agree to machine precision and the dense path exists as an
    independent cross-check.
    """
    for period, sl in sys.blocks:
        _check_block(sys.G, sl, period)
    if method == "dense":
        vec = np.linalg.solve(sys.G, sys.a)
        return sys.unstack(vec)
    if method != "block":
        raise ValueError(f"unknown method {method!r}")
    vec = np.zeros(sys.dim)
    for period, sl in reversed(sys.blocks):
        rhs = sys.a[sl].copy()
        for later_period, later_sl in sys.blocks:
            if later_period > period:
                rhs -= sys.G[sl, later_sl] @ vec[later_sl]
        vec[sl] = np.linalg.solve(sys.G[sl, sl], rhs)
    return sys.unstack(vec)


def min_block_singular_values(sys: MomentSystem) -> dict[int, float]:
    return {
        period: float(np.linalg.svd(sys.G[sl, sl], compute_uv=False).min())
        for period, sl in sys.blocks
    }


# ---------------------------------------------------------------------------
# Adjusted outcomes
# ---------------------------------------------------------------------------

def adjusted_outcomes(data: PanelDataset, theta_o: dict[int, np.ndarray],
                      maps: FeatureMaps) -> np.ndarray:
    """Ybar minus the blip effects of all post-period-1 treatments, per o-unit."""
    o = data.observational
    out = o.ybar().copy()
    for t in range(2, data.M + 1):
        phi = eval_feature_map(maps.o, o.treatments[:, t - 1, :], o.state(t - 1))
        out -= np.atleast_2d(phi) @ np.asarray(theta_o[t], dtype=float)
    return out


def adjusted_outcome(traj: UnitTrajectory, theta_o: dict[int, np.ndarray],
                     maps: FeatureMaps) -> float:
    """Single-trajectory version of :func:`adjusted_outcomes`."""
    total = 0.0
    for rec in traj.periods:
        if rec.outcome is None:
            raise MissingOutcome(
                f"unit {traj.unit_id}: outcome absent at period {rec.t}"
            )
        total += rec.outcome
    state = traj.s0
    for rec in traj.periods:
        if rec.t >= 2:
            phi = eval_feature_map(maps.o, rec.treatment, state)
            total -= float(phi @ np.asarray(theta_o[rec.t], dtype=float))
        state = rec.surrogates
    return total


# ---------------------------------------------------------------------------
# Recursive closed-form blip estimates (non-orthogonal plug-in)
# ---------------------------------------------------------------------------

def recursive_closed_form(data: PanelDataset, maps: FeatureMaps,
                          config: Optional[LearnerConfig] = None
                          ) -> tuple[dict[tuple[int, int], np.ndarray],
                                     dict[int, np.ndarray]]:
    """Plug-in blip estimates, peeling periods from M down to 2.

    For each target period j and treatment period t <= j,
    ``theta[t, j] = Ehat[Cov(phi_t | S_{t-1})]^{-1}
    Ehat[phi_t_centered * (Y_j - sum_{tau>t} theta[tau, j]' phi_tau)]``.
    Returns (per-pair blips, per-period sums over j >= t).
    """
    config = config or LearnerConfig()
    o = data.observational
    M = data.M
    d_o = maps.d_o
    if M < 2:
        return {}, {}

    phi = {t: np.atleast_2d(eval_feature_map(
        maps.o, o.treatments[:, t - 1, :], o.state(t - 1))) for t in range(2, M + 1)}
    centered = {}
    cov = {}
    n = o.n
    for t in range(2, M + 1):
        model = config.fit_regression(o.state(t - 1), phi[t])
        resid = phi[t] - np.atleast_2d(model.predict(o.state(t - 1)))
        centered[t] = resid
        c = resid.T @ resid / n
        fro = np.linalg.norm(c)
        if fro == 0.0 or np.linalg.svd(c, compute_uv=False).min() < BLOCK_TOL_FACTOR * fro:
            raise SingularCovariance(
                f"conditional treatment-feature covariance singular at period {t}"
            )
        cov[t] = c

    blips: dict[tuple[int, int], np.ndarray] = {}
    for t in range(M, 1, -1):
        for j in range(t, M + 1):
            resid_y = o.outcomes[:, j - 1].copy()
            for tau in range(t + 1, j + 1):
                resid_y -= phi[tau] @ blips[(tau, j)]
            rhs = centered[t].T @ resid_y / n
            blips[(t, j)] = np.linalg.solve(cov[t], rhs)

    sums = {t: np.sum([blips[(t, j)] for j in range(t, M + 1)], axis=0)
            for t in range(2, M + 1)}
    return blips, sums
