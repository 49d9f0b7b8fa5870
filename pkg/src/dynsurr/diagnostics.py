"""Numerical checks of the moment system: perturbation response of the
empirical moments to single nuisance roles, and controlled corruption for
robustness experiments.

Perturbation directions are random affine functions of each nuisance's own
conditioning state, applied consistently everywhere that nuisance enters the
scores.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .data_model import PanelDataset
from .nuisance import NuisanceValues
from .snmm import MomentSystem, SystemMode, ThetaVector, assemble_from_values

NUISANCE_ROLES = ("g", "q", "h", "p_e1", "g_t", "p_et", "b_ot", "p_o_tau_t")


def clone_values(values: NuisanceValues) -> NuisanceValues:
    return copy.deepcopy(values)


@dataclass(frozen=True)
class AffineDirection:
    """nu(x) = scale * (x @ w + b), one (w, b) column per output coordinate."""

    w: np.ndarray      # (p, d_out)
    b: np.ndarray      # (d_out,)
    scale: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (x @ self.w + self.b)


def _direction(rng: np.random.Generator, p: int, d_out: int,
               scale: float) -> AffineDirection:
    return AffineDirection(
        w=rng.standard_normal((p, d_out)) / np.sqrt(p),
        b=rng.standard_normal(d_out), scale=scale,
    )


def perturb_role(values: NuisanceValues, data: PanelDataset, role: str,
                 epsilon: float, seed: int, scale: float = 1.0
                 ) -> NuisanceValues:
    """Return a copy of ``values`` with one nuisance role shifted by
    ``epsilon`` times a random affine direction of its conditioning state.

    ``role="all"`` perturbs every role at once (independent directions),
    which activates the cross-role curvature of the moment.
    """
    if role == "all":
        out = values
        for i, r in enumerate(NUISANCE_ROLES):
            out = perturb_role(out, data, r, epsilon, seed + 1000 * i, scale)
        return out
    if role not in NUISANCE_ROLES:
        raise ValueError(f"unknown nuisance role {role!r}")
    out = clone_values(values)
    rng = np.random.default_rng([seed, NUISANCE_ROLES.index(role)])
    p = data.p
    M = data.M
    e, o = data.experimental, data.observational

    if role == "g":
        nu = _direction(rng, p, 1, scale)
        if e.n:
            out.e.g_s1 = out.e.g_s1 + epsilon * nu(e.s1)[:, 0]
        if o.n:
            out.o.g_s1 = out.o.g_s1 + epsilon * nu(o.state(1))[:, 0]
    elif role == "q":
        nu = _direction(rng, p, values.d_e, scale)
        if o.n:
            out.o.q = out.o.q + epsilon * nu(o.state(1))
    elif role == "h":
        nu = _direction(rng, p, 1, scale)
        if e.n:
            out.e.h_s0 = out.e.h_s0 + epsilon * nu(e.s0)[:, 0]
    elif role == "p_e1":
        nu = _direction(rng, p, values.d_e, scale)
        if e.n:
            out.e.p_e1 = out.e.p_e1 + epsilon * nu(e.s0)
    elif role == "g_t":
        for t in range(2, M + 1):
            nu = _direction(rng, p, values.d_o, scale)
            if e.n:
                out.e.g_t[:, t - 2, :] += epsilon * nu(e.s1)
            if o.n:
                out.o.g_t[:, t - 2, :] += epsilon * nu(o.state(1))
    elif role == "p_et":
        for t in range(2, M + 1):
            nu = _direction(rng, p, values.d_o, scale)
            if e.n:
                out.e.p_et[:, t - 2, :] += epsilon * nu(e.s0)
    elif role == "b_ot":
        for t in range(2, M + 1):
            nu = _direction(rng, p, 1, scale)
            if o.n:
                out.o.b_ot[:, t - 2] += epsilon * nu(o.state(t - 1))[:, 0]
    elif role == "p_o_tau_t":
        for t in range(2, M + 1):
            for tau in range(t, M + 1):
                nu = _direction(rng, p, values.d_o, scale)
                if o.n:
                    out.o.p_o[:, tau - 2, t - 2, :] += epsilon * nu(o.state(t - 1))
    return out


def moment_response_curve(values: NuisanceValues, data: PanelDataset,
                          role: str, theta_star: ThetaVector,
                          epsilons: np.ndarray, seed: int = 0,
                          scale: float = 1.0,
                          mode: SystemMode = SystemMode.DYNAMIC) -> np.ndarray:
    """|m_n(theta*, f* + eps nu) - m_n(theta*, f*)| for each eps (same sample,
    same direction)."""
    base = assemble_from_values(values, mode)
    m0 = base.empirical_moment(theta_star)
    out = np.zeros(len(epsilons))
    for i, eps in enumerate(np.asarray(epsilons, dtype=float)):
        pert = perturb_role(values, data, role, eps, seed, scale)
        sys_p = assemble_from_values(pert, mode)
        out[i] = np.linalg.norm(sys_p.empirical_moment(theta_star) - m0)
    return out


def loglog_slope(epsilons: np.ndarray, responses: np.ndarray) -> float:
    """Least-squares slope of log|response| against log(eps)."""
    eps = np.asarray(epsilons, dtype=float)
    resp = np.asarray(responses, dtype=float)
    keep = resp > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[keep]), np.log(resp[keep]), 1)[0])


def first_order_coefficient(values: NuisanceValues, data: PanelDataset,
                            role: str, theta_star: ThetaVector,
                            epsilon: float = 1e-3, seed: int = 0,
                            scale: float = 1.0,
                            mode: SystemMode = SystemMode.DYNAMIC
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Centered finite-difference estimate of the per-unit directional
    derivative of the moment, with its Monte-Carlo standard error.

    The scores are at most quadratic in any nuisance, so the symmetric
    difference recovers the linear coefficient exactly.
    """
    plus = assemble_from_values(
        perturb_role(values, data, role, epsilon, seed, scale), mode)
    minus = assemble_from_values(
        perturb_role(values, data, role, -epsilon, seed, scale), mode)
    vec = theta_star.stacked
    psi_plus = plus.scores_at(vec)
    psi_minus = minus.scores_at(vec)
    deriv_units = (psi_plus - psi_minus) / (2 * epsilon)
    n = deriv_units.shape[0]
    mean = deriv_units.mean(axis=0)
    se = deriv_units.std(axis=0, ddof=1) / np.sqrt(n)
    return mean, se


def moment_with_se(sys: MomentSystem, theta: ThetaVector
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Empirical moment and per-coordinate Monte-Carlo standard errors."""
    psi = sys.scores_at(theta)
    n = psi.shape[0]
    return psi.mean(axis=0), psi.std(axis=0, ddof=1) / np.sqrt(n)


# ---------------------------------------------------------------------------
# Controlled corruption for robustness experiments
# ---------------------------------------------------------------------------

def corrupt_static_values(values: NuisanceValues, data: PanelDataset,
                          delta_g: float, delta_q: float,
                          seed: int = 0) -> NuisanceValues:
    """Shift g and/or q by smooth errors of prescribed observational RMS.

    Both corruptions share the same spatial shape so their product does not
    average out; each is normalized to unit RMS over the observational
    period-1 states before scaling by its delta.
    """
    out = clone_values(values)
    rng = np.random.default_rng([seed, 99])
    p = data.p
    w = rng.standard_normal(p) / np.sqrt(p)
    b = rng.standard_normal()
    o = data.observational

    def shape(x):
        return x @ w + b

    rms = float(np.sqrt(np.mean(shape(o.state(1)) ** 2))) if o.n else 1.0
    rms = max(rms, 1e-12)
    if delta_g != 0.0:
        if data.n_e:
            out.e.g_s1 = out.e.g_s1 + delta_g * shape(data.experimental.s1) / rms
        if o.n:
            out.o.g_s1 = out.o.g_s1 + delta_g * shape(o.state(1)) / rms
    if delta_q != 0.0 and o.n:
        direction = np.ones(values.d_e) / np.sqrt(values.d_e)
        out.o.q = out.o.q + delta_q * np.outer(shape(o.state(1)) / rms, direction)
    return out
