"""Data generation with known ground truth.

Two generators:

* a linear Markovian process (state transition B and outcome loading c are
  shared across the experimental and observational settings; treatment
  effects and policies may differ), with closed-form structural parameters
  and exact analytic nuisance functions;
* a lag-6 feed-forward semi-synthetic generator with lumpy autocorrelated
  treatments, mixture residuals, and time-invariant demographics embedded
  into the state vector.

Both expose counterfactual oracles built on paired-noise simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .data_model import (
    ExperimentalArrays,
    FeatureMaps,
    ObservationalArrays,
    PanelDataset,
    Setting,
)
from .exceptions import (
    InvarianceViolation,
    NotSPD,
    UnstableB,
    UnstableCompanion,
)
from .nuisance import EValues, NuisanceValues, OValues
from .snmm import ThetaVector


def _spectral_radius(m: np.ndarray) -> float:
    if m.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(m)).max())


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


# ---------------------------------------------------------------------------
# Linear Markovian process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearDGPParams:
    """S_t = A_d T_t + B S_{t-1} + eps, Y_t = c'S_t + eta,
    T_t = D_d T_{t-1} + G_d S_{t-1} + zeta.

    ``B`` and ``c`` are shared between settings by construction; use
    :meth:`from_two_settings` when validating externally supplied per-setting
    matrices.
    """

    a_e: np.ndarray            # (p, k_e)
    a_o: np.ndarray            # (p, k_o)
    b: np.ndarray              # (p, p)
    c: np.ndarray              # (p,)
    d_e: np.ndarray            # (k_e, k_e)
    d_o: np.ndarray            # (k_o, k_o)
    g_e: np.ndarray            # (k_e, p)
    g_o: np.ndarray            # (k_o, p)
    sigma_eps: float = 1.0
    sigma_eta: float = 0.5
    sigma_zeta: float = 1.0
    M: int = 2

    def __post_init__(self):
        for name in ("a_e", "a_o", "b", "c", "d_e", "d_o", "g_e", "g_o"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        rho = _spectral_radius(self.b)
        if rho >= 1.0:
            raise UnstableB(f"state transition spectral radius {rho:.4f} >= 1")
        for setting in (Setting.EXPERIMENTAL, Setting.OBSERVATIONAL):
            rho_cl = _spectral_radius(self.closed_loop(setting))
            if rho_cl >= 1.0:
                raise UnstableB(
                    f"closed-loop dynamics unstable in setting "
                    f"{setting.value!r} (spectral radius {rho_cl:.4f})"
                )

    @staticmethod
    def from_two_settings(a_e, a_o, b_e, b_o, c_e, c_o, d_e, d_o, g_e, g_o,
                          **kw) -> "LinearDGPParams":
        """Reject any configuration whose shared dynamics differ across settings."""
        b_e, b_o = np.asarray(b_e, float), np.asarray(b_o, float)
        c_e, c_o = np.asarray(c_e, float), np.asarray(c_o, float)
        if not np.array_equal(b_e, b_o):
            raise InvarianceViolation(
                "state transition matrix must be identical across settings"
            )
        if not np.array_equal(c_e, c_o):
            raise InvarianceViolation(
                "outcome loading must be identical across settings"
            )
        return LinearDGPParams(a_e=a_e, a_o=a_o, b=b_e, c=c_e, d_e=d_e,
                               d_o=d_o, g_e=g_e, g_o=g_o, **kw)

    @property
    def p(self) -> int:
        return self.b.shape[0]

    @property
    def k_e(self) -> int:
        return self.a_e.shape[1]

    @property
    def k_o(self) -> int:
        return self.a_o.shape[1]

    def setting_matrices(self, setting: Setting):
        if setting is Setting.EXPERIMENTAL:
            return self.a_e, self.d_e, self.g_e
        return self.a_o, self.d_o, self.g_o

    def closed_loop(self, setting: Setting) -> np.ndarray:
        """Transition of the stacked (S, T) chain under the setting's policy."""
        a, d, g = self.setting_matrices(setting)
        p, k = self.p, a.shape[1]
        m = np.zeros((p + k, p + k))
        m[:p, :p] = self.b + a @ g
        m[:p, p:] = a @ d
        m[p:, :p] = g
        m[p:, p:] = d
        return m

    def noise_cov(self, setting: Setting) -> np.ndarray:
        a, _, _ = self.setting_matrices(setting)
        p, k = self.p, a.shape[1]
        q = np.zeros((p + k, p + k))
        q[:p, :p] = self.sigma_eps ** 2 * np.eye(p) + self.sigma_zeta ** 2 * (a @ a.T)
        q[:p, p:] = self.sigma_zeta ** 2 * a
        q[p:, :p] = self.sigma_zeta ** 2 * a.T
        q[p:, p:] = self.sigma_zeta ** 2 * np.eye(k)
        return q

    def stationary_cov(self, setting: Setting) -> np.ndarray:
        """Stationary covariance of the stacked (S, T) chain (Lyapunov solve)."""
        m = self.closed_loop(setting)
        q = self.noise_cov(setting)
        if q.size == 0:
            return q
        sigma = solve_discrete_lyapunov(m, q)
        return 0.5 * (sigma + sigma.T)

    def to_dict(self) -> dict:
        return {
            "p": self.p, "k_e": self.k_e, "k_o": self.k_o, "M": self.M,
            "A_e": self.a_e.tolist(), "A_o": self.a_o.tolist(),
            "B": self.b.tolist(), "C": self.c.tolist(),
            "D_e": self.d_e.tolist(), "D_o": self.d_o.tolist(),
            "G_e": self.g_e.tolist(), "G_o": self.g_o.tolist(),
            "sigma_eps": self.sigma_eps, "sigma_eta": self.sigma_eta,
            "sigma_zeta": self.sigma_zeta,
        }

    @staticmethod
    def from_dict(d: dict) -> "LinearDGPParams":
        return LinearDGPParams(
            a_e=np.array(d["A_e"], float), a_o=np.array(d["A_o"], float),
            b=np.array(d["B"], float), c=np.array(d["C"], float),
            d_e=np.array(d["D_e"], float), d_o=np.array(d["D_o"], float),
            g_e=np.array(d["G_e"], float), g_o=np.array(d["G_o"], float),
            sigma_eps=d.get("sigma_eps", 1.0), sigma_eta=d.get("sigma_eta", 0.5),
            sigma_zeta=d.get("sigma_zeta", 1.0), M=d["M"],
        )


def random_linear_params(p: int, k: int, M: int, seed: int, *,
                         adaptive: bool = True, shared_policy: bool = True,
                         b_radius: float = 0.6,
                         sigma_eps: float = 1.0, sigma_eta: float = 0.5,
                         sigma_zeta: float = 1.0) -> LinearDGPParams:
    """Draw a stable random parameterization.

    With ``shared_policy`` the two settings use the same treatment effects
    and policy, so observational units double as a long-format version of
    the experimental world. ``adaptive`` switches on treatment
    autocorrelation and state feedback in the policy.
    """
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(p, p)) / math.sqrt(p)
    b *= b_radius / max(_spectral_radius(b), 1e-12)
    c = rng.normal(size=p) / math.sqrt(p)
    a_e = rng.normal(size=(p, k)) / math.sqrt(p)
    a_o = a_e.copy() if shared_policy else rng.normal(size=(p, k)) / math.sqrt(p)
    if adaptive:
        d = 0.5 * np.eye(k) + rng.normal(size=(k, k)) * 0.05
        g = rng.normal(size=(k, p)) * (0.3 / math.sqrt(p))
    else:
        d = np.zeros((k, k))
        g = np.zeros((k, p))
    # state feedback can destabilize the closed loop for some draws; damp it
    # until stable (with g = 0 the loop spectrum is spec(B) union spec(D))
    for damp in (1.0, 0.6, 0.3, 0.1, 0.0):
        g_e = g * damp
        d_o, g_o = (d.copy(), g_e.copy()) if shared_policy \
            else (d * 0.8, g_e * 1.2)
        try:
            return LinearDGPParams(a_e=a_e, a_o=a_o, b=b, c=c, d_e=d,
                                   d_o=d_o, g_e=g_e, g_o=g_o,
                                   sigma_eps=sigma_eps, sigma_eta=sigma_eta,
                                   sigma_zeta=sigma_zeta, M=M)
        except UnstableB:
            continue
    raise UnstableB("could not stabilize the drawn policy")  # pragma: no cover


def adaptive_comparison_params(p: int, k: int, M: int, seed: int, *,
                               autocorr: float = 0.6,
                               feedback: float = 0.6) -> LinearDGPParams:
    """Strongly adaptive shared-policy world for estimator comparisons.

    Treatment autocorrelation is ``autocorr`` and the policy loads
    positively on the state directions the treatments push, so unadjusted
    pipelines over-attribute future treatments to the period-1 effect.
    """
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(p, p)) / math.sqrt(p)
    b *= 0.55 / max(_spectral_radius(b), 1e-12)
    a = rng.normal(size=(p, k)) / math.sqrt(p)
    c = rng.normal(size=p) / math.sqrt(p)
    if float(np.sum(c @ a)) < 0:
        c = -c
    d = autocorr * np.eye(k)
    g = feedback * a.T / p
    base = dict(a_e=a, a_o=a, b=b, c=c, d_e=d, d_o=d, g_e=g, g_o=g,
                sigma_eps=1.0, sigma_eta=0.5, sigma_zeta=1.0, M=M)
    try:
        return LinearDGPParams(**base)
    except UnstableB:
        # damp the feedback until the closed loop is stable
        for shrink in (0.5, 0.25, 0.1):
            try:
                return LinearDGPParams(**{**base, "g_e": g * shrink,
                                          "g_o": g * shrink})
            except UnstableB:
                continue
        raise


_BURN_IN = 10


def _simulate_setting(params: LinearDGPParams, setting: Setting, n: int,
                      rng: np.random.Generator, n_periods: int,
                      do_t1: Optional[np.ndarray] = None,
                      zero_future: bool = False):
    """Simulate n trajectories for ``n_periods`` recorded periods.

    Returns (s0, treatments (n, T, k), surrogates (n, T, p), outcomes (n, T)).
    Starts from a stationary draw and burns in 10 periods so recorded data
    sit on the stationary path. ``do_t1`` forces the period-1 treatment;
    ``zero_future`` forces T_t = 0 for t >= 2.
    """
    a, d, g = params.setting_matrices(setting)
    p, k = params.p, a.shape[1]
    chol = _psd_sqrt(params.stationary_cov(setting))
    z = rng.standard_normal((n, p + k)) @ chol.T
    s = z[:, :p].copy()
    t = z[:, p:].copy()
    for _ in range(_BURN_IN):
        zeta = params.sigma_zeta * rng.standard_normal((n, k))
        eps = params.sigma_eps * rng.standard_normal((n, p))
        t = t @ d.T + s @ g.T + zeta
        s = t @ a.T + s @ b_T(params) + eps
    s0 = s.copy()
    treatments = np.zeros((n, n_periods, k))
    surrogates = np.zeros((n, n_periods, p))
    outcomes = np.zeros((n, n_periods))
    for step in range(1, n_periods + 1):
        zeta = params.sigma_zeta * rng.standard_normal((n, k))
        eps = params.sigma_eps * rng.standard_normal((n, p))
        eta = params.sigma_eta * rng.standard_normal(n)
        if step == 1 and do_t1 is not None:
            t = np.tile(np.asarray(do_t1, dtype=float), (n, 1))
        elif step >= 2 and zero_future:
            t = np.zeros((n, k))
        else:
            t = t @ d.T + s @ g.T + zeta
        s = t @ a.T + s @ b_T(params) + eps
        treatments[:, step - 1] = t
        surrogates[:, step - 1] = s
        outcomes[:, step - 1] = s @ params.c + eta
    return s0, treatments, surrogates, outcomes


def b_T(params: LinearDGPParams) -> np.ndarray:
    return params.b.T


def simulate_linear(params: LinearDGPParams, n_e: int, n_o: int,
                    seed: int) -> PanelDataset:
    """Experimental units carry (S_0, T_1, S_1); observational carry M periods.

    Each setting consumes an independent derived stream, so changing one
    setting's size never reshuffles the other.
    """
    rng_e = np.random.default_rng([seed, 0])
    rng_o = np.random.default_rng([seed, 1])
    exp = obs = None
    if n_e:
        s0, tr, su, _ = _simulate_setting(params, Setting.EXPERIMENTAL, n_e,
                                          rng_e, 1)
        exp = ExperimentalArrays(
            unit_ids=tuple(f"e{i}" for i in range(n_e)),
            s0=s0, t1=tr[:, 0], s1=su[:, 0], y1=np.full(n_e, np.nan),
        )
    if n_o:
        s0, tr, su, yo = _simulate_setting(params, Setting.OBSERVATIONAL, n_o,
                                           rng_o, params.M)
        obs = ObservationalArrays(
            unit_ids=tuple(f"o{i}" for i in range(n_o)),
            s0=s0, treatments=tr, surrogates=su, outcomes=yo,
        )
    meta = {"generator": "linear", "seed": seed, "n_e": n_e, "n_o": n_o}
    return PanelDataset.from_arrays(exp, obs, metadata=meta)


def ground_truth_theta(params: LinearDGPParams) -> ThetaVector:
    """Closed-form structural parameters for identity feature maps.

    theta0 = sum_j c' B^{j-1} A_e; theta_{o,t} = sum_{j>=t} c' B^{j-t} A_o.
    """
    M = params.M
    powers = [np.linalg.matrix_power(params.b, j) for j in range(M)]
    cb = [params.c @ powers[j] for j in range(M)]      # c' B^j
    theta0 = np.sum([cb[j - 1] @ params.a_e for j in range(1, M + 1)], axis=0)
    theta_o = {
        t: np.sum([cb[j - t] @ params.a_o for j in range(t, M + 1)], axis=0)
        for t in range(2, M + 1)
    }
    return ThetaVector(theta0=np.atleast_1d(theta0), theta_o=theta_o)


def blip_truth(params: LinearDGPParams, t: int, j: int,
               setting: Setting = Setting.OBSERVATIONAL) -> np.ndarray:
    """Per-(t, j) blip coefficient c' B^{j-t} A_d."""
    a = params.a_e if setting is Setting.EXPERIMENTAL else params.a_o
    return params.c @ np.linalg.matrix_power(params.b, j - t) @ a


def counterfactual_oracle(params: LinearDGPParams, t1: np.ndarray,
                          t0: np.ndarray, n_mc: int = 256,
                          seed: int = 0) -> float:
    """Mean of Ybar under do(T_1=t1, T_{>1}=0) minus do(T_1=t0, T_{>1}=0).

    Paired noise: both arms replay identical shocks, so for this process the
    per-unit difference is deterministic.
    """
    totals = []
    for arm in (t1, t0):
        rng = np.random.default_rng([seed, 7])
        _, _, _, yo = _simulate_setting(params, Setting.EXPERIMENTAL, n_mc, rng,
                                        params.M, do_t1=np.asarray(arm, float),
                                        zero_future=True)
        totals.append(yo.sum(axis=1))
    return float(np.mean(totals[0] - totals[1]))


# ---------------------------------------------------------------------------
# Analytic nuisance functions for the linear process
#
# Every conditional mean is linear in the conditioning state; coefficients
# follow from the stationary covariance of the stacked (S, T) chain. The
# odds-ratio component of q is the exact Gaussian density ratio of the two
# settings' period-1 state distributions times the sampling prior odds.
# ---------------------------------------------------------------------------

class AnalyticNuisanceSet:
    """Exact nuisance functions (identity feature maps only)."""

    def __init__(self, params: LinearDGPParams, pr_e: float = 0.5):
        if not 0.0 < pr_e < 1.0:
            raise ValueError("pr_e must be in (0, 1)")
        self.params = params
        self.pr_e = pr_e
        self.fold = None
        p = params.p
        self._p = p
        self._setups = {}
        for setting in (Setting.EXPERIMENTAL, Setting.OBSERVATIONAL):
            m = params.closed_loop(setting)
            sig = params.stationary_cov(setting)
            sig_s = sig[:p, :p]
            k_mat = np.linalg.solve(sig_s.T, sig[:p, p:]).T     # E[T|S] coefficient
            r = np.vstack([np.eye(p), k_mat])                   # E[z|S=s] = r s
            self._setups[setting] = {"m": m, "sig": sig, "sig_s": sig_s, "r": r}
        # precomputed linear coefficients
        M = params.M
        e_setup = self._setups[Setting.EXPERIMENTAL]
        o_setup = self._setups[Setting.OBSERVATIONAL]
        self._step_o = self._powers(o_setup, M + 1)
        self._step_e = self._powers(e_setup, M + 1)
        c = params.c

        # g: E_o[Ybar | S_1]
        self.coef_g = c.copy()
        for j in range(2, M + 1):
            self.coef_g = self.coef_g + c @ self._srows(self._step_o[j - 1], o_setup)
        # g_t: E_o[T_t | S_1], t = 2..M   (coefficient matrices (k_o, p))
        self.coef_g_t = {
            t: self._trows(self._step_o[t - 1], o_setup) for t in range(2, M + 1)
        }
        # b_ot: E_o[Ybar_t | S_{t-1}]
        self.coef_b_ot = {
            t: np.sum([c @ self._srows(self._step_o[j - t + 1], o_setup)
                       for j in range(t, M + 1)], axis=0)
            for t in range(2, M + 1)
        }
        # p_o[(tau, t)]: E_o[T_tau | S_{t-1}]
        self.coef_p_o = {
            (tau, t): self._trows(self._step_o[tau - t + 1], o_setup)
            for t in range(2, M + 1) for tau in range(t, M + 1)
        }
        # p_e1: E_e[T_1 | S_0]
        self.coef_p_e1 = self._trows(self._step_e[1], e_setup)
        # E_e[S_1 | S_0]
        self.coef_s1_s0 = self._srows(self._step_e[1], e_setup)
        # h: E_e[g(S_1) | S_0]
        self.coef_h = self.coef_g @ self.coef_s1_s0
        # p_et: E_e[g_t(S_1) | S_0]
        self.coef_p_et = {t: self.coef_g_t[t] @ self.coef_s1_s0
                          for t in range(2, M + 1)}
        # q regression: E_e[T_1 - p_e1(S_0) | S_1]
        sig_e = e_setup["sig"]
        lag_cov = sig_e @ e_setup["m"].T           # E[z_0 z_1']
        cov_s0_s1 = lag_cov[:p, :p]
        sig_s1_e = e_setup["sig_s"]
        coef_t1_s1 = np.linalg.solve(sig_s1_e.T, sig_e[:p, p:]).T
        coef_s0_s1 = np.linalg.solve(sig_s1_e.T, cov_s0_s1.T).T
        self.coef_q_reg = coef_t1_s1 - self.coef_p_e1 @ coef_s0_s1
        # Gaussian log-density pieces for the odds ratio
        self._prec_e = np.linalg.inv(e_setup["sig_s"])
        self._prec_o = np.linalg.inv(o_setup["sig_s"])
        self._log_norm = 0.5 * (np.linalg.slogdet(o_setup["sig_s"])[1]
                                - np.linalg.slogdet(e_setup["sig_s"])[1])

    @staticmethod
    def _powers(setup, count):
        out = [np.eye(setup["m"].shape[0])]
        for _ in range(count):
            out.append(setup["m"] @ out[-1])
        return out

    def _srows(self, m_pow, setup):
        return (m_pow @ setup["r"])[: self._p]

    def _trows(self, m_pow, setup):
        return (m_pow @ setup["r"])[self._p:]

    # -- point evaluators ----------------------------------------------------

    def odds(self, s1: np.ndarray) -> np.ndarray:
        """Pr(e|S_1)/Pr(o|S_1): prior odds times the density ratio."""
        s1 = np.atleast_2d(s1)
        quad = 0.5 * (np.einsum("ni,ij,nj->n", s1, self._prec_o, s1)
                      - np.einsum("ni,ij,nj->n", s1, self._prec_e, s1))
        prior = self.pr_e / (1.0 - self.pr_e)
        return prior * np.exp(np.clip(self._log_norm + quad, -500.0, 500.0))

    def q(self, s1: np.ndarray) -> np.ndarray:
        s1 = np.atleast_2d(s1)
        return self.odds(s1)[:, None] * (s1 @ self.coef_q_reg.T)

    # -- dataset-aligned values ------------------------------------------------

    def values_for(self, data: PanelDataset) -> NuisanceValues:
        params = self.params
        M = data.M
        d_e, d_o = params.k_e, params.k_o
        e, o = data.experimental, data.observational

        if e.n:
            phi1 = e.t1
            p_e1 = e.s0 @ self.coef_p_e1.T
            g_s1 = e.s1 @ self.coef_g
            h_s0 = e.s0 @ self.coef_h
            g_t = np.stack([e.s1 @ self.coef_g_t[t].T for t in range(2, M + 1)],
                           axis=1) if M >= 2 else np.zeros((e.n, 0, d_o))
            p_et = np.stack([e.s0 @ self.coef_p_et[t].T for t in range(2, M + 1)],
                            axis=1) if M >= 2 else np.zeros((e.n, 0, d_o))
            ev = EValues(phi1, p_e1, g_s1, h_s0, g_t, p_et)
        else:
            z = np.zeros
            m1 = max(M - 1, 0)
            ev = EValues(z((0, d_e)), z((0, d_e)), z(0), z(0),
                         z((0, m1, d_o)), z((0, m1, d_o)))

        if o.n:
            s1 = o.state(1)
            ybar = o.ybar()
            g_s1_o = s1 @ self.coef_g
            q = self.q(s1)
            if M >= 2:
                phi_ot = o.treatments[:, 1:, :]
                g_t_o = np.stack([s1 @ self.coef_g_t[t].T for t in range(2, M + 1)],
                                 axis=1)
                ybar_t = np.stack([o.ybar_from(t) for t in range(2, M + 1)], axis=1)
                b_ot = np.stack([o.state(t - 1) @ self.coef_b_ot[t]
                                 for t in range(2, M + 1)], axis=1)
                p_o = np.full((o.n, M - 1, M - 1, d_o), np.nan)
                for t in range(2, M + 1):
                    s_prev = o.state(t - 1)
                    for tau in range(t, M + 1):
                        p_o[:, tau - 2, t - 2, :] = s_prev @ self.coef_p_o[(tau, t)].T
            else:
                m1 = 0
                phi_ot = np.zeros((o.n, m1, d_o))
                g_t_o = np.zeros((o.n, m1, d_o))
                ybar_t = np.zeros((o.n, m1))
                b_ot = np.zeros((o.n, m1))
                p_o = np.zeros((o.n, m1, m1, d_o))
            ov = OValues(ybar, g_s1_o, q, phi_ot, g_t_o, ybar_t, b_ot, p_o)
        else:
            z = np.zeros
            m1 = max(M - 1, 0)
            ov = OValues(z(0), z(0), z((0, d_e)), z((0, m1, d_o)),
                         z((0, m1, d_o)), z((0, m1)), z((0, m1)),
                         z((0, m1, m1, d_o)))
        return NuisanceValues(d_e=d_e, d_o=d_o, M=M, e=ev, o=ov,
                              source_fold="analytic")


# ---------------------------------------------------------------------------
# Covariance perturbation for the semi-synthetic initial window
# ---------------------------------------------------------------------------

def perturb_covariance(base: np.ndarray, k_top: int, seed: int) -> np.ndarray:
    """Keep the top-k eigenpairs; refit the remaining spectrum with a fitted
    exponential-decay curve and a random orthonormal completion."""
    base = np.asarray(base, dtype=float)
    if base.ndim != 2 or base.shape[0] != base.shape[1]:
        raise NotSPD("covariance must be square")
    if not np.allclose(base, base.T, atol=1e-10):
        raise NotSPD("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(base)
    if vals.min() <= 0.0:
        raise NotSPD(f"covariance must be positive definite (min eig {vals.min():.3e})")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    dim = base.shape[0]
    if k_top >= dim:
        return base.copy()

    rng = np.random.default_rng(seed)
    top_vals, top_vecs = vals[:k_top], vecs[:, :k_top]
    rest = vals[k_top:]
    floor = 1e-12 * vals[0]
    idx = np.arange(k_top, dim, dtype=float)
    logs = np.log(np.clip(rest, floor, None))
    slope, intercept = np.polyfit(idx, logs, 1) if rest.size > 1 else (0.0, logs[0])
    fitted = np.exp(intercept + slope * idx)
    fitted = np.clip(fitted, floor, None)

    raw = rng.standard_normal((dim, dim - k_top))
    raw -= top_vecs @ (top_vecs.T @ raw)
    q, _ = np.linalg.qr(raw)
    out = (top_vecs * top_vals) @ top_vecs.T + (q * fitted) @ q.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Residual mixture: two-Gaussian body on the central band, lognormal tails
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualMixture:
    body_means: tuple[float, float] = (0.0, 0.0)
    body_sigmas: tuple[float, float] = (0.5, 1.5)
    body_weights: tuple[float, float] = (0.7, 0.3)
    tail_prob: float = 0.05
    tail_log_mu: float = -0.5
    tail_log_sigma: float = 0.6

    def __post_init__(self):
        if abs(sum(self.body_weights) - 1.0) > 1e-9:
            raise ValueError("body mixture weights must sum to 1")
        if not 0.0 <= self.tail_prob < 0.5:
            raise ValueError("tail probability must be in [0, 0.5)")

    def body_cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, mu, sd in zip(self.body_weights, self.body_means, self.body_sigmas):
            if sd == 0.0:
                out = out + w * (x >= mu)
            else:
                out = out + w * 0.5 * (1 + np.vectorize(math.erf)((x - mu) / (sd * math.sqrt(2))))
        return out

    def body_quantile(self, prob: float) -> float:
        lo = min(self.body_means) - 10 * (max(self.body_sigmas) + 1e-12) - 1e-9
        hi = max(self.body_means) + 10 * (max(self.body_sigmas) + 1e-12) + 1e-9
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.body_cdf(np.array(mid)) < prob:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _phi_inv(v: np.ndarray) -> np.ndarray:
    from scipy.special import ndtri
    return ndtri(np.clip(v, 1e-14, 1 - 1e-14))


def sample_residual(mix: ResidualMixture, u: np.ndarray) -> np.ndarray:
    """Deterministic inverse-CDF map from uniforms to mixture residuals.

    The central ``1 - 2 tail_prob`` band comes from the two-component
    Gaussian body; each tail has mass ``tail_prob`` and lognormal shape
    anchored at the body's matching quantile (negated on the left).
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.zeros_like(u)
    tp = mix.tail_prob

    body_mask = (u >= tp) & (u <= 1 - tp) if tp > 0 else np.ones_like(u, bool)
    if body_mask.any():
        v = (u[body_mask] - tp) / max(1 - 2 * tp, 1e-300)
        w1 = mix.body_weights[0]
        comp1 = v < w1
        z = np.where(comp1, v / max(w1, 1e-300),
                     (v - w1) / max(mix.body_weights[1], 1e-300))
        vals = np.zeros_like(z)
        for ci, use in ((0, comp1), (1, ~comp1)):
            if not use.any():
                continue
            mu, sd = mix.body_means[ci], mix.body_sigmas[ci]
            vals[use] = mu if sd == 0.0 else mu + sd * _phi_inv(z[use])
        out[body_mask] = vals

    if tp > 0:
        q05 = mix.body_quantile(tp)
        q95 = mix.body_quantile(1 - tp)
        left = u < tp
        if left.any():
            v = (tp - u[left]) / tp
            out[left] = q05 - np.exp(mix.tail_log_mu
                                     + mix.tail_log_sigma * _phi_inv(v))
        right = u > 1 - tp
        if right.any():
            v = (u[right] - (1 - tp)) / tp
            out[right] = q95 + np.exp(mix.tail_log_mu
                                      + mix.tail_log_sigma * _phi_inv(v))
    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# Lag-6 semi-synthetic generator
# ---------------------------------------------------------------------------

LAGS = 6


@dataclass(frozen=True)
class SemiSynthConfig:
    """Feed-forward panel with lag-6 dynamics and lumpy treatments.

    The recorded state vector concatenates the proxies and the
    time-invariant demographics; one proxy coordinate doubles as the
    per-period outcome.
    """

    n_proxies: int = 6
    n_treat: int = 2
    M: int = 4
    demographics_dim: int = 2
    base_cov: Optional[np.ndarray] = None        # (n_treat+n_proxies) square
    base_cov_seed: int = 11
    init_scale: float = 1.0                      # scales the initial window draw
    k_top_eigs: int = 4
    treat_autocorr: float = 0.45                 # lag-1 treatment persistence
    treat_cross: float = 0.08                    # proxy -> treatment loading
    proxy_autocorr: float = 0.45                 # lag-1 proxy persistence
    proxy_cross: float = 0.05
    lag_decay: float = 0.4                       # geometric decay across lags
    effect_scale: float = 0.8                    # treatment -> proxy effect
    demo_to_treat: float = 0.3
    demo_to_proxy: float = 0.3
    treat_threshold: float = 1.6                 # lumpiness truncation
    outcome_proxy: int = 0
    novel_treatment: bool = True
    novel_effect_scale: float = 0.8
    treat_residuals: ResidualMixture = field(
        default_factory=lambda: ResidualMixture(body_sigmas=(0.4, 1.0)))
    proxy_residuals: ResidualMixture = field(default_factory=ResidualMixture)
    coef_seed: int = 5

    @property
    def k_e(self) -> int:
        return self.n_treat + (1 if self.novel_treatment else 0)

    @property
    def state_dim(self) -> int:
        return self.n_proxies + self.demographics_dim


class _SemiSynthSystem:
    """Materialized coefficient matrices for a SemiSynthConfig."""

    def __init__(self, cfg: SemiSynthConfig):
        self.cfg = cfg
        k, p = cfg.n_treat, cfg.n_proxies
        rng = np.random.default_rng(cfg.coef_seed)
        decay = cfg.lag_decay ** np.arange(LAGS)
        self.kappa = [cfg.treat_autocorr * decay[j] * np.eye(k)
                      + 0.02 * decay[j] * rng.standard_normal((k, k))
                      for j in range(LAGS)]
        self.alpha = [cfg.treat_cross * decay[j] * rng.standard_normal((k, p)) / math.sqrt(p)
                      for j in range(LAGS)]
        self.gamma = [cfg.proxy_autocorr * decay[j] * np.eye(p)
                      + cfg.proxy_cross * decay[j] * rng.standard_normal((p, p)) / math.sqrt(p)
                      for j in range(LAGS)]
        self.theta = cfg.effect_scale * (np.eye(p, k)
                                         + 0.2 * rng.standard_normal((p, k)))
        self.lam = cfg.demo_to_treat * rng.standard_normal((k, cfg.demographics_dim))
        self.beta = cfg.demo_to_proxy * rng.standard_normal((p, cfg.demographics_dim))
        if cfg.novel_treatment:
            self.theta_novel = cfg.novel_effect_scale * (
                rng.standard_normal(p) / math.sqrt(p) + np.eye(p, 1)[:, 0])
        else:
            self.theta_novel = np.zeros(p)

        rho = _spectral_radius(self.companion())
        if rho >= 1.0:
            raise UnstableCompanion(
                f"lag system spectral radius {rho:.4f} >= 1"
            )
        if cfg.base_cov is not None:
            base = np.asarray(cfg.base_cov, dtype=float)
        else:
            crng = np.random.default_rng(cfg.base_cov_seed)
            dim = k + p
            basis, _ = np.linalg.qr(crng.standard_normal((dim, dim)))
            spectrum = 2.0 * 0.7 ** np.arange(dim) + 0.1
            base = (basis * spectrum) @ basis.T
            base = 0.5 * (base + base.T)
        self.init_cov = perturb_covariance(base, cfg.k_top_eigs,
                                           cfg.base_cov_seed + 1)
        self.init_chol = _psd_sqrt(self.init_cov)

    def companion(self) -> np.ndarray:
        """Stacked-lag transition with the policy substituted into the proxies."""
        cfg = self.cfg
        k, p = cfg.n_treat, cfg.n_proxies
        d = k + p
        comp = np.zeros((d * LAGS, d * LAGS))
        for j in range(LAGS):
            blk = np.zeros((d, d))
            blk[:k, :k] = self.kappa[j]
            blk[:k, k:] = self.alpha[j]
            blk[k:, :k] = self.theta @ self.kappa[j]
            blk[k:, k:] = self.theta @ self.alpha[j] + self.gamma[j]
            comp[:d, j * d:(j + 1) * d] = blk
        comp[d:, :-d] = np.eye(d * (LAGS - 1))
        return comp


def _lag_sum(buffers: list[np.ndarray], coefs: list[np.ndarray]) -> np.ndarray:
    out = buffers[0] @ coefs[0].T
    for j in range(1, LAGS):
        out += buffers[j] @ coefs[j].T
    return out


def _simulate_semi(cfg: SemiSynthConfig, n: int, rng: np.random.Generator,
                   n_periods: int, *, experimental: bool,
                   do_t1: Optional[np.ndarray] = None,
                   zero_future: bool = False, zero_noise: bool = False):
    """Feed-forward simulation; returns (s0, treatments, states, outcomes).

    The recorded state is (proxies, demographics). In the experimental
    setting the novel treatment column is drawn exogenously at period 1.
    """
    sys_ = _SemiSynthSystem(cfg)
    k, p = cfg.n_treat, cfg.n_proxies
    demo = rng.standard_normal((n, cfg.demographics_dim))
    if zero_noise:
        demo = np.zeros_like(demo)
    init = cfg.init_scale * (rng.standard_normal((n, LAGS, k + p))
                             @ sys_.init_chol.T)
    if zero_noise:
        init = np.zeros_like(init)
    # lag buffers, index 0 = most recent
    t_lags = [np.where(np.abs(init[:, j, :k]) < cfg.treat_threshold, 0.0,
                       init[:, j, :k]) for j in range(LAGS)]
    s_lags = [init[:, j, k:] for j in range(LAGS)]

    k_rec = cfg.k_e if experimental else cfg.n_treat
    s0 = np.hstack([s_lags[0], demo])
    treatments = np.zeros((n, n_periods, k_rec))
    states = np.zeros((n, n_periods, cfg.state_dim))
    outcomes = np.zeros((n, n_periods))

    for step in range(1, n_periods + 1):
        u_t = rng.uniform(size=(n, k))
        u_s = rng.uniform(size=(n, p))
        eta = np.zeros((n, k)) if zero_noise else np.column_stack(
            [sample_residual(cfg.treat_residuals, u_t[:, i]) for i in range(k)])
        eps = np.zeros((n, p)) if zero_noise else np.column_stack(
            [sample_residual(cfg.proxy_residuals, u_s[:, i]) for i in range(p)])

        novel = np.zeros(n)
        if step == 1 and do_t1 is not None:
            t_full = np.tile(np.asarray(do_t1, float), (n, 1))
            t_base = t_full[:, :k]
            if experimental and cfg.novel_treatment:
                novel = t_full[:, k]
        elif step >= 2 and zero_future:
            t_base = np.zeros((n, k))
        else:
            t_base = (_lag_sum(t_lags, sys_.kappa) + _lag_sum(s_lags, sys_.alpha)
                      + demo @ sys_.lam.T + eta)
            t_base = np.where(np.abs(t_base) < cfg.treat_threshold, 0.0, t_base)
            if experimental and cfg.novel_treatment and step == 1:
                u_nov = rng.uniform(size=n)
                novel = sample_residual(cfg.treat_residuals, u_nov)
                novel = np.where(np.abs(novel) < cfg.treat_threshold, 0.0, novel)

        s_new = (sys_.theta @ t_base.T).T + _lag_sum(s_lags, sys_.gamma) \
            + demo @ sys_.beta.T + eps
        s_new += np.outer(novel, sys_.theta_novel)

        t_lags = [t_base] + t_lags[:-1]
        s_lags = [s_new] + s_lags[:-1]

        if experimental and cfg.novel_treatment:
            treatments[:, step - 1] = np.hstack([t_base, novel[:, None]])
        else:
            treatments[:, step - 1] = t_base
        states[:, step - 1] = np.hstack([s_new, demo])
        outcomes[:, step - 1] = s_new[:, cfg.outcome_proxy]
    return s0, treatments, states, outcomes


def simulate_semi_synthetic(cfg: SemiSynthConfig, n_e: int, n_o: int,
                            seed: int) -> PanelDataset:
    """Two-setting panel from the lag-6 generator; e-units record one period."""
    exp = obs = None
    if n_e:
        rng = np.random.default_rng([seed, 0])
        s0, tr, st, _ = _simulate_semi(cfg, n_e, rng, 1, experimental=True)
        exp = ExperimentalArrays(
            unit_ids=tuple(f"e{i}" for i in range(n_e)),
            s0=s0, t1=tr[:, 0], s1=st[:, 0], y1=np.full(n_e, np.nan),
        )
    if n_o:
        rng = np.random.default_rng([seed, 1])
        s0, tr, st, yo = _simulate_semi(cfg, n_o, rng, cfg.M, experimental=False)
        obs = ObservationalArrays(
            unit_ids=tuple(f"o{i}" for i in range(n_o)),
            s0=s0, treatments=tr, surrogates=st, outcomes=yo,
        )
    meta = {"generator": "semi_synthetic", "seed": seed, "n_e": n_e, "n_o": n_o}
    return PanelDataset.from_arrays(exp, obs, metadata=meta)


def semi_synthetic_oracle(cfg: SemiSynthConfig, t1: np.ndarray, t0: np.ndarray,
                          n_mc: int = 64, seed: int = 0) -> float:
    """Paired-residual counterfactual effect of moving T_1 from t0 to t1
    with all later treatments forced to zero."""
    totals = []
    for arm in (t1, t0):
        rng = np.random.default_rng([seed, 3])
        _, _, _, yo = _simulate_semi(cfg, n_mc, rng, cfg.M, experimental=True,
                                     do_t1=np.asarray(arm, float),
                                     zero_future=True)
        totals.append(yo.sum(axis=1))
    return float(np.mean(totals[0] - totals[1]))


def semi_synthetic_truth(cfg: SemiSynthConfig) -> np.ndarray:
    """theta0 for the semi-synthetic process via the noiseless impulse response."""
    k_e = cfg.k_e
    out = np.zeros(k_e)
    for i in range(k_e):
        arm = np.zeros(k_e)
        arm[i] = 1.0
        rng = np.random.default_rng(0)
        _, _, _, y1 = _simulate_semi(cfg, 1, rng, cfg.M, experimental=True,
                                     do_t1=arm, zero_future=True, zero_noise=True)
        rng = np.random.default_rng(0)
        _, _, _, y0 = _simulate_semi(cfg, 1, rng, cfg.M, experimental=True,
                                     do_t1=np.zeros(k_e), zero_future=True,
                                     zero_noise=True)
        out[i] = float((y1 - y0).sum())
    return out


def feature_maps_for(data_or_params) -> FeatureMaps:
    """Identity maps sized to a dataset or parameter object."""
    return FeatureMaps.identity(data_or_params.k_e, data_or_params.k_o)
