"""Sandwich covariance, confidence intervals, and effect-level reporting."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data_model import FeatureMapSpec, PanelDataset, eval_feature_map
from .exceptions import NoExperimentalUnits, SingularJacobian
from .snmm import MomentSystem, ThetaVector


# ---------------------------------------------------------------------------
# Standard-normal quantile (Acklam rational approximation + one refinement)
# ---------------------------------------------------------------------------

_ACKLAM_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACKLAM_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
             6.680131188771972e+01, -1.328068155288572e+01)
_ACKLAM_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACKLAM_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
             3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF, accurate to ~1e-9 after one Halley step."""
    if not 0.0 < p < 1.0:
        if p == 0.0:
            return -math.inf
        if p == 1.0:
            return math.inf
        raise ValueError(f"quantile argument must be in [0, 1], got {p}")
    if p == 0.5:
        return 0.0
    a, b, c, d = _ACKLAM_A, _ACKLAM_B, _ACKLAM_C, _ACKLAM_D
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        x = ((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
             / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1))
    elif p <= p_high:
        q = p - 0.5
        r = q * q
        x = ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
             / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1))
    else:
        q = math.sqrt(-2 * math.log(1 - p))
        x = -((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
              / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1))
    # one Halley refinement against the exact CDF
    e = 0.5 * math.erfc(-x / math.sqrt(2)) - p
    u = e * math.sqrt(2 * math.pi) * math.exp(x * x / 2)
    return x - u / (1 + x * u / 2)


# ---------------------------------------------------------------------------
# Sandwich covariance of the Z-estimate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichCovariance:
    J_hat: np.ndarray
    Sigma_hat: np.ndarray
    V_hat: np.ndarray
    n: int


def sandwich(sys: MomentSystem, theta: ThetaVector) -> SandwichCovariance:
    """J from the exact affine structure, Sigma from the score outer product.

    ``J_hat = -G/n`` (noise-free, no numerical differentiation), ``Sigma_hat``
    the average of psi_i psi_i' at the solved theta, and
    ``V_hat = J^-1 Sigma J^-T`` symmetrized.
    """
    n = sys.n
    J = -sys.G / n
    psi = sys.scores_at(theta)
    Sigma = psi.T @ psi / n
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian("moment Jacobian is singular") from exc
    if np.linalg.cond(J) > 1e12:
        raise SingularJacobian(
            f"moment Jacobian is numerically singular (cond={np.linalg.cond(J):.2e})"
        )
    V = Jinv @ Sigma @ Jinv.T
    V = 0.5 * (V + V.T)
    return SandwichCovariance(J_hat=J, Sigma_hat=Sigma, V_hat=V, n=n)


def ci_linear(nu: np.ndarray, theta: ThetaVector | np.ndarray,
              cov: SandwichCovariance, alpha: float) -> tuple[float, float]:
    """Symmetric normal interval for nu' theta."""
    vec = theta.stacked if isinstance(theta, ThetaVector) else np.asarray(theta)
    nu = np.asarray(nu, dtype=float)
    center = float(nu @ vec)
    if alpha >= 1.0:
        return (center, center)
    z = normal_quantile(1 - alpha / 2)
    half = z * math.sqrt(max(float(nu @ cov.V_hat @ nu), 0.0) / cov.n)
    return (center - half, center + half)


def coordinate_cis(theta: ThetaVector, cov: SandwichCovariance,
                   alpha: float) -> np.ndarray:
    """(D, 2) matrix of per-coordinate intervals in stacked order."""
    vec = theta.stacked
    D = vec.shape[0]
    out = np.zeros((D, 2))
    for j in range(D):
        nu = np.zeros(D)
        nu[j] = 1.0
        out[j] = ci_linear(nu, vec, cov, alpha)
    return out


# ---------------------------------------------------------------------------
# Effect of moving the period-1 treatment from t0 to t1
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EffectEstimate:
    tau_hat: float
    ci: tuple[float, float]
    gamma_hat: float
    mu_hat: float
    t1: np.ndarray
    t0: np.ndarray
    alpha: float


def effect_estimate(theta0: np.ndarray, data: PanelDataset,
                    map_e1: FeatureMapSpec, t1: np.ndarray,
                    t0: np.ndarray) -> float:
    """theta0' average of phi(t1, S_0) - phi(t0, S_0) over experimental units."""
    if data.n_e == 0:
        raise NoExperimentalUnits("effect aggregation needs experimental units")
    s0 = data.experimental.s0
    q_diff = _effect_features(map_e1, s0, t1, t0)
    return float(q_diff.mean(axis=0) @ np.asarray(theta0, dtype=float))


def _effect_features(map_e1: FeatureMapSpec, s0: np.ndarray,
                     t1: np.ndarray, t0: np.ndarray) -> np.ndarray:
    n = s0.shape[0]
    t1b = np.tile(np.asarray(t1, dtype=float), (n, 1))
    t0b = np.tile(np.asarray(t0, dtype=float), (n, 1))
    return (np.atleast_2d(eval_feature_map(map_e1, t1b, s0))
            - np.atleast_2d(eval_feature_map(map_e1, t0b, s0)))


def effect_ci(theta: ThetaVector, cov: SandwichCovariance, data: PanelDataset,
              map_e1: FeatureMapSpec, t1: np.ndarray, t0: np.ndarray,
              alpha: float) -> EffectEstimate:
    """Effect estimate with a CI combining treatment-feature dispersion and
    parameter uncertainty: half-width F^-1(1-alpha/2) sqrt((gamma+mu)/n)."""
    if data.n_e == 0:
        raise NoExperimentalUnits("effect aggregation needs experimental units")
    t1 = np.asarray(t1, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    s0 = data.experimental.s0
    n_e = s0.shape[0]
    n = cov.n
    d_e = theta.theta0.shape[0]

    q = _effect_features(map_e1, s0, t1, t0)       # (n_e, d_e)
    q_mean = q.mean(axis=0)
    tau_hat = float(q_mean @ theta.theta0)

    proj = q @ theta.theta0
    gamma_hat = float((n / n_e) * proj.var())       # plain 1/n_e variance
    mu_hat = float(q_mean @ cov.V_hat[:d_e, :d_e] @ q_mean)
    if alpha >= 1.0:
        ci = (tau_hat, tau_hat)
    else:
        z = normal_quantile(1 - alpha / 2)
        half = z * math.sqrt(max(gamma_hat + mu_hat, 0.0) / n)
        ci = (tau_hat - half, tau_hat + half)
    return EffectEstimate(tau_hat=tau_hat, ci=ci, gamma_hat=gamma_hat,
                          mu_hat=mu_hat, t1=t1, t0=t0, alpha=alpha)


# ---------------------------------------------------------------------------
# Full estimate report
# ---------------------------------------------------------------------------

@dataclass
class EstimateReport:
    estimator: str
    theta0: np.ndarray
    theta_o: dict[int, np.ndarray]
    alpha: float
    n_e: int
    n_o: int
    theta0_ci: Optional[np.ndarray] = None          # (d_e, 2)
    all_cis: Optional[np.ndarray] = None            # (D, 2) stacked order
    V_hat: Optional[np.ndarray] = None
    effect: Optional[EffectEstimate] = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()
        out = {
            "estimator": self.estimator,
            "theta0": arr(self.theta0),
            "theta_o": {str(t): arr(v) for t, v in sorted(self.theta_o.items())},
            "alpha": self.alpha,
            "n_e": self.n_e,
            "n_o": self.n_o,
            "theta0_ci": arr(self.theta0_ci),
            "all_cis": arr(self.all_cis),
            "V_hat": arr(self.V_hat),
            "diagnostics": self.diagnostics,
        }
        if self.effect is not None:
            out["effect"] = {
                "tau_hat": self.effect.tau_hat,
                "ci": list(self.effect.ci),
                "gamma_hat": self.effect.gamma_hat,
                "mu_hat": self.effect.mu_hat,
                "t1": arr(self.effect.t1),
                "t0": arr(self.effect.t0),
                "alpha": self.effect.alpha,
            }
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "EstimateReport":
        effect = None
        if d.get("effect") is not None:
            e = d["effect"]
            effect = EffectEstimate(
                tau_hat=e["tau_hat"], ci=tuple(e["ci"]), gamma_hat=e["gamma_hat"],
                mu_hat=e["mu_hat"], t1=np.array(e["t1"]), t0=np.array(e["t0"]),
                alpha=e["alpha"],
            )
        def arr(x):
            return None if x is None else np.array(x, dtype=float)
        return EstimateReport(
            estimator=d["estimator"], theta0=np.array(d["theta0"], dtype=float),
            theta_o={int(t): np.array(v, dtype=float)
                     for t, v in d.get("theta_o", {}).items()},
            alpha=d["alpha"], n_e=d["n_e"], n_o=d["n_o"],
            theta0_ci=arr(d.get("theta0_ci")), all_cis=arr(d.get("all_cis")),
            V_hat=arr(d.get("V_hat")), effect=effect,
            diagnostics=d.get("diagnostics", {}),
        )

    @staticmethod
    def from_json(text: str) -> "EstimateReport":
        return EstimateReport.from_dict(json.loads(text))
