"""First-stage learners: OLS, cross-validated lasso, and IRLS logistic.

All fitters accept a 2-D design ``X`` (no intercept column; one is handled
internally) and scalar or multi-column targets. Multi-column targets share
the design and are solved coordinate-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EmptyGrid, SingleClass, SingularDesign

_RIDGE_JITTER = 1e-10


@dataclass(frozen=True)
class LinearModel:
    """Fitted linear predictor y = intercept + X @ coefficients.

    ``coefficients`` has shape (q,) for scalar targets or (m, q) for m
    targets; ``intercept`` is a scalar or (m,).
    """

    intercept: np.ndarray
    coefficients: np.ndarray
    regularization: str = "none"
    lam: float = 0.0
    fitted_on: Optional[str] = None
    cv_curve: Optional[np.ndarray] = None  # (n_lambdas, 2): lambda, mean CV MSE

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.coefficients.ndim == 1:
            return self.intercept + X @ self.coefficients
        return self.intercept + X @ self.coefficients.T


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coefficients: np.ndarray
    ridge: float = 0.0
    fitted_on: Optional[str] = None

    def predict_proba(self, X: np.ndarray, clip: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        eta = self.intercept + X @ self.coefficients
        prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        if clip > 0.0:
            prob = np.clip(prob, clip, 1.0 - clip)
        return prob

    def predict_odds(self, X: np.ndarray, clip: float = 0.0) -> np.ndarray:
        prob = self.predict_proba(X, clip=clip)
        return prob / (1.0 - prob)


# ---------------------------------------------------------------------------
# OLS
# ---------------------------------------------------------------------------

def fit_ols(X: np.ndarray, y: np.ndarray, *, ridge_fallback: bool = True,
            fitted_on: Optional[str] = None) -> LinearModel:
    """Least squares via normal equations with ridge jitter when near-singular."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, q = X.shape
    Xi = np.hstack([np.ones((n, 1)), X])
    gram = Xi.T @ Xi
    rhs = Xi.T @ (y if y.ndim == 1 else y)
    scale = np.trace(gram) / (q + 1)
    cond_bad = np.linalg.cond(gram) > 1e12
    if cond_bad:
        if not ridge_fallback:
            raise SingularDesign(
                f"normal equations singular (n={n}, q={q}) and ridge fallback disabled"
            )
        gram = gram + _RIDGE_JITTER * max(scale, 1.0) * np.eye(q + 1)
    beta = np.linalg.solve(gram, rhs)
    if y.ndim == 1:
        return LinearModel(intercept=float(beta[0]), coefficients=beta[1:],
                           fitted_on=fitted_on)
    return LinearModel(intercept=beta[0], coefficients=beta[1:].T,
                       fitted_on=fitted_on)


# ---------------------------------------------------------------------------
# Lasso with coordinate descent and k-fold cross-validation
# ---------------------------------------------------------------------------

def _standardize(X: np.ndarray):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = sd > 0.0
    Xs = np.zeros_like(X)
    Xs[:, keep] = (X[:, keep] - mean[keep]) / sd[keep]
    return Xs, mean, sd, keep


def _cd_lasso(Xs: np.ndarray, yc: np.ndarray, lam: float,
              w0: Optional[np.ndarray] = None,
              max_sweeps: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Coordinate descent for (1/2n)||yc - Xs w||^2 + lam ||w||_1.

    Columns of Xs must have unit variance (or be all-zero), yc centered.
    """
    n, q = Xs.shape
    w = np.zeros(q) if w0 is None else w0.copy()
    col_norm = (Xs * Xs).sum(axis=0) / n  # 1 for standardized, 0 for dropped
    r = yc - Xs @ w
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(q):
            if col_norm[j] == 0.0:
                continue
            wj = w[j]
            rho = (Xs[:, j] @ r) / n + col_norm[j] * wj
            wn = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_norm[j]
            if wn != wj:
                r += Xs[:, j] * (wj - wn)
                w[j] = wn
                max_delta = max(max_delta, abs(wn - wj))
        if max_delta < tol * max(1.0, np.abs(w).max()):
            break
    return w


def default_lambda_grid(Xs: np.ndarray, yc: np.ndarray, n_lambdas: int = 50,
                        ratio: float = 1e-4) -> np.ndarray:
    """Log-spaced grid from lambda_max (all-zero solution) down to ratio*max."""
    n = Xs.shape[0]
    lam_max = np.abs(Xs.T @ yc).max() / n
    if lam_max <= 0.0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * ratio, n_lambdas)


def fit_lasso_cv(X: np.ndarray, y: np.ndarray, *,
                 lambda_grid: Optional[np.ndarray] = None,
                 n_folds: int = 5, seed: int = 0,
                 fitted_on: Optional[str] = None) -> LinearModel:
    """Lasso at the CV-MSE-minimizing lambda; coefficients on the original scale.

    Zero-variance columns are dropped before standardization and reported
    with coefficient 0. Ties in CV error resolve to the larger lambda.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        cols = [fit_lasso_cv(X, y[:, j], lambda_grid=lambda_grid, n_folds=n_folds,
                             seed=seed, fitted_on=fitted_on) for j in range(y.shape[1])]
        return LinearModel(
            intercept=np.array([m.intercept for m in cols]),
            coefficients=np.vstack([m.coefficients for m in cols]),
            regularization="lasso", lam=float(np.mean([m.lam for m in cols])),
            fitted_on=fitted_on,
        )

    n, q = X.shape
    Xs, mean, sd, keep = _standardize(X)
    ybar = y.mean()
    yc = y - ybar
    if lambda_grid is None:
        lambda_grid = default_lambda_grid(Xs, yc)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0:
        raise EmptyGrid("lasso lambda grid is empty")
    lambda_grid = np.sort(lambda_grid)[::-1]

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, n_folds)

    cv_mse = np.zeros(lambda_grid.size)
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        Xtr, ytr = Xs[mask], yc[mask]
        Xte, yte = Xs[fold], yc[fold]
        # re-center the training split so the path is a pure slope problem
        off = ytr.mean()
        w = None
        for li, lam in enumerate(lambda_grid):
            w = _cd_lasso(Xtr, ytr - off, lam, w0=w)
            pred = Xte @ w + off
            cv_mse[li] += ((yte - pred) ** 2).sum()
    cv_mse /= n
    best = int(np.argmin(cv_mse))  # grid is descending: first minimum = largest lam
    lam = float(lambda_grid[best])

    # warm-start down the path on the full sample for the final fit
    w = None
    for li in range(best + 1):
        w = _cd_lasso(Xs, yc, float(lambda_grid[li]), w0=w)

    coef = np.zeros(q)
    coef[keep] = w[keep] / sd[keep]
    intercept = ybar - float(mean @ coef)
    return LinearModel(intercept=intercept, coefficients=coef,
                       regularization="lasso", lam=lam, fitted_on=fitted_on,
                       cv_curve=np.column_stack([lambda_grid, cv_mse]))


def lasso_kkt_violation(X: np.ndarray, y: np.ndarray, model: LinearModel) -> float:
    """Max violation of the lasso stationarity conditions on the standardized problem.

    Returns max over coordinates of
      active j:   | grad_j + lam * sign(w_j) |
      inactive j: max(|grad_j| - lam, 0)
    with grad_j = -x_j' (y - yhat) / n.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    Xs, mean, sd, keep = _standardize(X)
    w = model.coefficients * np.where(keep, sd, 0.0)
    resid = (y - y.mean()) - Xs @ w
    grad = -(Xs.T @ resid) / n
    lam = model.lam
    viol = 0.0
    for j in range(X.shape[1]):
        if not keep[j]:
            continue
        if w[j] != 0.0:
            viol = max(viol, abs(grad[j] + lam * np.sign(w[j])))
        else:
            viol = max(viol, max(abs(grad[j]) - lam, 0.0))
    return float(viol)


# ---------------------------------------------------------------------------
# Logistic regression by Newton / IRLS
# ---------------------------------------------------------------------------

def fit_logistic(X: np.ndarray, labels: np.ndarray, *,
                 max_iter: int = 100, grad_tol: float = 1e-8,
                 fitted_on: Optional[str] = None) -> LogisticModel:
    """Unpenalized IRLS fit; refits with a small ridge on perfect separation."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    yb = np.asarray(labels, dtype=float).ravel()
    classes = np.unique(yb)
    if classes.size < 2:
        raise SingleClass(f"labels contain a single class {classes}")
    n, q = X.shape
    Xi = np.hstack([np.ones((n, 1)), X])

    def _irls(ridge: float):
        beta = np.zeros(q + 1)
        beta[0] = np.log(yb.mean() / (1.0 - yb.mean()))
        for _ in range(max_iter):
            eta = np.clip(Xi @ beta, -35, 35)
            mu = 1.0 / (1.0 + np.exp(-eta))
            wdiag = mu * (1.0 - mu)
            grad = Xi.T @ (yb - mu) - ridge * np.r_[0.0, beta[1:]]
            if np.linalg.norm(grad) < grad_tol * n:
                return beta, True
            hess = (Xi * wdiag[:, None]).T @ Xi + (ridge + 1e-12) * np.eye(q + 1)
            step = np.linalg.solve(hess, grad)
            beta = beta + step
            if np.linalg.norm(beta[1:]) > 1e3:  # diverging: separation
                return beta, False
        return beta, False

    beta, converged = _irls(0.0)
    # perfect separation: the unpenalized path diverges or every fitted
    # probability saturates; refit with a small ridge
    eta = np.clip(Xi @ beta, -35, 35)
    mu = 1.0 / (1.0 + np.exp(-eta))
    saturated = float(np.max(mu * (1.0 - mu))) < 1e-4
    ridge = 0.0
    if not converged or saturated:
        ridge = 1e-3 * n
        beta, _ = _irls(ridge)
    return LogisticModel(intercept=float(beta[0]), coefficients=beta[1:],
                         ridge=ridge, fitted_on=fitted_on)


# ---------------------------------------------------------------------------
# Learner configuration used by the nuisance stage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnerConfig:
    """Which regression learner backs each nuisance regression."""

    kind: str = "ols"                # "ols" | "lasso"
    n_folds: int = 5
    n_lambdas: int = 50
    lambda_ratio: float = 1e-4
    clip_eps: float = 1e-3           # probability clipping for the odds model
    seed: int = 0
    alias_shared_projections: bool = True  # reuse period-1 observational
                                           # projections for both roles they play
    extra: dict = field(default_factory=dict)

    def fit_regression(self, X: np.ndarray, y: np.ndarray,
                       fitted_on: Optional[str] = None) -> LinearModel:
        if self.kind == "ols":
            return fit_ols(X, y, fitted_on=fitted_on)
        if self.kind == "lasso":
            return fit_lasso_cv(X, y, n_folds=self.n_folds, seed=self.seed,
                                fitted_on=fitted_on)
        raise ValueError(f"unknown learner kind {self.kind!r}")
