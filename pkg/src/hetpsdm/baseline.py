"""Homoscedastic and conventional-treatment estimators.

Covers ordinary and weighted least squares, the continuous bilinear
demand model, the quadratic variance-function fit, multivariate linear
regression, and the Box-Cox transform family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBranch,
    InsufficientData,
    NonPositiveResponse,
    NonPositiveWeight,
    RankDeficient,
)

RANK_RTOL = 1e-10


def _check_rank(X):
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] < RANK_RTOL * s[0]:
        raise RankDeficient("design matrix is rank-deficient")


@dataclass(frozen=True)
class LinearFit:
    """Least-squares fit: coefficients, residual sd, and coefficient covariance."""

    coeffs: np.ndarray
    sigma: float
    param_cov: np.ndarray
    n: int
    dof: int

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coeffs


def fit_ols(y, X):
    """Ordinary least squares of y on design matrix X."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if n <= k:
        raise InsufficientData(f"need n > {k} rows, got {n}")
    _check_rank(X)
    coeffs, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coeffs
    dof = n - k
    sse = float(resid @ resid)
    sigma2 = sse / dof
    xtx_inv = np.linalg.inv(X.T @ X)
    return LinearFit(
        coeffs=coeffs,
        sigma=float(np.sqrt(sigma2)),
        param_cov=sigma2 * xtx_inv,
        n=n,
        dof=dof,
    )


def fit_wls(y, X, w):
    """Weighted least squares minimizing sum(w * (y - X beta)^2)."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise NonPositiveWeight("all weights must be positive and finite")
    n, k = X.shape
    if n <= k:
        raise InsufficientData(f"need n > {k} rows, got {n}")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    _check_rank(Xw)
    coeffs, _, _, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    resid = yw - Xw @ coeffs
    dof = n - k
    sse = float(resid @ resid)
    sigma2 = sse / dof
    xtwx_inv = np.linalg.inv(Xw.T @ Xw)
    return LinearFit(
        coeffs=coeffs,
        sigma=float(np.sqrt(sigma2)),
        param_cov=sigma2 * xtwx_inv,
        n=n,
        dof=dof,
    )


@dataclass(frozen=True)
class BilinearFit:
    """Continuous two-branch linear model with a fitted inflection point."""

    theta01: float
    theta11: float
    theta21: float
    theta_sa: float
    sigma1: float
    sigma2: float
    n1: int
    n2: int
    sse: float

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        first = self.theta01 + self.theta11 * x
        second = (
            self.theta01
            + self.theta11 * self.theta_sa
            + self.theta21 * (x - self.theta_sa)
        )
        return np.where(x <= self.theta_sa, first, second)


def default_break_candidates(x, count=81):
    """Equally spaced break candidates between the 10% and 90% quantiles of x."""
    lo = np.quantile(x, 0.10)
    hi = np.quantile(x, 0.90)
    return np.linspace(lo, hi, count)


def fit_bilinear(y, x, candidate_grid=None):
    """Grid search over break candidates for the continuous bilinear model.

    For each candidate the model is linear in its three free parameters
    (columns 1, min(x, t), max(x - t, 0)), so the conditional fit is plain
    least squares; the candidate with minimal total SSE wins, ties broken
    to the median tied candidate.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 5:
        raise InsufficientData("bilinear fit needs at least 5 points")
    if candidate_grid is None:
        candidate_grid = default_break_candidates(x)
    candidate_grid = np.asarray(candidate_grid, dtype=float)
    results = []
    for t in candidate_grid:
        n1 = int(np.sum(x <= t))
        n2 = n - n1
        if n1 < 2 or n2 < 2:
            continue
        X = np.column_stack(
            [np.ones(n), np.minimum(x, t), np.maximum(x - t, 0.0)]
        )
        s = np.linalg.svd(X, compute_uv=False)
        if s[-1] < RANK_RTOL * s[0]:
            continue
        coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        sse = float(resid @ resid)
        results.append((t, coef, sse, n1, n2, resid))
    if not results:
        raise DegenerateBranch(
            "no break candidate leaves >= 2 points in both branches"
        )
    sses = np.array([r[2] for r in results])
    best = sses.min()
    tied = np.flatnonzero(sses <= best + 1e-12 * (1.0 + best))
    pick = int(tied[len(tied) // 2])
    t, coef, sse, n1, n2, resid = results[pick]
    mask1 = x <= t
    r1 = resid[mask1]
    r2 = resid[~mask1]
    sigma1 = float(np.sqrt(r1 @ r1 / max(n1 - 2, 1)))
    sigma2 = float(np.sqrt(r2 @ r2 / max(n2 - 2, 1)))
    return BilinearFit(
        theta01=float(coef[0]),
        theta11=float(coef[1]),
        theta21=float(coef[2]),
        theta_sa=float(t),
        sigma1=sigma1,
        sigma2=sigma2,
        n1=n1,
        n2=n2,
        sse=sse,
    )


@dataclass(frozen=True)
class VarianceFunctionFit:
    """Quadratic fit of the per-level log-std against intensity."""

    beta1: float
    beta2: float
    beta3: float
    domain: tuple
    log_im: bool
    negative_prediction: bool

    def predict(self, im):
        im = np.asarray(im, dtype=float)
        t = np.log(im) if self.log_im else im
        return self.beta1 + self.beta2 * t + self.beta3 * t**2


def fit_variance_function(im_values, sigma_values, log_im=False):
    """OLS fit of sigma on (1, IM, IM^2).

    IM enters in natural space by default; set log_im to regress on ln IM.
    """
    im = np.asarray(im_values, dtype=float)
    sig = np.asarray(sigma_values, dtype=float)
    if np.any(sig < 0):
        raise ValueError("sigma values must be >= 0")
    if np.unique(im).size < 3:
        raise RankDeficient("need at least 3 distinct IM values")
    t = np.log(im) if log_im else im
    X = np.column_stack([np.ones_like(t), t, t**2])
    _check_rank(X)
    coef, _, _, _ = np.linalg.lstsq(X, sig, rcond=None)
    lo, hi = float(t.min()), float(t.max())
    grid = np.linspace(lo, hi, 201)
    pred = coef[0] + coef[1] * grid + coef[2] * grid**2
    return VarianceFunctionFit(
        beta1=float(coef[0]),
        beta2=float(coef[1]),
        beta3=float(coef[2]),
        domain=(float(im.min()), float(im.max())),
        log_im=bool(log_im),
        negative_prediction=bool(np.any(pred < 0)),
    )


@dataclass(frozen=True)
class MLRFit:
    """Per-component linear regression with a shared residual covariance."""

    beta0: np.ndarray
    beta1: np.ndarray
    Sigma: np.ndarray
    n: int

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        return self.beta0[None, :] + np.outer(x, self.beta1)


def fit_mlr(Y, x, ml_divisor=False):
    """Multivariate linear regression of each demand column on (1, x).

    Sigma uses divisor n - 2 by default; ml_divisor selects the maximum
    likelihood divisor n.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise InsufficientData("need at least 3 rows")
    if np.unique(x).size < 2:
        raise RankDeficient("x must have at least 2 distinct values")
    X = np.column_stack([np.ones(n), x])
    _check_rank(X)
    coef, _, _, _ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ coef
    divisor = n if ml_divisor else n - 2
    Sigma = resid.T @ resid / divisor
    return MLRFit(beta0=coef[0].copy(), beta1=coef[1].copy(), Sigma=Sigma, n=n)


def box_cox(y, lam):
    """Box-Cox transform: (y^lam - 1)/lam for lam != 0, ln y for lam = 0."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveResponse("Box-Cox requires strictly positive responses")
    if lam == 0.0:
        return np.log(y)
    return (np.power(y, lam) - 1.0) / lam


@dataclass(frozen=True)
class BoxCoxResult:
    """Profile-likelihood estimate of the Box-Cox exponent on a grid."""

    lam: float
    profile_loglik: float
    transformed: np.ndarray


def box_cox_estimate(y, X, grid=None):
    """Maximize the Box-Cox profile log-likelihood of a linear model over a grid.

    The profile includes the Jacobian term (lam - 1) * sum(ln y).
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise NonPositiveResponse("Box-Cox requires strictly positive responses")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if grid is None:
        grid = np.linspace(-2.0, 2.0, 81)
    n = y.shape[0]
    log_jac = float(np.sum(np.log(y)))
    best = None
    for lam in np.asarray(grid, dtype=float):
        z = box_cox(y, lam)
        coef, _, _, _ = np.linalg.lstsq(X, z, rcond=None)
        resid = z - X @ coef
        sse = float(resid @ resid)
        ll = -0.5 * n * np.log(sse / n) + (lam - 1.0) * log_jac
        if best is None or ll > best[1]:
            best = (float(lam), float(ll))
    lam, ll = best
    return BoxCoxResult(lam=lam, profile_loglik=ll, transformed=box_cox(y, lam))
