"""Formal heteroscedasticity tests on residuals of a fitted mean model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseline import RANK_RTOL
from .errors import RankDeficient, ZeroResidualVariance
from .stochastics import chi2_cdf


@dataclass(frozen=True)
class TestResult:
    statistic: float
    dof: int
    p_value: float
    variant: str


def _aux_r2(u, Z):
    """R^2 and SSE/SST of the auxiliary regression of u on Z."""
    s = np.linalg.svd(Z, compute_uv=False)
    if s[-1] < RANK_RTOL * s[0]:
        raise RankDeficient("auxiliary design is rank-deficient")
    coef, _, _, _ = np.linalg.lstsq(Z, u, rcond=None)
    resid = u - Z @ coef
    sse = float(resid @ resid)
    sst = float(np.sum((u - u.mean()) ** 2))
    r2 = 0.0 if sst == 0.0 else 1.0 - sse / sst
    return r2, sse, sst


def breusch_pagan(residuals, Z, studentized=True):
    """Breusch-Pagan test of error-variance dependence on the columns of Z.

    The studentized (Koenker) variant uses n * R^2 of the regression of
    squared residuals on Z; the original LM variant regresses the
    variance-normalized squared residuals and uses half the explained sum
    of squares.
    """
    e = np.asarray(residuals, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, k = Z.shape
    if n <= k:
        raise RankDeficient("more auxiliary columns than observations")
    if np.all(e == 0):
        raise ZeroResidualVariance("all residuals are zero; test undefined")
    dof = k - 1
    if studentized:
        r2, _, _ = _aux_r2(e**2, Z)
        stat = n * r2
        variant = "studentized"
    else:
        sigma2 = float(e @ e) / n
        g = e**2 / sigma2
        _, sse, sst = _aux_r2(g, Z)
        stat = 0.5 * (sst - sse)
        variant = "original"
    stat = max(stat, 0.0)
    p = 1.0 - float(chi2_cdf(stat, dof))
    return TestResult(statistic=float(stat), dof=dof, p_value=p, variant=variant)


def white_auxiliary_design(X):
    """Columns (1, covariates, squares, cross-products) with duplicates removed."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    cols = []
    for j in range(X.shape[1]):
        c = X[:, j]
        if np.all(c == c[0]):
            continue
        cols.append(c)
    raw = list(cols)
    for j in range(len(raw)):
        cols.append(raw[j] ** 2)
        for k in range(j + 1, len(raw)):
            cols.append(raw[j] * raw[k])
    keep = []
    for c in cols:
        if np.all(c == c[0]):
            continue
        # tolerance-based: products of basis columns reproduce lower-order
        # monomials up to rounding (e.g. x * x^2 vs x^3)
        if any(np.allclose(c, k, rtol=1e-12, atol=0.0) for k in keep):
            continue
        keep.append(c)
    return np.column_stack([np.ones(n), *keep])


def white_test(residuals, X):
    """White's general heteroscedasticity test built from the mean-model design."""
    e = np.asarray(residuals, dtype=float)
    Z = white_auxiliary_design(X)
    n, k = Z.shape
    if n <= k:
        raise RankDeficient("more auxiliary columns than observations")
    if np.all(e == 0):
        raise ZeroResidualVariance("all residuals are zero; test undefined")
    r2, _, _ = _aux_r2(e**2, Z)
    stat = max(n * r2, 0.0)
    dof = k - 1
    p = 1.0 - float(chi2_cdf(stat, dof))
    variant = "cross-products" if k > 3 else "no-cross-products"
    return TestResult(statistic=float(stat), dof=dof, p_value=p, variant=variant)
