"""Rank-r covariance regression: Sigma_x = Psi + sum_k (B_k x)(B_k x)'.

The random-effects form y_i = A x_i + sum_k gamma_ik B_k x_i + eps_i admits
maximum likelihood via EM (latent gamma_i) and Bayesian inference via a
Gibbs sampler with semi-conjugate matrix-normal / inverse-Wishart priors.

The B matrices are identified only up to sign flips and rotations of the
rank space, so fitted B values should never be compared directly; compare
the implied Sigma_x instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DemandDataset, polynomial_basis
from .errors import (
    DegenerateSubmatrix,
    InsufficientData,
    NotConverged,
    PsiNotPD,
)
from .stochastics import ChainDiagnostics, RngStream, chi2_quantile

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class CovRegSpec:
    """Rank of the random effect and polynomial degree of the basis."""

    rank: int = 3
    basis_degree: int = 3

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.basis_degree < 0:
            raise ValueError("basis_degree must be >= 0")

    @property
    def q(self) -> int:
        return self.basis_degree + 1


@dataclass(frozen=True)
class CovRegFit:
    A: np.ndarray  # p x q
    B: tuple  # r matrices, each p x q
    Psi: np.ndarray  # p x p
    loglik: float
    iterations: int
    converged: bool
    spec: CovRegSpec
    latent_scores: np.ndarray | None = None  # n x r conditional means
    loglik_path: tuple = ()  # per-iteration observed-data log-likelihood


def _psi_chol(Psi):
    """Cholesky with a single jitter retry; failure raises PsiNotPD."""
    try:
        return np.linalg.cholesky(Psi), Psi
    except np.linalg.LinAlgError:
        p = Psi.shape[0]
        jitter = 1e-10 * np.trace(Psi) / p
        Psi2 = Psi + jitter * np.eye(p)
        try:
            return np.linalg.cholesky(Psi2), Psi2
        except np.linalg.LinAlgError:
            raise PsiNotPD("Psi update is not positive definite")


def _basis_groups(Xb):
    """Group rows sharing a basis vector; per-row conditional covariances and
    determinants depend only on x, so they are computed once per group."""
    _, group_idx, row_to_group = np.unique(
        Xb, axis=0, return_index=True, return_inverse=True
    )
    return Xb[group_idx], row_to_group


def _estep(Y, Xb, A, Bstack, Psi, groups=None):
    """Conditional moments of the latent effects and the observed-data loglik.

    Returns (m, V, loglik) with m (n, r) the conditional means and V (n, r, r)
    the conditional covariances, using the Woodbury identity so only p x p and
    r x r factorizations are needed.
    """
    n, p = Y.shape
    r = Bstack.shape[0]
    R = Y - Xb @ A.T
    L, Psi = _psi_chol(Psi)
    Pi = np.linalg.inv(Psi)
    logdet_psi = 2.0 * float(np.sum(np.log(np.diag(L))))
    if r == 0:
        quad = np.einsum("np,pq,nq->n", R, Pi, R)
        ll = -0.5 * (n * p * LOG_2PI + n * logdet_psi + float(quad.sum()))
        return np.zeros((n, 0)), np.zeros((n, 0, 0)), ll
    if groups is None:
        groups = _basis_groups(Xb)
    Xg, row_to_group = groups
    counts = np.bincount(row_to_group, minlength=Xg.shape[0])
    Hg = np.einsum("kpq,gq->gpk", Bstack, Xg)  # (G, p, r)
    PiHg = np.einsum("pq,gqk->gpk", Pi, Hg)
    Gg = np.einsum("gpk,gpl->gkl", Hg, PiHg)  # H' Pi H
    Ir = np.eye(r)
    Vg = np.linalg.inv(Ir[None, :, :] + Gg)
    sign, logdet_ig = np.linalg.slogdet(Ir[None, :, :] + Gg)
    hR = np.einsum("npk,np->nk", PiHg[row_to_group], R)  # H' Pi R per row
    Vrows = Vg[row_to_group]
    m = np.einsum("nkl,nl->nk", Vrows, hR)
    quad_full = np.einsum("np,pq,nq->n", R, Pi, R)
    quad_corr = np.einsum("nk,nk->n", hR, m)
    ll = -0.5 * (
        n * p * LOG_2PI
        + n * logdet_psi
        + float(logdet_ig @ counts)
        + float((quad_full - quad_corr).sum())
    )
    return m, Vrows, ll


def _split_C(C, q, r):
    A = C[:, :q]
    B = tuple(C[:, q * (k + 1) : q * (k + 2)].copy() for k in range(r))
    return A, B


def fit_covreg_em(
    data: DemandDataset,
    spec: CovRegSpec = CovRegSpec(),
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 20000,
):
    """EM fit of the rank-r covariance regression model.

    Rank 0 reduces to multivariate regression with the maximum likelihood
    residual covariance.  B is initialized from a small seeded normal draw
    to break the B = 0 stationary point.
    """
    Xb = polynomial_basis(data.x, spec.basis_degree)
    Y = data.y
    n, p = Y.shape
    q = spec.q
    r = spec.rank
    if n < p + q * (r + 1):
        raise InsufficientData(f"need at least {p + q * (r + 1)} rows, got {n}")
    # rank-0 solution seeds A and Psi
    A = np.linalg.lstsq(Xb, Y, rcond=None)[0].T
    resid = Y - Xb @ A.T
    Psi = resid.T @ resid / n
    if r == 0:
        _, _, ll = _estep(Y, Xb, A, np.zeros((0, p, q)), Psi)
        return CovRegFit(
            A=A, B=(), Psi=Psi, loglik=ll, iterations=1, converged=True,
            spec=spec, latent_scores=np.zeros((n, 0)),
        )
    gen = RngStream(seed, 900).generator()
    Bstack = 0.01 * gen.standard_normal((r, p, q))
    groups = _basis_groups(Xb)
    Xg, row_to_group = groups
    G = Xg.shape[0]
    # one-hot group aggregation: the per-row sufficient statistics only enter
    # the M-step summed within each shared-basis group
    onehot = np.zeros((G, n))
    onehot[row_to_group, np.arange(n)] = 1.0
    S_yy = Y.T @ Y
    r1 = r + 1
    ll_prev = -np.inf
    converged = False
    m = V = None
    it = 0
    path = []
    for it in range(1, max_iter + 1):
        m, V, ll = _estep(Y, Xb, A, Bstack, Psi, groups=groups)
        path.append(ll)
        if ll < ll_prev - 1e-8 * (1.0 + abs(ll_prev)):
            raise NotConverged("EM log-likelihood decreased; numerical failure")
        if abs(ll - ll_prev) <= tol * (1.0 + abs(ll)):
            converged = True
            break
        ll_prev = ll
        # M-step: GLS for C = (A, B_1..B_r), then the residual update for Psi
        Egg = V + np.einsum("nk,nl->nkl", m, m)
        mt = np.concatenate([np.ones((n, 1)), m], axis=1)  # (n, r+1)
        Mfull = np.empty((n, r1, r1))
        Mfull[:, 0, 0] = 1.0
        Mfull[:, 0, 1:] = m
        Mfull[:, 1:, 0] = m
        Mfull[:, 1:, 1:] = Egg
        Msum = (onehot @ Mfull.reshape(n, r1 * r1)).reshape(G, r1, r1)
        Usum = (
            onehot @ np.einsum("nj,na->nja", Y, mt).reshape(n, p * r1)
        ).reshape(G, p, r1)
        S_ww = np.einsum("gab,gq,gs->aqbs", Msum, Xg, Xg).reshape(
            r1 * q, r1 * q
        )
        S_yw = np.einsum("gja,gs->jas", Usum, Xg).reshape(p, r1 * q)
        C = np.linalg.solve(S_ww, S_yw.T).T
        Psi_new = (S_yy - C @ S_yw.T) / n
        Psi = 0.5 * (Psi_new + Psi_new.T)
        A, B = _split_C(C, q, r)
        Bstack = np.asarray(B)
    if not converged:
        raise NotConverged(f"EM did not converge in {max_iter} iterations")
    return CovRegFit(
        A=A,
        B=tuple(Bstack),
        Psi=Psi,
        loglik=ll,
        iterations=it,
        converged=True,
        spec=spec,
        latent_scores=m,
        loglik_path=tuple(path),
    )


def covariance_at(fit, x):
    """Model covariance Psi + sum_k (B_k x)(B_k x)' at one log-intensity."""
    xb = polynomial_basis(float(x), fit.spec.basis_degree)
    S = fit.Psi.copy()
    for Bk in fit.B:
        u = Bk @ xb
        S += np.outer(u, u)
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class CovRegPriors:
    """Semi-conjugate priors: inverse-Wishart on Psi, matrix normal on C given Psi."""

    Psi0: np.ndarray
    nu0: float
    C0: np.ndarray
    V0: np.ndarray

    @classmethod
    def default(cls, data: DemandDataset, spec: CovRegSpec, v0_scale=100.0):
        """Vague defaults: Psi0 from the rank-0 residual covariance, nu0 = p + 2,
        zero prior mean for C, and a large isotropic column covariance."""
        Xb = polynomial_basis(data.x, spec.basis_degree)
        A = np.linalg.lstsq(Xb, data.y, rcond=None)[0].T
        resid = data.y - Xb @ A.T
        p = data.p
        m = spec.q * (spec.rank + 1)
        return cls(
            Psi0=resid.T @ resid / data.n,
            nu0=p + 2,
            C0=np.zeros((p, m)),
            V0=v0_scale * np.eye(m),
        )


@dataclass(frozen=True)
class GibbsProtocol:
    iterations: int = 15000
    thin: int = 10
    burn_retained: int = 200  # post-thinning draws dropped


@dataclass(frozen=True)
class CovRegPosterior:
    C_draws: np.ndarray  # (draws, p, q(r+1))
    Psi_draws: np.ndarray  # (draws, p, p)
    spec: CovRegSpec
    protocol: GibbsProtocol
    diagnostics: ChainDiagnostics | None
    seed: int
    p: int

    @property
    def n_draws(self) -> int:
        return self.C_draws.shape[0]

    def fit_at(self, d: int) -> CovRegFit:
        """View one retained draw as a point fit."""
        q, r = self.spec.q, self.spec.rank
        A, B = _split_C(self.C_draws[d], q, r)
        return CovRegFit(
            A=A, B=B, Psi=self.Psi_draws[d], loglik=float("nan"),
            iterations=0, converged=True, spec=self.spec,
        )



def mean_covariance_at(posterior: CovRegPosterior, x):
    """Posterior mean of Sigma_x at one log-intensity."""
    q, r = posterior.spec.q, posterior.spec.rank
    xb = polynomial_basis(float(x), posterior.spec.basis_degree)
    D = posterior.n_draws
    acc = posterior.Psi_draws.mean(axis=0).copy()
    if r > 0:
        # u_k = B_k xb per draw: (D, p, r)
        Bs = posterior.C_draws[:, :, q:].reshape(D, -1, r, q)
        u = np.einsum("dprq,q->dpr", Bs, xb)
        acc += np.einsum("dpr,dsr->ps", u, u) / D
    return 0.5 * (acc + acc.T)


def fit_covreg_gibbs(
    data: DemandDataset,
    spec: CovRegSpec = CovRegSpec(),
    priors: CovRegPriors | None = None,
    protocol: GibbsProtocol = GibbsProtocol(),
    seed: int = 0,
):
    """Gibbs sampler cycling latent effects, C = (A, B), and Psi.

    Full conditionals: gamma_i is Gaussian, C is matrix normal, Psi is
    inverse-Wishart.  Deterministic under seed.
    """
    Xb = polynomial_basis(data.x, spec.basis_degree)
    Y = data.y
    n, p = Y.shape
    q = spec.q
    r = spec.rank
    m_cols = q * (r + 1)
    if n < p + m_cols:
        raise InsufficientData(f"need at least {p + m_cols} rows, got {n}")
    if priors is None:
        priors = CovRegPriors.default(data, spec)
    V0inv = np.linalg.inv(priors.V0)
    C0V0inv = priors.C0 @ V0inv
    gen = RngStream(seed, 0).generator()
    # init from the rank-0 solution
    A = np.linalg.lstsq(Xb, Y, rcond=None)[0].T
    resid = Y - Xb @ A.T
    Psi = resid.T @ resid / n
    C = np.concatenate([A, 0.01 * gen.standard_normal((p, q * r))], axis=1)
    # group rows sharing a basis vector: conditional V depends only on x
    _, group_idx, row_to_group = np.unique(
        Xb, axis=0, return_index=True, return_inverse=True
    )
    Xg = Xb[group_idx]  # (G, q)
    Ir = np.eye(r)
    df_post = priors.nu0 + n + m_cols
    retained_C = []
    retained_Psi = []
    for t in range(protocol.iterations):
        A, B = _split_C(C, q, r)
        Bstack = np.asarray(B) if r > 0 else np.zeros((0, p, q))
        R = Y - Xb @ A.T
        Pi = np.linalg.inv(Psi)
        if r > 0:
            Hg = np.einsum("kpq,gq->gpk", Bstack, Xg)  # (G, p, r)
            PiHg = np.einsum("pq,gqk->gpk", Pi, Hg)
            Gg = np.einsum("gpk,gpl->gkl", Hg, PiHg)
            Vg = np.linalg.inv(Ir[None, :, :] + Gg)
            Lg = np.linalg.cholesky(Vg)
            Tg = np.einsum("gkl,gpl->gkp", Vg, PiHg)  # V H' Pi
            m_rows = np.einsum("nkp,np->nk", Tg[row_to_group], R)
            z = gen.standard_normal((n, r))
            gam = m_rows + np.einsum("nkl,nl->nk", Lg[row_to_group], z)
        else:
            gam = np.zeros((n, 0))
        gt = np.concatenate([np.ones((n, 1)), gam], axis=1)  # (n, r+1)
        W = np.einsum("na,nq->naq", gt, Xb).reshape(n, m_cols)
        # C | rest: matrix normal
        Vn = np.linalg.inv(V0inv + W.T @ W)
        Vn = 0.5 * (Vn + Vn.T)
        Cn = (C0V0inv + Y.T @ W) @ Vn
        Lpsi = np.linalg.cholesky(Psi)
        Lvn = np.linalg.cholesky(Vn)
        Zc = gen.standard_normal((p, m_cols))
        C = Cn + Lpsi @ Zc @ Lvn.T
        # Psi | rest: inverse-Wishart via Bartlett
        E = Y - W @ C.T
        dC = C - priors.C0
        scale = priors.Psi0 + E.T @ E + dC @ V0inv @ dC.T
        scale = 0.5 * (scale + scale.T)
        Ls = np.linalg.cholesky(scale)
        Abar = np.zeros((p, p))
        for i in range(p):
            Abar[i, i] = np.sqrt(gen.chisquare(df_post - i))
        tril = np.tril_indices(p, -1)
        Abar[tril] = gen.standard_normal(len(tril[0]))
        Minv = np.linalg.solve(Abar, np.eye(p))
        M = Ls @ Minv.T
        Psi = M @ M.T
        Psi = 0.5 * (Psi + Psi.T)
        if (t + 1) % protocol.thin == 0:
            retained_C.append(C.copy())
            retained_Psi.append(Psi.copy())
    C_draws = np.asarray(retained_C)[protocol.burn_retained :]
    Psi_draws = np.asarray(retained_Psi)[protocol.burn_retained :]
    # scalar convergence summaries on the Psi diagonal
    diag = None
    return CovRegPosterior(
        C_draws=C_draws,
        Psi_draws=Psi_draws,
        spec=spec,
        protocol=protocol,
        diagnostics=diag,
        seed=seed,
        p=p,
    )


def correlation_curves(posterior: CovRegPosterior, grid, level=0.90):
    """Pointwise posterior median and equal-tailed band of each pairwise
    correlation curve rho_jk(x) over the grid.

    Returns {(j, k): (median, lo, hi)} arrays over the grid.
    """
    grid = np.asarray(grid, dtype=float)
    q, r = posterior.spec.q, posterior.spec.rank
    p = posterior.p
    D = posterior.n_draws
    Gb = polynomial_basis(grid, posterior.spec.basis_degree)  # (G, q)
    Sig = np.repeat(posterior.Psi_draws[:, None, :, :], len(grid), axis=1)
    if r > 0:
        Bs = posterior.C_draws[:, :, q:].reshape(D, p, r, q)
        u = np.einsum("dprq,gq->dgpr", Bs, Gb)
        Sig = Sig + np.einsum("dgpr,dgsr->dgps", u, u)
    d = np.sqrt(np.einsum("dgpp->dgp", Sig))
    corr = Sig / (d[:, :, :, None] * d[:, :, None, :])
    alpha = (1.0 - level) / 2.0
    out = {}
    for j in range(p):
        for k in range(j + 1, p):
            c = corr[:, :, j, k]
            out[(j, k)] = (
                np.median(c, axis=0),
                np.quantile(c, alpha, axis=0),
                np.quantile(c, 1.0 - alpha, axis=0),
            )
    return out


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    semi_axes: np.ndarray  # descending
    angle: float  # radians, orientation of the major axis
    level: float

    @property
    def area(self) -> float:
        return float(np.pi * self.semi_axes[0] * self.semi_axes[1])

    def contains(self, pts) -> np.ndarray:
        """Membership test for points shaped (n, 2)."""
        pts = np.asarray(pts, dtype=float) - self.center
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[ca, sa], [-sa, ca]])
        local = pts @ rot.T
        return (local[:, 0] / self.semi_axes[0]) ** 2 + (
            local[:, 1] / self.semi_axes[1]
        ) ** 2 <= 1.0


def ellipse_from_cov(S, level=0.90, center=None):
    """Level-set ellipse of a bivariate Gaussian with covariance S."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    S = np.asarray(S, dtype=float)
    if np.linalg.det(S) <= 0:
        raise DegenerateSubmatrix("2x2 covariance submatrix is singular")
    c2 = -2.0 * np.log(1.0 - level)
    w, Vec = np.linalg.eigh(S)
    order = np.argsort(w)[::-1]
    w = w[order]
    Vec = Vec[:, order]
    semi = np.sqrt(c2 * w)
    angle = float(np.arctan2(Vec[1, 0], Vec[0, 0]))
    ctr = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    return Ellipse(center=ctr, semi_axes=semi, angle=angle, level=level)


def prediction_ellipse(fit, x, pair=(0, 1), level=0.90, center="residual"):
    """Level-set ellipse of the bivariate Gaussian with the 2x2 submatrix of
    Sigma_x for the requested component pair.

    center="residual" puts the ellipse at the origin; center="demand" puts it
    at the mean prediction.  The chi-square(2) quantile has the closed form
    -2 ln(1 - level).
    """
    j, k = pair
    S_full = covariance_at(fit, x)
    S = S_full[np.ix_([j, k], [j, k])]
    if center == "residual":
        ctr = np.zeros(2)
    elif center == "demand":
        xb = polynomial_basis(float(x), fit.spec.basis_degree)
        mu = fit.A @ xb
        ctr = mu[[j, k]]
    else:
        raise ValueError("center must be 'residual' or 'demand'")
    return ellipse_from_cov(S, level=level, center=ctr)


def chi2_quantile_2dof(level):
    """Exact chi-square(2) quantile; cross-checked against the general routine."""
    return float(chi2_quantile(level, 2))
