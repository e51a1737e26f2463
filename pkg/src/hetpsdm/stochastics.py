"""Distribution primitives, seeded RNG streams, and MCMC chain diagnostics.

The RNG contract is built on numpy's counter-based Philox generator keyed by
a (master_seed, stream_id) pair, so distinct streams are independent by
construction and every draw sequence is bitwise reproducible.  The generator
choice is part of the reproducibility contract and must not change silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    DegenerateChains,
    DomainError,
    InvalidDof,
    NotPositiveDefinite,
)


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable RNG stream identified by (seed, stream_id)."""

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.stream_id,)
        )
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def cholesky_pd(mat, name="matrix"):
    """Lower Cholesky factor, raising NotPositiveDefinite on failure."""
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"{name} is not positive definite")


def sample_mvn(mean, cov, rng):
    """Draw from N(mean, cov) via the Cholesky factor of cov."""
    gen = _as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    L = cholesky_pd(cov, "cov")
    z = gen.standard_normal(mean.shape[0])
    return mean + L @ z


def sample_inverse_wishart(scale, dof, rng):
    """Draw from an inverse-Wishart with scale matrix `scale` and `dof` degrees.

    Parameterized so the mean is scale / (dof - p - 1); requires dof > p + 1.
    The draw uses the Bartlett decomposition of a Wishart(dof, scale^-1)
    variate, which is then inverted.
    """
    gen = _as_generator(rng)
    scale = np.asarray(scale, dtype=float)
    p = scale.shape[0]
    if dof <= p + 1:
        raise InvalidDof(f"dof must exceed p + 1 = {p + 1} for the mean to exist")
    L_scale = cholesky_pd(scale, "scale")
    # Bartlett factor of Wishart(dof, I)
    A = np.zeros((p, p))
    for i in range(p):
        A[i, i] = np.sqrt(gen.chisquare(dof - i))
    idx = np.tril_indices(p, -1)
    A[idx] = gen.standard_normal(len(idx[0]))
    # W = chol(scale^-1) A A^T chol(scale^-1)^T has distribution Wishart(dof, scale^-1);
    # its inverse is L_scale A^-T A^-1 L_scale^T.
    Ainv = np.linalg.inv(A)
    M = L_scale @ Ainv.T
    draw = M @ M.T
    return 0.5 * (draw + draw.T)


def sample_matrix_normal(M, row_cov, col_cov, rng):
    """Draw from the matrix normal MN(M, row_cov, col_cov)."""
    gen = _as_generator(rng)
    M = np.asarray(M, dtype=float)
    Lr = cholesky_pd(row_cov, "row_cov")
    Lc = cholesky_pd(col_cov, "col_cov")
    Z = gen.standard_normal(M.shape)
    return M + Lr @ Z @ Lc.T


def chi2_cdf(x, k):
    if k < 1:
        raise DomainError("degrees of freedom must be >= 1")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("chi-square CDF argument must be >= 0")
    return special.gammainc(k / 2.0, x / 2.0)


def chi2_quantile(p, k):
    if k < 1:
        raise DomainError("degrees of freedom must be >= 1")
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("probability must lie in (0, 1)")
    return 2.0 * special.gammaincinv(k / 2.0, p)


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("probability must lie in (0, 1)")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


def gelman_rubin(chains):
    """Split-chain potential scale reduction factor for one scalar quantity.

    Each chain is split in half; the statistic is
    sqrt((((n - 1) / n) * W + B / n) / W) over the resulting half-chains.
    """
    chains = [np.asarray(c, dtype=float) for c in chains]
    if len(chains) < 1:
        raise DegenerateChains("at least one chain required")
    halves = []
    for c in chains:
        n = len(c) // 2
        if n < 2:
            raise DegenerateChains("chains too short to split")
        halves.append(c[:n])
        halves.append(c[n : 2 * n])
    halves = np.asarray(halves)
    n = halves.shape[1]
    W = float(np.mean(np.var(halves, axis=1, ddof=1)))
    if W == 0.0:
        raise DegenerateChains("zero within-chain variance")
    means = np.mean(halves, axis=1)
    B = n * float(np.var(means, ddof=1))
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def ess_mcse(chain):
    """Effective sample size and Monte Carlo standard error for one chain.

    ESS uses Geyer's initial positive sequence: autocorrelations are summed
    in adjacent pairs until a pair sum goes non-positive.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 8:
        raise DomainError("chain too short for ESS estimation")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        return 0.0, 0.0
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / acov[0]
    tau = 0.0
    m = 0
    while 2 * m + 1 < n:
        gamma = rho[2 * m] + rho[2 * m + 1]
        if gamma <= 0.0:
            break
        tau += 2.0 * gamma
        m += 1
    tau = max(tau - 1.0, 1e-12)
    ess = n / tau
    mcse = sd / np.sqrt(ess)
    return float(ess), float(mcse)


@dataclass(frozen=True)
class ChainDiagnostics:
    """Per-parameter convergence summaries for a set of MCMC chains."""

    r_hat: np.ndarray
    ess: np.ndarray
    mcse: np.ndarray

    @classmethod
    def from_chains(cls, chains):
        """Compute diagnostics from draws shaped (n_chains, n_draws, n_params)."""
        chains = np.asarray(chains, dtype=float)
        m, n, d = chains.shape
        r_hat = np.empty(d)
        ess = np.empty(d)
        mcse = np.empty(d)
        total = m * n
        for j in range(d):
            r_hat[j] = gelman_rubin([chains[c, :, j] for c in range(m)])
            e = sum(ess_mcse(chains[c, :, j])[0] for c in range(m))
            e = min(e, total)
            ess[j] = e
            pooled_sd = float(np.std(chains[:, :, j].ravel(), ddof=1))
            mcse[j] = pooled_sd / np.sqrt(e)
        return cls(r_hat=r_hat, ess=ess, mcse=mcse)
