import numpy as np
import pytest

from hetpsdm import (
    RngStream,
    chi2_cdf,
    chi2_quantile,
    ess_mcse,
    gelman_rubin,
    normal_quantile,
    sample_inverse_wishart,
    sample_matrix_normal,
    sample_mvn,
)
from hetpsdm.errors import DegenerateChains, DomainError, InvalidDof, NotPositiveDefinite
from hetpsdm.stochastics import ChainDiagnostics


def test_stream_determinism_and_independence():
    a = RngStream(42, 0).generator().standard_normal(100)
    b = RngStream(42, 0).generator().standard_normal(100)
    c = RngStream(42, 1).generator().standard_normal(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_chi2_quantile_closed_form():
    assert float(chi2_quantile(0.90, 2)) == pytest.approx(-2.0 * np.log(0.1), abs=1e-10)


def test_chi2_roundtrip():
    for k in range(1, 11):
        for x in (0.01, 0.1, 1.0, 5.0, 30.0, 100.0):
            p = float(chi2_cdf(x, k))
            if 0.0 < p < 1.0:
                back = float(chi2_quantile(p, k))
                assert back == pytest.approx(x, rel=1e-8)


def test_normal_quantile():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(DomainError):
        normal_quantile(0.0)


def test_sample_mvn_moments():
    gen = RngStream(0, 0).generator()
    draws = np.array([sample_mvn(np.zeros(2), np.eye(2), gen) for _ in range(100_000)])
    assert np.max(np.abs(draws.mean(axis=0))) < 0.02
    corr = np.corrcoef(draws.T)[0, 1]
    assert abs(corr) < 0.02


def test_sample_mvn_covariance_convergence():
    gen = RngStream(1, 0).generator()
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    draws = np.array([sample_mvn(np.zeros(2), cov, gen) for _ in range(100_000)])
    S = np.cov(draws.T)
    assert np.linalg.norm(S - cov) / np.linalg.norm(cov) < 0.05


def test_sample_mvn_rejects_non_pd():
    with pytest.raises(NotPositiveDefinite):
        sample_mvn(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), RngStream(0, 0))


def test_inverse_wishart_mean_and_support():
    gen = RngStream(2, 0).generator()
    draws = np.array(
        [sample_inverse_wishart(np.eye(2), 6, gen) for _ in range(100_000)]
    )
    mean = draws.mean(axis=0)
    assert np.max(np.abs(mean - np.eye(2) / 3.0)) < 0.03
    for d in draws[:100]:
        np.linalg.cholesky(d)
    with pytest.raises(InvalidDof):
        sample_inverse_wishart(np.eye(2), 3, gen)


def test_matrix_normal_moments():
    gen = RngStream(3, 0).generator()
    M = np.array([[1.0, -2.0], [0.5, 3.0]])
    draws = np.array(
        [sample_matrix_normal(M, np.eye(2), np.eye(2), gen) for _ in range(100_000)]
    )
    assert np.max(np.abs(draws.mean(axis=0) - M)) < 0.02
    assert np.max(np.abs(draws.var(axis=0) - 1.0)) < 0.03


def test_matrix_normal_kronecker_covariance():
    gen = RngStream(4, 0).generator()
    row_cov = np.array([[1.0, 0.5], [0.5, 2.0]])
    col_cov = np.array([[1.5, -0.3], [-0.3, 1.0]])
    draws = np.array(
        [
            sample_matrix_normal(np.zeros((2, 2)), row_cov, col_cov, gen)
            for _ in range(100_000)
        ]
    )
    # cov(vec entries): cov(X[i,j], X[k,l]) = row_cov[i,k] * col_cov[j,l]
    c = np.mean(draws[:, 0, 0] * draws[:, 1, 1])
    assert c == pytest.approx(row_cov[0, 1] * col_cov[0, 1], abs=0.03)


def test_gelman_rubin_identical_chains_closed_form():
    gen = RngStream(5, 0).generator()
    h = gen.standard_normal(100)
    chain = np.concatenate([h, h])  # halves identical -> B = 0 exactly
    r = gelman_rubin([chain, chain.copy()])
    assert r == np.sqrt(99.0 / 100.0)
    assert r == pytest.approx(0.99499, abs=1e-5)


def test_gelman_rubin_detects_separation():
    gen = RngStream(6, 0).generator()
    a = gen.standard_normal(200)
    b = 10.0 + gen.standard_normal(200)
    assert gelman_rubin([a, b]) > 1.5


def test_gelman_rubin_degenerate():
    with pytest.raises(DegenerateChains):
        gelman_rubin([np.ones(100), np.ones(100)])


def test_ess_iid_reference():
    vals = []
    for seed in range(30):
        chain = RngStream(seed, 7).generator().standard_normal(10_000)
        ess, _ = ess_mcse(chain)
        vals.append(ess)
    assert 8000 <= np.median(vals) <= 12000


def test_ess_ar1_reference():
    ratios = []
    for seed in range(30):
        gen = RngStream(seed, 8).generator()
        n = 10_000
        e = gen.standard_normal(n)
        x = np.empty(n)
        x[0] = e[0]
        for t in range(1, n):
            x[t] = 0.9 * x[t - 1] + e[t]
        ess, _ = ess_mcse(x)
        ratios.append(ess / n)
    med = np.median(ratios)
    assert 0.03 <= med <= 0.08  # theory (1-rho)/(1+rho) ~ 0.0526


def test_ess_scale_equivariance():
    chain = RngStream(9, 0).generator().standard_normal(5000)
    ess1, mcse1 = ess_mcse(chain)
    ess2, mcse2 = ess_mcse(10.0 * chain)
    assert ess2 == pytest.approx(ess1, rel=1e-10)
    assert mcse2 == pytest.approx(10.0 * mcse1, rel=1e-10)


def test_chain_diagnostics_shapes():
    gen = RngStream(10, 0).generator()
    chains = gen.standard_normal((4, 250, 3))
    d = ChainDiagnostics.from_chains(chains)
    assert d.r_hat.shape == (3,)
    assert np.all(d.ess <= 1000)
    assert np.allclose(
        d.mcse,
        np.std(chains.reshape(-1, 3), axis=0, ddof=1) / np.sqrt(d.ess),
    )
