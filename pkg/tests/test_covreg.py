import numpy as np
import pytest

from hetpsdm import (
    CovRegSpec,
    DemandDataset,
    GibbsProtocol,
    correlation_curves,
    covariance_at,
    fit_covreg_em,
    fit_covreg_gibbs,
    fit_mlr,
    mean_covariance_at,
    prediction_ellipse,
    table1_grid,
    paper_like_truth,
    generate_multivariate,
)
from hetpsdm.covreg import CovRegFit, chi2_quantile_2dof, ellipse_from_cov
from hetpsdm.errors import DegenerateSubmatrix, InsufficientData
from hetpsdm.stochastics import RngStream


@pytest.fixture(scope="module")
def small_data():
    return generate_multivariate(paper_like_truth(), table1_grid(records_per_level=8), seed=0)


def test_rank0_equals_mlr(small_data):
    spec = CovRegSpec(rank=0, basis_degree=1)
    fit = fit_covreg_em(small_data, spec)
    mlr = fit_mlr(small_data.y, small_data.x, ml_divisor=True)
    assert np.allclose(fit.A[:, 0], mlr.beta0, atol=1e-8)
    assert np.allclose(fit.A[:, 1], mlr.beta1, atol=1e-8)
    assert np.allclose(fit.Psi, mlr.Sigma, atol=1e-8)


def test_covariance_at_zero_effects():
    Psi = np.array([[2.0, 0.3], [0.3, 1.0]])
    spec = CovRegSpec(rank=1, basis_degree=1)
    fit = CovRegFit(
        A=np.zeros((2, 2)), B=(np.zeros((2, 2)),), Psi=Psi,
        loglik=0.0, iterations=1, converged=True, spec=spec,
    )
    for x in (-2.0, 0.0, 1.5):
        assert np.allclose(covariance_at(fit, x), Psi)


def test_covariance_at_hand_example():
    spec = CovRegSpec(rank=1, basis_degree=1)
    fit = CovRegFit(
        A=np.zeros((2, 2)),
        B=(np.array([[0.0, 1.0], [0.0, 0.0]]),),
        Psi=np.eye(2),
        loglik=0.0, iterations=1, converged=True, spec=spec,
    )
    S = covariance_at(fit, 2.0)
    assert np.allclose(S, [[5.0, 0.0], [0.0, 1.0]], atol=1e-12)


def test_covariance_spectral_structure():
    gen = RngStream(0, 0).generator()
    p, q, r = 3, 4, 2
    M = gen.standard_normal((p, p))
    Psi = M @ M.T + p * np.eye(p)
    B = tuple(gen.standard_normal((p, q)) for _ in range(r))
    spec = CovRegSpec(rank=r, basis_degree=q - 1)
    fit = CovRegFit(A=np.zeros((p, q)), B=B, Psi=Psi, loglik=0.0,
                    iterations=1, converged=True, spec=spec)
    for x in gen.uniform(-3, 3, 100):
        S = covariance_at(fit, x)
        assert np.allclose(S, S.T, atol=1e-12)
        np.linalg.cholesky(S)
        ev = np.linalg.eigvalsh(S - Psi)
        assert ev.min() >= -1e-10 * np.linalg.norm(S)
        assert np.sum(ev > 1e-10 * np.linalg.norm(S)) <= r


def test_em_monotone_loglik(small_data):
    fit = fit_covreg_em(small_data, CovRegSpec(), seed=0)
    path = np.asarray(fit.loglik_path)
    assert np.all(np.diff(path) >= -1e-8 * (1.0 + np.abs(path[:-1])))
    assert fit.converged


def test_em_insufficient_data():
    data = DemandDataset(
        x=np.linspace(0, 1, 10),
        y=np.random.default_rng(0).standard_normal((10, 3)),
        names=("a", "b", "c"),
    )
    with pytest.raises(InsufficientData):
        fit_covreg_em(data, CovRegSpec(rank=3, basis_degree=3))


def test_sign_flip_invariance(small_data):
    fit = fit_covreg_em(small_data, CovRegSpec(rank=2, basis_degree=2), seed=0)
    flipped = CovRegFit(
        A=fit.A, B=(-fit.B[0], fit.B[1]), Psi=fit.Psi,
        loglik=fit.loglik, iterations=fit.iterations, converged=True, spec=fit.spec,
    )
    for x in (-2.0, -1.0, 0.0):
        assert np.allclose(
            covariance_at(fit, x), covariance_at(flipped, x), atol=1e-12
        )


def test_gibbs_determinism_and_psi_pd(small_data):
    protocol = GibbsProtocol(iterations=600, thin=10, burn_retained=10)
    a = fit_covreg_gibbs(small_data, CovRegSpec(), protocol=protocol, seed=5)
    b = fit_covreg_gibbs(small_data, CovRegSpec(), protocol=protocol, seed=5)
    assert np.array_equal(a.C_draws, b.C_draws)
    assert np.array_equal(a.Psi_draws, b.Psi_draws)
    for Psi in a.Psi_draws:
        np.linalg.cholesky(Psi)


def test_gibbs_mean_covariance_matches_fit_at(small_data):
    protocol = GibbsProtocol(iterations=400, thin=10, burn_retained=5)
    post = fit_covreg_gibbs(small_data, CovRegSpec(), protocol=protocol, seed=2)
    x = -1.0
    direct = np.mean(
        [covariance_at(post.fit_at(d), x) for d in range(post.n_draws)], axis=0
    )
    assert np.allclose(mean_covariance_at(post, x), direct, atol=1e-10)


def test_correlation_curves_constant_for_zero_B():
    spec = CovRegSpec(rank=1, basis_degree=1)
    Psi = np.array([[1.0, 0.6, 0.2], [0.6, 2.0, 0.4], [0.2, 0.4, 1.5]])
    D = 20
    C_draws = np.zeros((D, 3, 4))
    Psi_draws = np.tile(Psi, (D, 1, 1))
    from hetpsdm.covreg import CovRegPosterior

    post = CovRegPosterior(
        C_draws=C_draws, Psi_draws=Psi_draws, spec=spec,
        protocol=GibbsProtocol(), diagnostics=None, seed=0, p=3,
    )
    grid = np.linspace(-2, 0, 5)
    curves = correlation_curves(post, grid)
    d = np.sqrt(np.diag(Psi))
    expect = Psi / np.outer(d, d)
    for (j, k), (med, lo, hi) in curves.items():
        assert np.allclose(med, expect[j, k], atol=1e-12)
        assert np.all(np.abs(med) <= 1.0)
        assert np.all((lo >= -1.0) & (hi <= 1.0))


def test_ellipse_identity_circle():
    e = ellipse_from_cov(np.eye(2), level=0.90)
    radius = np.sqrt(-2.0 * np.log(0.1))
    assert np.allclose(e.semi_axes, [radius, radius], atol=1e-12)
    assert radius == pytest.approx(2.1460, abs=5e-4)


def test_ellipse_diagonal():
    e = ellipse_from_cov(np.diag([4.0, 1.0]), level=0.90)
    c = np.sqrt(-2.0 * np.log(0.1))
    assert np.allclose(e.semi_axes, [2 * c, c], atol=1e-12)
    # major axis aligned with coordinate axis 0
    assert abs(np.sin(e.angle)) < 1e-12


def test_ellipse_area_closed_form():
    gen = RngStream(1, 0).generator()
    M = gen.standard_normal((2, 2))
    S = M @ M.T + np.eye(2)
    level = 0.90
    e = ellipse_from_cov(S, level=level)
    expect = np.pi * chi2_quantile_2dof(level) * np.sqrt(np.linalg.det(S))
    assert e.area == pytest.approx(expect, abs=1e-10)


def test_ellipse_coverage():
    gen = RngStream(2, 0).generator()
    S = np.array([[1.5, 0.7], [0.7, 1.0]])
    e = ellipse_from_cov(S, level=0.90)
    L = np.linalg.cholesky(S)
    pts = gen.standard_normal((10_000, 2)) @ L.T
    frac = e.contains(pts).mean()
    assert 0.88 <= frac <= 0.92


def test_ellipse_degenerate():
    with pytest.raises(DegenerateSubmatrix):
        ellipse_from_cov(np.array([[1.0, 1.0], [1.0, 1.0]]))


def test_prediction_ellipse_centers(small_data):
    fit = fit_covreg_em(small_data, CovRegSpec(rank=1, basis_degree=1), seed=0)
    res = prediction_ellipse(fit, -1.0, pair=(0, 2), center="residual")
    assert np.allclose(res.center, 0.0)
    dem = prediction_ellipse(fit, -1.0, pair=(0, 2), center="demand")
    from hetpsdm.dataset import polynomial_basis

    mu = fit.A @ polynomial_basis(-1.0, 1)
    assert np.allclose(dem.center, mu[[0, 2]])
    assert np.allclose(dem.semi_axes, res.semi_axes)
