import numpy as np
import pytest

from hetpsdm import breusch_pagan, white_test, fit_ols, table1_grid, trumpet_truth, generate_univariate
from hetpsdm.dataset import polynomial_basis
from hetpsdm.diagnostics import white_auxiliary_design
from hetpsdm.errors import ZeroResidualVariance
from hetpsdm.stochastics import RngStream, chi2_cdf


def test_bp_constant_squared_residuals():
    e = np.array([1.0, -1.0, 1.0, -1.0])
    Z = np.column_stack([np.ones(4), np.array([0.3, 1.2, -0.5, 0.9])])
    res = breusch_pagan(e, Z)
    assert res.statistic == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == pytest.approx(1.0, abs=1e-12)


def test_bp_variants_and_pvalue_identity():
    gen = RngStream(1, 0).generator()
    x = gen.uniform(-1, 1, 200)
    e = np.exp(0.5 * x) * gen.standard_normal(200)
    Z = np.column_stack([np.ones(200), x])
    for studentized in (True, False):
        res = breusch_pagan(e, Z, studentized=studentized)
        assert res.dof == 1
        expected_p = 1.0 - float(chi2_cdf(res.statistic, res.dof))
        assert res.p_value == pytest.approx(expected_p, abs=1e-10)
    assert breusch_pagan(e, Z).variant == "studentized"
    assert breusch_pagan(e, Z, studentized=False).variant == "original"


def test_white_aux_design_single_covariate():
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    X = np.column_stack([np.ones(5), x])
    Z = white_auxiliary_design(X)
    assert Z.shape[1] == 3  # (1, x, x^2)
    assert np.allclose(Z[:, 1], x)
    assert np.allclose(Z[:, 2], x**2)
    e = np.array([0.1, -0.3, 0.5, 0.2, -0.4])
    assert white_test(e, X).dof == 2


def test_white_aux_design_cross_products():
    gen = RngStream(2, 0).generator()
    X = np.column_stack([np.ones(20), gen.standard_normal(20), gen.standard_normal(20)])
    Z = white_auxiliary_design(X)
    # 1, x1, x2, x1^2, x1*x2, x2^2
    assert Z.shape[1] == 6


def test_scale_invariance():
    gen = RngStream(3, 0).generator()
    x = gen.uniform(-1, 1, 150)
    e = np.exp(x) * gen.standard_normal(150)
    X = np.column_stack([np.ones(150), x])
    for c in (3.0, 1e-6, 1e6):
        a = breusch_pagan(e, X)
        b = breusch_pagan(c * e, X)
        assert b.statistic == pytest.approx(a.statistic, abs=1e-10 * max(1, a.statistic))
        wa = white_test(e, X)
        wb = white_test(c * e, X)
        assert wb.statistic == pytest.approx(wa.statistic, abs=1e-10 * max(1, wa.statistic))


def test_pvalue_monotone_in_statistic():
    p_prev = 1.0
    for stat in (0.1, 1.0, 3.0, 10.0, 30.0):
        p = 1.0 - float(chi2_cdf(stat, 2))
        assert p < p_prev
        p_prev = p


def test_zero_residuals_rejected():
    Z = np.column_stack([np.ones(10), np.arange(10.0)])
    with pytest.raises(ZeroResidualVariance):
        breusch_pagan(np.zeros(10), Z)
    with pytest.raises(ZeroResidualVariance):
        white_test(np.zeros(10), Z)


def test_power_on_trumpet_data():
    truth = trumpet_truth()
    grid = table1_grid()
    for seed in range(5):
        data = generate_univariate(truth, grid, seed=seed)
        X = polynomial_basis(data.x, 3)
        e = data.y[:, 0] - X @ fit_ols(data.y[:, 0], X).coeffs
        assert breusch_pagan(e, X).p_value < 0.01
        assert white_test(e, X).p_value < 0.01
