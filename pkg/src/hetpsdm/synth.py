"""Ground-truth synthetic data generation on the MSA amplitude-scaling grid.

Data comes straight from the statistical generative models (no structural
surrogate), so every estimator in the package has an exact ground truth.
The bundled presets are synthetic constructions, not measured data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import DemandDataset, polynomial_basis
from .errors import NotPositiveDefinite
from .stochastics import RngStream, cholesky_pd


@dataclass(frozen=True)
class ScalingGrid:
    """Log-intensity levels and records per level for stripe generation."""

    ln_sa: np.ndarray
    records_per_level: int

    def __post_init__(self):
        ln_sa = np.asarray(self.ln_sa, dtype=float)
        if np.any(np.diff(ln_sa) <= 0):
            raise ValueError("levels must be strictly increasing")
        ln_sa.setflags(write=False)
        object.__setattr__(self, "ln_sa", ln_sa)

    @property
    def sa(self) -> np.ndarray:
        return np.exp(self.ln_sa)

    @property
    def n_rows(self) -> int:
        return len(self.ln_sa) * self.records_per_level

    def row_x(self) -> np.ndarray:
        return np.repeat(self.ln_sa, self.records_per_level)


def table1_grid(records_per_level: int = 80) -> ScalingGrid:
    """The 25-level amplitude-scaling grid: ln Sa from -2.3 to 0.1, step 0.1."""
    ln_sa = np.round(-2.3 + 0.1 * np.arange(25), 10)
    return ScalingGrid(ln_sa=ln_sa, records_per_level=records_per_level)


@dataclass(frozen=True)
class UnivariateTruth:
    """Generating coefficients for the log-linear variance model."""

    beta: np.ndarray
    gamma: np.ndarray

    def sd_at(self, x) -> np.ndarray:
        Z = polynomial_basis(np.asarray(x, dtype=float), len(self.gamma) - 1)
        return np.exp(0.5 * (Z @ self.gamma))

    def mean_at(self, x) -> np.ndarray:
        X = polynomial_basis(np.asarray(x, dtype=float), len(self.beta) - 1)
        return X @ self.beta


@dataclass(frozen=True)
class MultivariateTruth:
    """Generating matrices for the rank-r covariance regression model."""

    A: np.ndarray
    B: tuple
    Psi: np.ndarray

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def rank(self) -> int:
        return len(self.B)

    @property
    def basis_degree(self) -> int:
        return self.A.shape[1] - 1

    def mean_at(self, x) -> np.ndarray:
        Xb = polynomial_basis(np.asarray(x, dtype=float), self.basis_degree)
        return Xb @ self.A.T

    def cov_at(self, x) -> np.ndarray:
        xb = polynomial_basis(float(x), self.basis_degree)
        S = self.Psi.copy()
        for Bk in self.B:
            u = Bk @ xb
            S += np.outer(u, u)
        return S

    def corr_at(self, x) -> np.ndarray:
        S = self.cov_at(x)
        d = np.sqrt(np.diag(S))
        return S / np.outer(d, d)


def generate_univariate(
    truth: UnivariateTruth, grid: ScalingGrid, seed: int = 0, name: str = "d1"
) -> DemandDataset:
    """Sample y = basis(x)' beta + exp(basis(x)' gamma / 2) * z per record."""
    gen = RngStream(seed, 0).generator()
    x = grid.row_x()
    mu = truth.mean_at(x)
    sd = truth.sd_at(x)
    z = gen.standard_normal(len(x))
    y = mu + sd * z
    meta = {"generator": "univariate", "seed": int(seed)}
    return DemandDataset(x=x, y=y[:, None], names=(name,), meta=meta)


def generate_multivariate(
    truth: MultivariateTruth, grid: ScalingGrid, seed: int = 0, names=None
) -> DemandDataset:
    """Exact generative sampling of the random-effects covariance model."""
    try:
        Lpsi = cholesky_pd(truth.Psi, "Psi")
    except NotPositiveDefinite:
        raise
    gen = RngStream(seed, 0).generator()
    x = grid.row_x()
    n = len(x)
    p = truth.p
    r = truth.rank
    Xb = polynomial_basis(x, truth.basis_degree)
    mu = Xb @ truth.A.T
    y = mu.copy()
    if r > 0:
        gam = gen.standard_normal((n, r))
        Bstack = np.asarray(truth.B)
        H = np.einsum("kpq,nq->npk", Bstack, Xb)
        y += np.einsum("npk,nk->np", H, gam)
    eps = gen.standard_normal((n, p)) @ Lpsi.T
    y += eps
    if names is None:
        names = tuple(f"d{j + 1}" for j in range(p))
    meta = {"generator": "multivariate", "seed": int(seed)}
    return DemandDataset(x=x, y=y, names=tuple(names), meta=meta)


def trumpet_truth() -> UnivariateTruth:
    """Univariate preset with dispersion growing in log-intensity."""
    return UnivariateTruth(
        beta=np.array([0.5, 1.2, 0.1, -0.05]),
        gamma=np.array([-2.0, 0.8, 0.0, 0.0]),
    )


def paper_like_truth() -> MultivariateTruth:
    """Trivariate preset with U-shaped rho_12 / rho_23 curves dipping near
    ln Sa = -0.9 and uniformly high rho_13, plus trumpet-shaped variances.

    The three factors are: a common factor growing with intensity (raises all
    correlations at high x), a mid-range bump loading components 1 and 3
    against component 2 (digs the U), and a small growing factor on
    component 2 alone.
    """
    base = 3  # cubic basis, q = 4
    q = base + 1

    def poly_coeffs(fn):
        # interpolate fn on q Chebyshev-ish nodes of [-2.3, 0.1]
        nodes = np.linspace(-2.3, 0.1, q)
        V = polynomial_basis(nodes, base)
        return np.linalg.solve(V, fn(nodes))

    # scalar factor shapes over the grid range
    s_common = poly_coeffs(lambda x: 0.22 * (1.0 + 0.38 * (x + 2.3)))
    s_bump = poly_coeffs(lambda x: 0.16 * (1.0 - ((x + 0.9) / 1.55) ** 2))
    s_mid = poly_coeffs(lambda x: 0.10 * (1.0 + 0.30 * (x + 2.3)))

    def factor(shape_coeffs, loading):
        return np.outer(np.asarray(loading, dtype=float), shape_coeffs)

    B1 = factor(s_common, [1.0, 1.0, 1.0])
    B2 = factor(s_bump, [1.0, -1.0, 1.0])
    B3 = factor(s_mid, [0.15, 1.0, 0.15])
    rho = np.array(
        [
            [1.0, 0.70, 0.93],
            [0.70, 1.0, 0.70],
            [0.93, 0.70, 1.0],
        ]
    )
    sd0 = 0.13
    Psi = sd0**2 * rho
    A = np.array(
        [
            [0.55, 1.25, 0.10, -0.05],
            [0.40, 1.10, 0.06, -0.03],
            [0.52, 1.22, 0.11, -0.05],
        ]
    )
    return MultivariateTruth(A=A, B=(B1, B2, B3), Psi=Psi)


PRESETS = {
    "trumpet": trumpet_truth,
    "paper-like": paper_like_truth,
}


def truth_to_dict(truth) -> dict:
    if isinstance(truth, UnivariateTruth):
        return {
            "kind": "univariate",
            "beta": truth.beta.tolist(),
            "gamma": truth.gamma.tolist(),
        }
    return {
        "kind": "multivariate",
        "A": truth.A.tolist(),
        "B": [Bk.tolist() for Bk in truth.B],
        "Psi": truth.Psi.tolist(),
    }


def truth_from_dict(doc: dict):
    if doc["kind"] == "univariate":
        return UnivariateTruth(
            beta=np.asarray(doc["beta"], dtype=float),
            gamma=np.asarray(doc["gamma"], dtype=float),
        )
    if doc["kind"] == "multivariate":
        return MultivariateTruth(
            A=np.asarray(doc["A"], dtype=float),
            B=tuple(np.asarray(Bk, dtype=float) for Bk in doc["B"]),
            Psi=np.asarray(doc["Psi"], dtype=float),
        )
    raise ValueError(f"unknown truth kind {doc.get('kind')!r}")


def save_truth(truth, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth_to_dict(truth), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_truth(path):
    with open(path, "r", encoding="utf-8") as fh:
        return truth_from_dict(json.load(fh))
