"""Probabilistic demand-intensity modeling with non-constant variance and
covariance: baseline regressions, heteroscedasticity tests, the multiplicative
heteroscedasticity model, rank-r covariance regression, and a synthetic
multiple-stripe-analysis generator with known ground truth.
"""

from .baseline import (
    BilinearFit,
    BoxCoxResult,
    LinearFit,
    MLRFit,
    VarianceFunctionFit,
    box_cox,
    box_cox_estimate,
    fit_bilinear,
    fit_mlr,
    fit_ols,
    fit_variance_function,
    fit_wls,
)
from .covreg import (
    CovRegFit,
    CovRegPosterior,
    CovRegPriors,
    CovRegSpec,
    GibbsProtocol,
    correlation_curves,
    covariance_at,
    fit_covreg_em,
    fit_covreg_gibbs,
    mean_covariance_at,
    prediction_ellipse,
)
from .dataset import (
    BasisConfig,
    DemandDataset,
    StripeSet,
    StripeSummary,
    build_stripes,
    load_dataset,
    polynomial_basis,
    save_dataset,
    stripe_summary,
)
from .diagnostics import TestResult, breusch_pagan, white_test
from .harvey import (
    ChainProtocol,
    HarveyFit,
    HarveyPosterior,
    HarveyPrediction,
    HarveyPriors,
    HarveySpec,
    fit_harvey_bayes,
    fit_harvey_mle,
    harvey_predict,
)
from .stochastics import (
    ChainDiagnostics,
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
from .synth import (
    MultivariateTruth,
    ScalingGrid,
    UnivariateTruth,
    generate_multivariate,
    generate_univariate,
    paper_like_truth,
    table1_grid,
    trumpet_truth,
)

__version__ = "0.1.0"
