"""Kernel ridge regression for panels with interactive fixed effects."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BalanceError,
    DegenerateError,
    IfeKrrError,
    InputError,
    NumericError,
    RankDeficiencyError,
    ResourceError,
    SelectionError,
    SpecError,
)
from .gcv import GcvResult  # noqa: E402
from .hetero import (  # noqa: E402
    HeteroUnitFit,
    fit_hetero,
    fit_hetero_unit,
    fit_hetero_unit_gcv,
    gcv_hetero,
    predict_hetero,
    sigma_eps_hetero,
    smoother_matrix_hetero,
)
from .homo import (  # noqa: E402
    HomoFit,
    fit_homo,
    fit_homo_gcv,
    gcv_homo,
    predict_homo,
    projection_P,
    sigma_eps_homo,
    smoother_matrix_homo,
)
from .inference import (  # noqa: E402
    IntervalEstimate,
    a_nt,
    ci_beta_partial_linear,
    ci_g_homo,
    ci_mean_hetero,
    normal_quantile,
    prediction_interval,
    sigma_x0_sq,
)
from .kernels import (  # noqa: E402
    Additive,
    Gaussian,
    GramEigen,
    Linear,
    Polynomial,
    cross_gram,
    effective_dim,
    eigendecompose,
    eval_kernel,
    format_kernel,
    gram,
    nystrom_phi,
    parse_kernel,
    regularized_kernel_value,
)
from .panel import PanelData, build_Z  # noqa: E402
