"""Regression discontinuity estimation with many cutoffs and heterogeneous doses."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    BandwidthPlan,
    CounterfactualSpec,
    CutoffSchedule,
    KernelSpec,
    Sample,
    ValidationReport,
    kernel_eval,
    nn_residuals,
    validate_schedule,
)
from .errors import RDDError, RDDNumericalError, RDDValidationError  # noqa: E402
from .lpr import fit_one_sided, jump_estimate, estimate_jumps  # noqa: E402
from .quadrature import QuadratureConfig  # noqa: E402
from .weights import CorrectionWeights, PolyBasis, correction_weights, local_beta_fit  # noqa: E402
from .sharp import AteResult, ate_continuous, ate_discrete, select_h2, var_sharp  # noqa: E402
from .bandwidth import BandwidthRule, ik_bandwidth, ik_bandwidths, rate_adjust, shrink  # noqa: E402
from .fuzzy import (  # noqa: E402
    WBasis,
    build_wtilde,
    classify_compliance,
    enumerate_compliance,
    iterate_mse_optimal,
    var_ec,
    wls_theta,
)
from .mc import DgpConfig, draw_sample, run_study  # noqa: E402
