"""Rerandomization designs and inference for quantile treatment effects."""
from ._backend import BACKEND
from .design import (
    AssignmentDraw,
    BalanceState,
    DesignSpec,
    assignment_distance,
    covariate_mean_diff,
    mahalanobis,
    sample_cre,
    sample_rem,
    threshold_from_p,
)
from .errors import (
    CalibrationFailedError,
    DegenerateCovariatesError,
    DegenerateDensityError,
    DegenerateIndicatorError,
    DegeneracyError,
    InvalidParameterError,
    MalformedInputError,
    RejectionBudgetExhausted,
    RemQteError,
)
from .estimate import (
    ObservedData,
    QteInference,
    analyze,
    arm_quantile,
    confidence_interval,
    kde_density,
    qte_estimate,
    sample_covariances,
    variance_bounds,
)
from .limitlaw import (
    MixtureLaw,
    TruncatedComponent,
    chisq_cdf,
    chisq_quantile,
    mixture_quantile,
    priasv,
    sample_qte_limit,
    sample_truncated,
    truncated_variance,
)
from .popmodel import (
    FinitePopulation,
    OracleLaw,
    covariance_blocks,
    oracle_variance_components,
    population_quantile,
    squared_correlations,
    true_qte,
)

__version__ = "0.1.0"
