"""Open-ended sequential Monte Carlo p-values with bounded resampling risk."""

__version__ = "0.1.0"

from .applications import (
    BootstrapReport,
    ContingencyTable,
    EngineConfig,
    NullModel,
    SampleCounter,
    bootstrap_pvalue,
    check_level,
    check_level_bootstrap,
    chisq_pvalue,
    double_bootstrap,
    example_table,
    find_sample_size,
    fit_independence,
    lrt_statistic,
    sample_null,
)
from .boundary import BoundaryTable, BoundaryError, DegenerateBoundaryError, exact_boundaries
from .inference import (
    ConfidenceInterval,
    OutcomeDistribution,
    RiskBound,
    StoppingCounts,
    confidence_interval,
    confidence_interval_running,
    expected_stop_time,
    naive_risk,
    outcome_distribution,
    resampling_risk,
    wald_lower_bound,
)
from .runner import (
    BernoulliSampler,
    CallbackSampler,
    RunResult,
    RunState,
    TextBitSource,
    coarse_interval,
    get_table,
    h_alpha,
    interim_interval,
    run,
)
from .spending import MAX_EPSILON, SpendingSequence, validate_spending

__all__ = [
    "BernoulliSampler",
    "BootstrapReport",
    "BoundaryError",
    "BoundaryTable",
    "CallbackSampler",
    "ConfidenceInterval",
    "ContingencyTable",
    "DegenerateBoundaryError",
    "EngineConfig",
    "MAX_EPSILON",
    "NullModel",
    "OutcomeDistribution",
    "RiskBound",
    "RunResult",
    "RunState",
    "SampleCounter",
    "SpendingSequence",
    "StoppingCounts",
    "TextBitSource",
    "bootstrap_pvalue",
    "check_level",
    "check_level_bootstrap",
    "chisq_pvalue",
    "coarse_interval",
    "confidence_interval",
    "confidence_interval_running",
    "double_bootstrap",
    "exact_boundaries",
    "example_table",
    "expected_stop_time",
    "find_sample_size",
    "fit_independence",
    "get_table",
    "h_alpha",
    "interim_interval",
    "lrt_statistic",
    "naive_risk",
    "outcome_distribution",
    "resampling_risk",
    "run",
    "sample_null",
    "validate_spending",
    "wald_lower_bound",
]
