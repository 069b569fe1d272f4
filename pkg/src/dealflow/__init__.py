"""Two-phase model of group-deal purchase dynamics.

Random discovery (a Poisson process) governs purchases until the deal's
inflection point; afterwards counts grow multiplicatively with decaying
novelty. The package fits both phases from purchase traces, simulates
cohorts, and trains and evaluates purchase-count predictors.
"""

__version__ = "0.1.0"

from .deal_model import (
    CleaningReport,
    Dataset,
    DealAttributes,
    PurchaseTrace,
    TraceFormatError,
    TraceSample,
    TraceValidationError,
    clean_dataset,
    interarrival_times,
    parse_trace_csv,
    resample_trace,
)
from .evaluation import EvalConfig, EvalReport, evaluate, relative_error, split_dataset
from .predictors import (
    Baseline2Params,
    HybridPolicy,
    MlrModel,
    RankDeficiencyWarning,
    SpModel,
    encode_attributes,
    predict_baseline1,
    predict_baseline2,
    predict_hybrid,
    predict_mlr,
    predict_sp,
    train_baseline2,
    train_mlr,
    train_sp,
)
from .propagation import (
    GrowthNoise,
    NoveltyDecay,
    PropagationModel,
    align_at_inflection,
    decay_csv_text,
    estimate_decay,
    expected_log_growth,
    fit_decay_exponential,
)
from .renewal import (
    RenewalModel,
    conditional_failure_probability,
    erlang_cdf,
    failure_probability,
    fit_exponential,
    tipping_time_density,
)
from .simulate import SimConfig, SimResult, mean_growth_curve, simulate_cohort, simulate_deal
