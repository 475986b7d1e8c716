"""conesched: learn to imitate a cone scheduler from observed decisions.

The package splits into policy math (`policy`), the online learner
(`learner`), the queueing simulator (`simulate`), evaluation (`metrics`),
file formats (`io`), and runnable pipelines (`pipeline`, `cli`).
"""

from .errors import (
    CheckpointError,
    ConfigNotInScheduleError,
    DimensionMismatchError,
    ExpertValidationError,
    HorizonTooShortError,
    InputError,
    RunConfigError,
    TraceFormatError,
)
from .learner import Prediction, ScheduleImitator, effective_param_count, epoch_boundary
from .metrics import (
    LossRecord,
    anytime_loss_bound,
    backlog_grid,
    decision_agreement,
    excess_loss_fraction,
    excess_loss_fraction_bound,
    fixed_horizon_loss_bound,
    imitation_loss,
    imitation_loss_direct,
)
from .policy import (
    ConeScheduler,
    ScheduleSet,
    TriangularParams,
    best_config,
    best_config_index,
    config_score,
    matrix_form_score,
    normalize_backlog,
    pair_sign,
    params_to_matrix,
    triangular_pairs,
    triangular_size,
    validate_expert,
)
from .simulate import (
    DeterministicArrivals,
    GeometricArrivals,
    ObservationBatch,
    SimConfig,
    Trace,
    TraceArrivals,
    TraceRecord,
    half_switch_arrivals,
    replay_trace,
    sample_geometric,
    simulate_expert,
    step_dynamics,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigNotInScheduleError",
    "DimensionMismatchError",
    "ExpertValidationError",
    "HorizonTooShortError",
    "InputError",
    "RunConfigError",
    "TraceFormatError",
    "Prediction",
    "ScheduleImitator",
    "effective_param_count",
    "epoch_boundary",
    "LossRecord",
    "anytime_loss_bound",
    "backlog_grid",
    "decision_agreement",
    "excess_loss_fraction",
    "excess_loss_fraction_bound",
    "fixed_horizon_loss_bound",
    "imitation_loss",
    "imitation_loss_direct",
    "ConeScheduler",
    "ScheduleSet",
    "TriangularParams",
    "best_config",
    "best_config_index",
    "config_score",
    "matrix_form_score",
    "normalize_backlog",
    "pair_sign",
    "params_to_matrix",
    "triangular_pairs",
    "triangular_size",
    "validate_expert",
    "DeterministicArrivals",
    "GeometricArrivals",
    "ObservationBatch",
    "SimConfig",
    "Trace",
    "TraceArrivals",
    "TraceRecord",
    "half_switch_arrivals",
    "replay_trace",
    "sample_geometric",
    "simulate_expert",
    "step_dynamics",
    "__version__",
]
