"""Robustness of predictor feedback to time-varying delay mismatch."""

from .constant_delay import (
    StabilityWindow,
    crossing_curve,
    figure1_sweep,
    rightmost_root,
)
from .ddesim import (
    fit_decay,
    make_compatible_history,
    predictor_control,
    recover_state,
    simulate_closed_loop,
    simulate_comparison,
    simulate_derivative_form,
)
from .errors import (
    ConsistencyError,
    CoverageError,
    DelayRobustError,
    DimensionError,
    DivergenceError,
    InfeasibleError,
    NumericalError,
    PreconditionError,
    ValidationError,
)
from .linalg import DecayEnvelope, decay_envelope, eigvals, mat_exp, optimize_envelope
from .margin import (
    ComparisonSystem,
    MarginReport,
    PlantModel,
    certify_sigma,
    closed_loop_margin,
    comparison_system,
    max_epsilon,
    scalar_bound,
    scalar_plant,
    small_gain_check,
)
from .signals import DelaySignal, parse_signal

__version__ = "0.1.0"
