"""Riccati observers for position and velocity-bias estimation.

Estimates a body's position (and unknown constant measurement biases) from
velocity measurements combined with direction or range measurements to
known source points. Observer gains come from the continuous Riccati
equation; the package also provides the observability Grammians,
persistent-excitation metrics and conditioning bounds that certify
exponential convergence, plus a scenario simulator and a batch CLI.
"""

from .errors import (
    BoundUnavailableError,
    InsufficientSamplesError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
    PdViolationError,
)
from .ltv import (
    LtvSystem,
    PeReport,
    PeWindow,
    SourceGeometry,
    StaticSolvability,
    controllability_gramian_wv,
    instantaneous_observability_rank,
    observability_gramian,
    pe_condition_report,
    pe_metric,
    projector,
    riccati_gramian_wq,
    static_range_solvability,
    transition_matrix,
)
from .numerics import SymMatrix, rk4_step, solve_least_squares, sym_eig_extrema
from .observers import (
    Measurement,
    ObserverState,
    ObserverVariant,
    alternate_energy,
    alternate_range_step,
    as_ltv,
    build,
    direction_excitation,
    error_dynamics_step,
    estimate_velocity_mode,
    initial_state,
    lift_state,
    observer_step,
)
from .riccati import (
    ConditioningBounds,
    GainSchedule,
    RiccatiState,
    cre_step,
    gain,
    lyapunov_value,
    rate_lower_bound,
    trace_growth_envelope,
    ultimate_lambda_max_bound,
    ultimate_lambda_min_bound,
)
from .sim import (
    RunLog,
    RunSummary,
    ScenarioConfig,
    Trajectory,
    circle_track,
    constant_velocity_track,
    default_gains,
    excitation_sweep,
    harmonic_trajectory,
    lissajous_track,
    run_scenario,
    sampled_track,
    scenario_config,
    static_track,
    synthesize_measurement,
)

__version__ = "0.1.0"
