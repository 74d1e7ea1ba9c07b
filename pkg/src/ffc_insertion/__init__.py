"""Belief-filtered, reliability-controlled cable insertion: simulator, filter and experiment harness."""
from .belief import (
    Belief,
    ImpossibleObservation,
    MalformedMatrix,
    PerceptionMatrix,
    StatusSpace,
    map_estimate,
    measurement_update,
    shift_update,
    smooth_matrix,
    table2_matrix,
    uniform_belief,
    validate_matrix,
)
from .controller import ControllerConfig, Outcome, TrialLog, run_memory_controller, run_memoryless_controller
from .harness import RunConfig, compute_metrics, derive_rng_stream, run_experiment

__version__ = "0.1.0"
