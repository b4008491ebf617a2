"""Significance-aware status-update scheduling for remote safety monitoring.

Builds optimal safety-level estimators from Markov source models and loss
matrices, tabulates entropy penalties and gain indices through average-cost
dynamic programming with a dual price search, and evaluates the Maximum Gain
First policy against baselines in a slotted erasure-channel simulator.
"""

__version__ = "0.1.0"

from .bandit import (
    BanditSolution,
    DualTrace,
    SolverSettings,
    dual_ascent,
    dual_lower_bound,
    dual_update,
    gain_index,
    relative_value_iteration,
)
from .errors import ConfigError, ConvergenceError, ValidationError
from .loss import (
    LossMatrix,
    conditional_entropy_given,
    loss_01,
    loss_quadratic,
    loss_safety_example,
    optimal_estimate,
)
from .markov import (
    MarkovSource,
    SafetyMap,
    banded_safety_map,
    build_row_chain,
    identity_safety_map,
    is_primitive,
    safety_distribution,
    sample_next,
    stationary_distribution,
    step_distribution,
)
from .policies import (
    POLICY_KEYS,
    AgentState,
    PolicyDecision,
    UpdateQueue,
    maf_select,
    mgf_select,
    queue_policy_step,
    randomized_select,
)
from .simulate import (
    SimConfig,
    SimRecord,
    SolvedSystem,
    advance_aoi,
    run_paired,
    run_simulation,
    run_sweep,
    solve_system,
)
from .tables import AgentClassSpec, EstimatorTable, PenaltyTable, build_tables

__all__ = [
    "__version__",
    "AgentClassSpec",
    "AgentState",
    "BanditSolution",
    "ConfigError",
    "ConvergenceError",
    "DualTrace",
    "EstimatorTable",
    "LossMatrix",
    "MarkovSource",
    "POLICY_KEYS",
    "PenaltyTable",
    "PolicyDecision",
    "SafetyMap",
    "SimConfig",
    "SimRecord",
    "SolvedSystem",
    "SolverSettings",
    "UpdateQueue",
    "ValidationError",
    "advance_aoi",
    "banded_safety_map",
    "build_row_chain",
    "build_tables",
    "conditional_entropy_given",
    "dual_ascent",
    "dual_lower_bound",
    "dual_update",
    "gain_index",
    "identity_safety_map",
    "is_primitive",
    "loss_01",
    "loss_quadratic",
    "loss_safety_example",
    "maf_select",
    "mgf_select",
    "optimal_estimate",
    "queue_policy_step",
    "randomized_select",
    "relative_value_iteration",
    "run_paired",
    "run_simulation",
    "run_sweep",
    "safety_distribution",
    "sample_next",
    "solve_system",
    "stationary_distribution",
    "step_distribution",
]
