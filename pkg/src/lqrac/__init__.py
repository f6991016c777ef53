"""Average-cost LQR: natural policy gradient actor, conditional stochastic
primal-dual critic with shrinking multi-epoch restarts, and exact
model-based oracles that verify every stochastic estimate in closed form."""

from .actor import ActorConfig, CriticConfig, extract_natural_gradient, npg_step, train
from .critic import (
    ExactBellmanOracle,
    MarkovBellmanOracle,
    SaddleProblem,
    Schedule,
    cspd_run,
    default_schedule,
    gap,
    multi_epoch_run,
)
from .errors import (
    AsymmetricInput,
    ConvergenceFailure,
    DimensionMismatch,
    EpochBudgetExceeded,
    GuardViolation,
    InvalidSchedule,
    LqracError,
    NotControllable,
    NumericalOverflow,
    UnstableInitialPolicy,
    UnstableMatrix,
    UnstablePolicy,
)
from .estimators import BellmanCriticEstimator, NaturalPolicyGradientRegulator
from .linalg import (
    LyapunovSolution,
    smat,
    solve_dare,
    solve_dlyap,
    spectral_radius,
    svec,
)
from .moments import (
    BellmanSystem,
    StationaryModel,
    bias_constants,
    exact_bellman_system,
    gaussian_norm_tail,
    isserlis_moment,
    sharpness_lower_bound,
    stationary_model,
)
from .oracle import (
    ActorConstants,
    PolicyQuantities,
    actor_constants,
    average_cost,
    cost_identity_gap,
    optimal_policy,
    performance_difference,
    pl_sandwich,
    policy_quantities,
)
from .simulate import (
    SampleBatch,
    TrajectoryState,
    derive_seed,
    markov_sample,
    rollout_step,
    start_trajectory,
)
from .system import LinearSystem, Policy, scalar_benchmark_system

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
