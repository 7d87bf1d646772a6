"""Maximum seek-and-sample planning over unknown scalar fields."""

from .acquisition import (
    MaxValueSet,
    UCBSchedule,
    action_reward,
    mvi_reward,
    mvi_reward_fn,
    refresh_max_values,
    ucb_reward,
    ucb_reward_fn,
)
from .gp import (
    FactorizationError,
    GPBelief,
    SearchDomain,
    SpectralSample,
    argmax_of_sample,
)
from .harness import (
    BatchResults,
    ExperimentConfig,
    export_plot_data,
    load_record,
    load_results,
    run_batch,
    run_trial,
    save_record,
    save_results,
    score_trial,
)
from .kernels import SpatiotemporalKernel, SquaredExponential
from .metrics import (
    MetricReport,
    StepEntry,
    TrialRecord,
    mann_whitney_u,
    mss_reward,
    rmse,
    xstar_error,
)
from .planner import (
    PlannerDecision,
    SearchConfig,
    TrappedVehicleError,
    plan_boustrophedon,
    plan_mcts,
    plan_mcts_ml,
    plan_myopic,
    puct_value,
    widen,
)
from .world import (
    ActionPrimitive,
    DubinsPrimitiveSet,
    GroundTruthField,
    HolonomicPrimitives,
    ObservationBatch,
    ObstacleMap,
    dubins_primitives,
    feasible_actions,
    generate_environment,
    load_environment,
    load_obstacles,
    observe,
    reveal_obstacles,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
