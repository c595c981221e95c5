from .baselines import DeConfig, OptimizeResult, optimize_de, random_search
from .ddpg import (
    DdpgAgent,
    DdpgConfig,
    ReplayBuffer,
    Transition,
    critic_targets,
    ddpg_update,
    observation_scale,
    select_action,
)
from .analysis import (
    BANDS,
    NOT_APPLICABLE,
    Z95,
    CvRow,
    analyze_convergence,
    binomial_interval,
    coefficient_of_variation,
    cumulative_max,
    cv_band,
    write_cv_table,
)
from .stages import (
    EvalRecord,
    Stage,
    StagePlan,
    TrainResult,
    default_plan,
    direct_plan,
    quad_prefix,
    read_training_log,
    train,
    write_training_log,
)

__all__ = [
    "DeConfig",
    "OptimizeResult",
    "optimize_de",
    "random_search",
    "DdpgAgent",
    "DdpgConfig",
    "ReplayBuffer",
    "Transition",
    "critic_targets",
    "ddpg_update",
    "observation_scale",
    "select_action",
    "EvalRecord",
    "Stage",
    "StagePlan",
    "TrainResult",
    "default_plan",
    "direct_plan",
    "quad_prefix",
    "read_training_log",
    "train",
    "write_training_log",
    "BANDS",
    "NOT_APPLICABLE",
    "Z95",
    "CvRow",
    "analyze_convergence",
    "binomial_interval",
    "coefficient_of_variation",
    "cumulative_max",
    "cv_band",
    "write_cv_table",
]
