"""Shared-control assistive driving: game-theoretic planner plus a
meta-learned driver model on a discrete grid world."""

from .datagen import (
    PolicyGenSpec,
    collect_dataset,
    default_x0_pool,
    gen_leader_policies,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .game import (
    HorizonSolution,
    follower_response_trajectory,
    qr_response,
    solve_fse,
)
from .gridworld import (
    Action,
    DecisionSchedule,
    DriverTypeParams,
    DRIVER_PRESETS,
    Scenario,
    TYPE_WEIGHTS,
    VehicleState,
    reachable_sets,
    stage_utility,
    successor_table,
    terminal_reward,
    transition,
    utility_table,
)
from .learning import (
    Dataset,
    LearnConfig,
    Sample,
    StrategyPair,
    adapt_driver,
    ce_hessian,
    ce_loss_and_grad,
    load_utility_json,
    normalized_loss,
    run_meta_training,
    save_utility_json,
)
from .planning import (
    EpisodeLog,
    SimulatedDriver,
    StepRecord,
    driver_act,
    episode_to_dict,
    evaluate_episode,
    plan_step,
    receding_horizon_drive,
    render_episode_svg,
)
from .service import create_app

__all__ = [
    "Action",
    "DecisionSchedule",
    "DriverTypeParams",
    "DRIVER_PRESETS",
    "Dataset",
    "EpisodeLog",
    "HorizonSolution",
    "LearnConfig",
    "PolicyGenSpec",
    "Sample",
    "Scenario",
    "SimulatedDriver",
    "StepRecord",
    "StrategyPair",
    "TYPE_WEIGHTS",
    "VehicleState",
    "adapt_driver",
    "ce_hessian",
    "ce_loss_and_grad",
    "collect_dataset",
    "create_app",
    "default_x0_pool",
    "driver_act",
    "episode_to_dict",
    "evaluate_episode",
    "follower_response_trajectory",
    "gen_leader_policies",
    "load_dataset",
    "load_utility_json",
    "normalized_loss",
    "plan_step",
    "qr_response",
    "reachable_sets",
    "receding_horizon_drive",
    "render_episode_svg",
    "run_meta_training",
    "save_dataset",
    "save_utility_json",
    "solve_fse",
    "split_dataset",
    "stage_utility",
    "successor_table",
    "terminal_reward",
    "transition",
    "utility_table",
]
