"""hedgerl: uncertainty-aware reinforcement learning for option hedging.

A numpy/scipy library covering Black-Scholes analytics, seeded GBM episode
simulation, the hedging MDP with transaction costs, a from-scratch dense
network engine, an uncertainty-aware DDPG agent (heteroscedastic variance
head + MC-dropout critic), strategy evaluation/calibration reports, and
option-chain ingestion.
"""

__version__ = "0.1.0"

from .analytics import (
    Greeks,
    OptionSpec,
    bs_call_price,
    bs_delta,
    bs_greeks,
    implied_vol,
    std_normal_cdf,
)
from .market import (
    GbmParams,
    HedgeEpisode,
    PricePath,
    generate_episode,
    generate_episodes,
    simulate_gbm,
)
from .env import (
    AccountState,
    CostModel,
    HedgeState,
    Transition,
    build_state,
    risk_adjusted_reward,
    rollout,
    step,
)
from .agent import (
    Actor,
    DdpgTrainer,
    ReplayBuffer,
    SimulatedEnvFactory,
    TrainConfig,
    epistemic_q_variance,
    select_action,
    soft_update,
    train,
)
from .policies import ActorPolicy, BsDeltaPolicy, ConstantPolicy, NoHedgePolicy
from .evaluation import (
    CalibrationReport,
    HeatmapGrid,
    PnlReport,
    StrategyTable,
    calibration_bins,
    compare_strategies,
    evaluate_policy,
    per_step_report,
    realized_variance_heatmap,
    uncertainty_heatmap,
)

__all__ = [
    "__version__",
    "Greeks",
    "OptionSpec",
    "bs_call_price",
    "bs_delta",
    "bs_greeks",
    "implied_vol",
    "std_normal_cdf",
    "GbmParams",
    "HedgeEpisode",
    "PricePath",
    "generate_episode",
    "generate_episodes",
    "simulate_gbm",
    "AccountState",
    "CostModel",
    "HedgeState",
    "Transition",
    "build_state",
    "risk_adjusted_reward",
    "rollout",
    "step",
    "Actor",
    "DdpgTrainer",
    "ReplayBuffer",
    "SimulatedEnvFactory",
    "TrainConfig",
    "epistemic_q_variance",
    "select_action",
    "soft_update",
    "train",
    "ActorPolicy",
    "BsDeltaPolicy",
    "ConstantPolicy",
    "NoHedgePolicy",
    "CalibrationReport",
    "HeatmapGrid",
    "PnlReport",
    "StrategyTable",
    "calibration_bins",
    "compare_strategies",
    "evaluate_policy",
    "per_step_report",
    "realized_variance_heatmap",
    "uncertainty_heatmap",
]
