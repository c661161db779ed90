"""Uncertainty surfaces and calibration of a trained hedger.

Three views of "how sure is the agent":
  - the aleatoric sigma^2 head over (moneyness, time-to-expiry) states,
  - the epistemic Var(Q) from MC-dropout passes through the critic,
  - binned calibration: does predicted sigma^2 rank realized reward variance?
Near the strike close to expiry is where rewards are wildest, and a trained
variance head should light up exactly there.
"""
import time

import numpy as np

from hedgerl.agent import SimulatedEnvFactory, TrainConfig, train
from hedgerl.env import CostModel
from hedgerl.evaluation import (
    calibration_bins,
    collect_step_samples,
    epistemic_heatmap,
    realized_variance_heatmap,
    uncertainty_heatmap,
)
from hedgerl.market import GbmParams, generate_episodes
from hedgerl.policies import ActorPolicy, BsDeltaPolicy

params = GbmParams(drift=0.05, vol=0.20, initial_price=100.0)
factory = SimulatedEnvFactory(
    gbm=params, maturity_days=30, steps_per_day=1,
    cost=CostModel(0.01), risk_lambda=8.0, master_seed=1,
)

print("training a small agent (600 episodes)...")
t0 = time.perf_counter()
result = train(factory, TrainConfig(episodes=600), seed=3)
print(f"done in {time.perf_counter() - t0:.0f}s\n")
policy = ActorPolicy(result.actor)


def render(grid, label, scale=1000.0):
    print(f"{label} (x{scale:.0f}; rows = days to expiry, cols = moneyness)")
    print("      " + " ".join(f"{m:6.2f}" for m in grid.moneyness))
    for i, td in enumerate(grid.tau_days):
        cells = " ".join(
            "   ---" if np.isnan(v) else f"{v * scale:6.2f}" for v in grid.values[i]
        )
        print(f"{td:4.0f}d {cells}")
    print()


m_grid = np.array([0.85, 0.92, 0.97, 1.0, 1.03, 1.08, 1.15])
t_grid = np.array([2.0, 5.0, 10.0, 20.0])

render(uncertainty_heatmap(policy, m_grid, t_grid, vol=0.2), "aleatoric sigma^2 head")

render(
    epistemic_heatmap(result.critic, policy, m_grid, t_grid, vol=0.2, passes=30, seed=0),
    "epistemic Var(Q), 30 MC-dropout passes",
)

episodes = generate_episodes(params, 30, 1, 3000, master_seed=55)
m_edges = np.array([0.80, 0.89, 0.95, 0.99, 1.01, 1.05, 1.11, 1.20])
t_edges = np.array([0.5, 3.5, 7.5, 14.5, 30.5])
realized = realized_variance_heatmap(episodes, BsDeltaPolicy(), CostModel(0.0), m_edges, t_edges)
render(realized, "realized step-reward variance of the delta hedge")

print("=== 7-bin calibration of the sigma^2 head on held-out episodes ===")
held_out = generate_episodes(params, 30, 1, 400, master_seed=77)
sigma2, rewards = collect_step_samples(policy, held_out, CostModel(0.01))
report = calibration_bins(sigma2, rewards, k=7)
print(f"{'bin':>3} {'n':>6} {'mean sigma^2':>13} {'realized var':>13}")
for i, b in enumerate(report.bins):
    print(f"{i:3d} {b.n:6d} {b.mean_sigma2:13.5f} {b.realized_var:13.5f}")
print(f"Spearman rank correlation across bins: {report.spearman_rho}")
