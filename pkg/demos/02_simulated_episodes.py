"""Seeded GBM episodes: path anatomy, reproducibility, grid conventions."""
import numpy as np

from hedgerl.market import GbmParams, generate_episode, generate_episodes, simulate_gbm

params = GbmParams(drift=0.05, vol=0.20, initial_price=100.0)

print("=== one 30-day daily episode (seed 42) ===")
episode = generate_episode(params, maturity_days=30, steps_per_day=1, seed=42)
print(f"nodes: {episode.n_nodes}  strike: {episode.spec.strike}  premium: {episode.premium:.4f}")
print(f"{'step':>4} {'tau (days)':>10} {'stock':>9} {'option':>8}")
for t in (0, 5, 10, 20, 29, 30):
    print(
        f"{t:4d} {episode.taus[t] * 365:10.1f} {episode.path.prices[t]:9.4f} "
        f"{episode.option_prices[t]:8.4f}"
    )
payoff = max(episode.path.prices[-1] - 100.0, 0.0)
print(f"terminal option price equals the payoff: {episode.option_prices[-1]:.6f} == {payoff:.6f}")

print("\n=== reproducibility: identical seeds give bit-identical paths ===")
a = simulate_gbm(params, 30 / 365, 1 / 365, seed=7)
b = simulate_gbm(params, 30 / 365, 1 / 365, seed=7)
print("paths identical:", np.array_equal(a.prices, b.prices))

print("\n=== hedging three times a day refines the grid ===")
fine = generate_episode(params, maturity_days=30, steps_per_day=3, seed=42)
print(f"daily grid nodes: {episode.n_nodes},  3x/day grid nodes: {fine.n_nodes}")

print("\n=== a batch shares the master seed but each episode owns a split ===")
batch = generate_episodes(params, 30, 1, n_episodes=4, master_seed=2024)
for i, ep in enumerate(batch):
    print(f"episode {i}: seed {ep.path.seed}  S_T = {ep.path.prices[-1]:8.3f}")
