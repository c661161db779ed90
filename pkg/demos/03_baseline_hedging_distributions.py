"""Seller P&L distributions: naked selling vs delta hedging, with and without fees.

The qualitative story: an unhedged short call keeps the premium most of the
time but carries catastrophic left-tail risk; delta hedging collapses the
variance to a fraction of the premium; transaction costs then turn the mean
negative, and hedging more often costs more while narrowing the spread.
(2,000 episodes here for speed; the acceptance suite runs 20,000.)
"""
import numpy as np

from hedgerl.env import CostModel
from hedgerl.evaluation import evaluate_policy
from hedgerl.market import GbmParams, generate_episodes
from hedgerl.policies import BsDeltaPolicy, NoHedgePolicy

params = GbmParams(drift=0.05, vol=0.20, initial_price=100.0)
N = 2000

daily = generate_episodes(params, 30, 1, N, master_seed=11)
intraday = generate_episodes(params, 30, 3, N, master_seed=11)


def describe(name, report):
    print(
        f"{name:<28} mean {report.mean:+7.2%}   std {report.std:7.2%} "
        f"  variance {report.variance:7.4f}   (of premium)"
    )


print(f"=== premium-normalized total P&L over {N} episodes ===")
describe("no hedge, no cost", evaluate_policy(NoHedgePolicy(), daily, CostModel(0.0)))
describe("delta daily, no cost", evaluate_policy(BsDeltaPolicy(), daily, CostModel(0.0)))
describe("delta 3x/day, no cost", evaluate_policy(BsDeltaPolicy(), intraday, CostModel(0.0)))
describe("delta daily, 1% fee", evaluate_policy(BsDeltaPolicy(), daily, CostModel(0.01)))
describe("delta 3x/day, 1% fee", evaluate_policy(BsDeltaPolicy(), intraday, CostModel(0.01)))

print("\n=== the no-hedge left tail ===")
report = evaluate_policy(NoHedgePolicy(), daily, CostModel(0.0))
edges, counts = report.histogram_edges, report.histogram_counts
worst = next(i for i, c in enumerate(counts) if c > 0)
print(f"worst bin: [{edges[worst]:+.2f}, {edges[worst + 1]:+.2f}] x premium "
      f"({counts[worst]} episode(s))")
full_premium_bin = np.searchsorted(edges, 1.0) - 1
share = counts[full_premium_bin] / report.n_samples
print(f"episodes keeping ~the full premium: {share:.1%}")
