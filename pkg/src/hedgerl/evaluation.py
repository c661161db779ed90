"""Strategy evaluation: P&L reports, strategy tables, heatmaps, calibration.

Homogeneous simulation batches run through a vectorized evaluator that
reproduces hedge_env.rollout step-for-step; heterogeneous (market-data)
episodes fall back to the reference rollout.  All variances use the n-1
divisor and every report states its sample size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .agent import encode_features, epistemic_q_variance
from .analytics import grid_delta, grid_gamma_theta_vega
from .env import CostModel, rollout, state_features
from .market import DAYS_PER_YEAR, HedgeEpisode
from .nets import DenseNet
from .policies import ActorPolicy, BsDeltaPolicy

__all__ = [
    "PnlReport",
    "StrategyRow",
    "StrategyTable",
    "ActionPattern",
    "HeatmapGrid",
    "CalibrationBin",
    "CalibrationReport",
    "RolloutSet",
    "run_policy",
    "evaluate_policy",
    "per_step_report",
    "compare_strategies",
    "action_pattern_slice",
    "uncertainty_heatmap",
    "epistemic_heatmap",
    "realized_variance_heatmap",
    "calibration_bins",
    "collect_step_samples",
]

DEFAULT_HIST_RANGE = (-10.0, 2.0)
DEFAULT_HIST_BINS = 120


@dataclass
class PnlReport:
    """Distribution summary of per-episode P&L (or per-step rewards)."""

    n_samples: int
    mean: float
    variance: float
    std: float
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    premium: float
    normalized: bool

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mean": self.mean,
            "variance": self.variance,
            "std": self.std,
            "histogram_edges": self.histogram_edges.tolist(),
            "histogram_counts": self.histogram_counts.tolist(),
            "premium": self.premium,
            "normalized": self.normalized,
        }


@dataclass
class StrategyRow:
    name: str
    mean: float
    variance: float
    n: int
    gain_vs_delta: float


@dataclass
class StrategyTable:
    rows: list[StrategyRow]


@dataclass
class ActionPattern:
    """Action-vs-moneyness curves per held position, with the delta reference."""

    moneyness: np.ndarray
    tau: float
    positions: list[float]
    curves: dict[float, np.ndarray]
    delta_reference: np.ndarray


@dataclass
class HeatmapGrid:
    """Rectangular (tau x moneyness) grid of nonnegative cell values."""

    moneyness: np.ndarray
    tau_days: np.ndarray
    values: np.ndarray
    counts: np.ndarray | None = None


@dataclass
class CalibrationBin:
    lo: float
    hi: float
    n: int
    mean_sigma2: float
    realized_var: float


@dataclass
class CalibrationReport:
    bins: list[CalibrationBin]
    spearman_rho: float | None
    n_samples: int


@dataclass
class RolloutSet:
    """Positions/rewards of one policy over a set of episodes."""

    episodes: list[HedgeEpisode]
    positions: np.ndarray
    rewards: np.ndarray
    totals: np.ndarray
    premiums: np.ndarray
    features: np.ndarray | None = None  # (B, n_steps, 9) raw rows when requested


def _homogeneous_simulation(episodes: list[HedgeEpisode]) -> bool:
    first = episodes[0]
    if first.features is not None or first.sigma is None:
        return False
    n = first.n_nodes
    strike = first.spec.strike
    sigma = first.sigma
    return all(
        e.features is None
        and e.sigma == sigma
        and e.n_nodes == n
        and e.spec.strike == strike
        for e in episodes
    )


def _run_fast(
    episodes: list[HedgeEpisode],
    policy,
    cost: CostModel,
    keep_features: bool,
) -> RolloutSet:
    n_ep = len(episodes)
    n_nodes = episodes[0].n_nodes
    strike = episodes[0].spec.strike
    sigma = float(episodes[0].sigma)
    prices = np.stack([e.path.prices for e in episodes])
    options = np.stack([e.option_prices for e in episodes])
    taus = np.stack([e.taus for e in episodes])
    premiums = np.array([e.premium for e in episodes])

    n_steps = n_nodes - 1
    positions = np.empty((n_ep, n_steps))
    features_out = np.empty((n_ep, n_steps, 9)) if keep_features else None
    held = np.zeros(n_ep)
    features = np.empty((n_ep, 9))
    features[:, 3:6] = sigma
    for t in range(n_steps):
        spot = prices[:, t]
        tau_t = taus[:, t]
        features[:, 0] = tau_t
        features[:, 1] = spot / strike
        features[:, 2] = held
        gamma, theta, vega = grid_gamma_theta_vega(spot, tau_t, strike, sigma)
        features[:, 6] = gamma
        features[:, 7] = theta
        features[:, 8] = vega
        if keep_features:
            features_out[:, t, :] = features
        held = np.clip(policy.act(features), 0.0, 1.0)
        positions[:, t] = held

    d_spot = np.diff(prices, axis=1)
    d_call = options[:, :-1] - options[:, 1:]
    prev = np.concatenate([np.zeros((n_ep, 1)), positions[:, :-1]], axis=1)
    fees = cost.rate * prices[:, :-1] * np.abs(positions - prev)
    rewards = d_call + positions * d_spot - fees
    rewards[:, -1] -= cost.rate * prices[:, -1] * np.abs(positions[:, -1])
    return RolloutSet(
        episodes=episodes,
        positions=positions,
        rewards=rewards,
        totals=rewards.sum(axis=1),
        premiums=premiums,
        features=features_out,
    )


def _run_slow(
    episodes: list[HedgeEpisode],
    policy,
    cost: CostModel,
    keep_features: bool,
) -> RolloutSet:
    all_pos, all_rew, all_feat = [], [], []
    totals = np.empty(len(episodes))
    for i, episode in enumerate(episodes):
        transitions, total = rollout(episode, policy, cost)
        totals[i] = total
        all_pos.append(np.array([t.action for t in transitions]))
        all_rew.append(np.array([t.reward for t in transitions]))
        if keep_features:
            all_feat.append(np.stack([state_features(t.state) for t in transitions]))
    lengths = {len(r) for r in all_rew}
    if len(lengths) == 1:
        positions = np.stack(all_pos)
        rewards = np.stack(all_rew)
        features = np.stack(all_feat) if keep_features else None
    else:
        positions = np.array(all_pos, dtype=object)
        rewards = np.array(all_rew, dtype=object)
        features = np.array(all_feat, dtype=object) if keep_features else None
    return RolloutSet(
        episodes=episodes,
        positions=positions,
        rewards=rewards,
        totals=totals,
        premiums=np.array([e.premium for e in episodes]),
        features=features,
    )


def run_policy(
    episodes: list[HedgeEpisode],
    policy,
    cost: CostModel,
    keep_features: bool = False,
) -> RolloutSet:
    """Evaluate a policy over episodes (vectorized when the batch allows it)."""
    if not episodes:
        raise ValueError("need at least one episode")
    if hasattr(policy, "act") and _homogeneous_simulation(episodes):
        return _run_fast(episodes, policy, cost, keep_features)
    return _run_slow(episodes, policy, cost, keep_features)


def _step_samples(rollouts: RolloutSet, normalize: bool) -> np.ndarray:
    if rollouts.rewards.dtype == object:
        parts = [
            r / e.premium if normalize else r
            for r, e in zip(rollouts.rewards, rollouts.episodes)
        ]
        return np.concatenate(parts)
    rewards = rollouts.rewards
    if normalize:
        rewards = rewards / rollouts.premiums[:, None]
    return rewards.ravel()


def _make_report(
    samples: np.ndarray,
    premium: float,
    normalized: bool,
    bins: int,
    hist_range: tuple[float, float],
) -> PnlReport:
    if samples.size < 2:
        raise ValueError("need at least two samples for a distribution report")
    clipped = np.clip(samples, hist_range[0], hist_range[1])
    counts, edges = np.histogram(clipped, bins=bins, range=hist_range)
    return PnlReport(
        n_samples=int(samples.size),
        mean=float(samples.mean()),
        variance=float(samples.var(ddof=1)),
        std=float(samples.std(ddof=1)),
        histogram_edges=edges,
        histogram_counts=counts,
        premium=premium,
        normalized=normalized,
    )


def evaluate_policy(
    policy,
    episodes: list[HedgeEpisode],
    cost: CostModel,
    normalize: bool = True,
    bins: int = DEFAULT_HIST_BINS,
    hist_range: tuple[float, float] = DEFAULT_HIST_RANGE,
) -> PnlReport:
    """Distribution of per-episode total P&L, premium-normalized by default."""
    if len(episodes) < 2:
        raise ValueError("need at least two episodes")
    rollouts = run_policy(episodes, policy, cost)
    totals = rollouts.totals / rollouts.premiums if normalize else rollouts.totals
    return _make_report(totals, float(rollouts.premiums.mean()), normalize, bins, hist_range)


def per_step_report(
    policy,
    episodes: list[HedgeEpisode],
    cost: CostModel,
    normalize: bool = True,
    bins: int = DEFAULT_HIST_BINS,
    hist_range: tuple[float, float] = DEFAULT_HIST_RANGE,
) -> PnlReport:
    """Like evaluate_policy but the sample unit is a single step reward."""
    if len(episodes) < 1:
        raise ValueError("need at least one episode")
    rollouts = run_policy(episodes, policy, cost)
    samples = _step_samples(rollouts, normalize)
    return _make_report(samples, float(rollouts.premiums.mean()), normalize, bins, hist_range)


def compare_strategies(
    strategies: list[tuple[str, object]],
    episodes: list[HedgeEpisode],
    cost: CostModel,
    normalize: bool = True,
    per_step: bool = False,
) -> StrategyTable:
    """Evaluate named strategies on common episodes; gains are vs the "delta" row."""
    names = [name for name, _ in strategies]
    if "delta" not in names:
        raise ValueError('compare_strategies requires a strategy named "delta"')
    stats: dict[str, tuple[float, float, int]] = {}
    for name, policy in strategies:
        rollouts = run_policy(episodes, policy, cost)
        if per_step:
            samples = _step_samples(rollouts, normalize)
        else:
            samples = rollouts.totals / rollouts.premiums if normalize else rollouts.totals
        stats[name] = (float(samples.mean()), float(samples.var(ddof=1)), int(samples.size))
    delta_mean = stats["delta"][0]
    rows = [
        StrategyRow(
            name=name,
            mean=stats[name][0],
            variance=stats[name][1],
            n=stats[name][2],
            gain_vs_delta=stats[name][0] - delta_mean,
        )
        for name in names
    ]
    return StrategyTable(rows=rows)


def _grid_features(
    moneyness: np.ndarray,
    tau: float,
    position: np.ndarray,
    vol: float,
    strike: float = 100.0,
) -> np.ndarray:
    """Raw feature rows for synthetic states on a moneyness slice (S = m * strike)."""
    m = np.asarray(moneyness, dtype=float)
    spot = m * strike
    features = np.empty((m.size, 9))
    features[:, 0] = tau
    features[:, 1] = m
    features[:, 2] = position
    features[:, 3:6] = vol
    gamma, theta, vega = grid_gamma_theta_vega(spot, np.full(m.size, tau), strike, vol)
    # express price-scale greeks at the unit used in training episodes (strike 100)
    features[:, 6] = gamma
    features[:, 7] = theta
    features[:, 8] = vega
    return features


def action_pattern_slice(
    policy,
    moneyness_grid: np.ndarray,
    tau: float,
    positions: list[float],
    vol: float = 0.2,
) -> ActionPattern:
    """Policy action vs moneyness at fixed tau, one curve per held position."""
    m = np.asarray(moneyness_grid, dtype=float)
    curves = {}
    for pos in positions:
        feats = _grid_features(m, tau, np.full(m.size, pos), vol)
        curves[float(pos)] = np.clip(policy.act(feats), 0.0, 1.0)
    delta_ref = grid_delta(m * 100.0, np.full(m.size, tau), 100.0, vol)
    return ActionPattern(
        moneyness=m,
        tau=tau,
        positions=[float(p) for p in positions],
        curves=curves,
        delta_reference=delta_ref,
    )


def uncertainty_heatmap(
    policy: ActorPolicy,
    moneyness_grid: np.ndarray,
    tau_days_grid: np.ndarray,
    vol: float = 0.2,
    days_per_year: float = DAYS_PER_YEAR,
) -> HeatmapGrid:
    """Actor sigma^2 over a (tau, moneyness) grid, held position set to the BS delta."""
    m = np.asarray(moneyness_grid, dtype=float)
    tau_days = np.asarray(tau_days_grid, dtype=float)
    if m.size == 0 or tau_days.size == 0:
        raise ValueError("grids must be nonempty")
    values = np.empty((tau_days.size, m.size))
    for i, td in enumerate(tau_days):
        tau = td / days_per_year
        delta = grid_delta(m * 100.0, np.full(m.size, tau), 100.0, vol)
        feats = _grid_features(m, tau, delta, vol)
        values[i] = policy.sigma2(feats)
    return HeatmapGrid(moneyness=m, tau_days=tau_days, values=values)


def epistemic_heatmap(
    critic: DenseNet,
    policy: ActorPolicy,
    moneyness_grid: np.ndarray,
    tau_days_grid: np.ndarray,
    vol: float = 0.2,
    passes: int = 30,
    seed: int = 0,
    days_per_year: float = DAYS_PER_YEAR,
) -> HeatmapGrid:
    """MC-dropout Var(Q) over the grid at the policy's own actions."""
    m = np.asarray(moneyness_grid, dtype=float)
    tau_days = np.asarray(tau_days_grid, dtype=float)
    values = np.empty((tau_days.size, m.size))
    cell = 0
    for i, td in enumerate(tau_days):
        tau = td / days_per_year
        delta = grid_delta(m * 100.0, np.full(m.size, tau), 100.0, vol)
        feats = _grid_features(m, tau, delta, vol)
        actions = policy.act(feats)
        encoded = encode_features(feats)
        for j in range(m.size):
            values[i, j] = epistemic_q_variance(
                critic, encoded[j], float(actions[j]), passes, seed + cell
            )
            cell += 1
    return HeatmapGrid(moneyness=m, tau_days=tau_days, values=values)


def realized_variance_heatmap(
    episodes: list[HedgeEpisode],
    policy,
    cost: CostModel,
    moneyness_edges: np.ndarray,
    tau_day_edges: np.ndarray,
    normalize: bool = True,
    days_per_year: float = DAYS_PER_YEAR,
) -> HeatmapGrid:
    """Empirical variance of step rewards bucketed by (moneyness, tau).

    Cells with fewer than two observations are flagged missing (NaN), not
    zero.  Bucket membership uses the state at the start of each step.
    """
    m_edges = np.asarray(moneyness_edges, dtype=float)
    t_edges = np.asarray(tau_day_edges, dtype=float)
    rollouts = run_policy(episodes, policy, cost, keep_features=True)
    if rollouts.rewards.dtype == object:
        rewards = np.concatenate(
            [r / e.premium if normalize else r for r, e in zip(rollouts.rewards, rollouts.episodes)]
        )
        feats = np.concatenate([f for f in rollouts.features])
    else:
        rewards = (
            (rollouts.rewards / rollouts.premiums[:, None]) if normalize else rollouts.rewards
        ).ravel()
        feats = rollouts.features.reshape(-1, 9)
    taus_days = feats[:, 0] * days_per_year
    moneyness = feats[:, 1]

    n_t, n_m = t_edges.size - 1, m_edges.size - 1
    ti = np.digitize(taus_days, t_edges) - 1
    mi = np.digitize(moneyness, m_edges) - 1
    ok = (ti >= 0) & (ti < n_t) & (mi >= 0) & (mi < n_m)
    flat = ti[ok] * n_m + mi[ok]
    r = rewards[ok]
    counts = np.bincount(flat, minlength=n_t * n_m)
    sums = np.bincount(flat, weights=r, minlength=n_t * n_m)
    cell_mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    sq_dev = np.bincount(flat, weights=(r - cell_mean[flat]) ** 2, minlength=n_t * n_m)
    values = np.full(n_t * n_m, np.nan)
    enough = counts >= 2
    values[enough] = sq_dev[enough] / (counts[enough] - 1)
    values = values.reshape(n_t, n_m)
    counts = counts.reshape(n_t, n_m)
    centers_m = 0.5 * (m_edges[:-1] + m_edges[1:])
    centers_t = 0.5 * (t_edges[:-1] + t_edges[1:])
    return HeatmapGrid(moneyness=centers_m, tau_days=centers_t, values=values, counts=counts)


def calibration_bins(
    sigma2: np.ndarray, rewards: np.ndarray, k: int = 7
) -> CalibrationReport:
    """Equal-count bins by predicted sigma^2 vs realized reward variance.

    Reports the Spearman rank correlation across bins; a constant sigma^2
    makes the ranking undefined and is reported as missing.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    if sigma2.shape != rewards.shape:
        raise ValueError("sigma2 and rewards must have the same shape")
    if k < 2:
        raise ValueError("need at least two bins")
    if sigma2.size < k:
        raise ValueError(f"need at least {k} samples, got {sigma2.size}")
    order = np.argsort(sigma2, kind="stable")
    bins = []
    means, variances = [], []
    for chunk in np.array_split(order, k):
        s = sigma2[chunk]
        r = rewards[chunk]
        realized = float(r.var(ddof=1)) if r.size >= 2 else math.nan
        bins.append(
            CalibrationBin(
                lo=float(s.min()),
                hi=float(s.max()),
                n=int(s.size),
                mean_sigma2=float(s.mean()),
                realized_var=realized,
            )
        )
        means.append(float(s.mean()))
        variances.append(realized)
    rho: float | None
    if np.unique(np.asarray(means)).size < 2 or any(math.isnan(v) for v in variances):
        rho = None
    else:
        rho = float(spearmanr(means, variances).statistic)
        if math.isnan(rho):
            rho = None
    return CalibrationReport(bins=bins, spearman_rho=rho, n_samples=int(sigma2.size))


def collect_step_samples(
    policy: ActorPolicy,
    episodes: list[HedgeEpisode],
    cost: CostModel,
    normalize: bool = True,
    limit: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step (sigma^2, realized reward) pairs for calibration analysis."""
    rollouts = run_policy(episodes, policy, cost, keep_features=True)
    if rollouts.rewards.dtype == object:
        rewards = np.concatenate(
            [r / e.premium if normalize else r for r, e in zip(rollouts.rewards, rollouts.episodes)]
        )
        feats = np.concatenate([f for f in rollouts.features])
    else:
        rewards = (
            (rollouts.rewards / rollouts.premiums[:, None]) if normalize else rollouts.rewards
        ).ravel()
        feats = rollouts.features.reshape(-1, 9)
    sigma2 = policy.sigma2(feats)
    if limit is not None:
        sigma2, rewards = sigma2[:limit], rewards[:limit]
    return sigma2, rewards
