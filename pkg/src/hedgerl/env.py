"""The hedging MDP: states, transitions, costs and per-step rewards.

A short call is hedged with a long stock position N in [0, 1].  The account
starts with the premium in cash; each step the hedger picks the next
position, pays a proportional fee on the traded notional, and earns

    R_t = C_t - C_{t+1} + N_{t+1} (S_{t+1} - S_t) - fee,

the change of the cash+stock-option portfolio value.  At expiry the option
settles at its final value and the remaining stock is liquidated (with fee).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytics import grid_gamma_theta_vega
from .market import HedgeEpisode

__all__ = [
    "CostModel",
    "HedgeState",
    "AccountState",
    "Transition",
    "STATE_FIELDS",
    "initial_account",
    "step",
    "risk_adjusted_reward",
    "build_state",
    "state_features",
    "rollout",
]


@dataclass(frozen=True)
class CostModel:
    """Proportional fee on traded stock notional: fee = rate * S * |dN|."""

    rate: float = 0.01

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValueError(f"cost rate must be >= 0, got {self.rate}")

    def transaction_cost(self, spot: float, delta_n: float) -> float:
        """Fee for moving the position by delta_n shares at price spot."""
        if not (spot > 0.0):
            raise ValueError(f"spot must be positive, got {spot}")
        return self.rate * spot * abs(delta_n)


@dataclass(frozen=True)
class HedgeState:
    """MDP state: time, moneyness, held position, vol and greek features."""

    tau: float
    moneyness: float
    position: float
    sigma_impl: float
    sigma_20: float
    sigma_30: float
    gamma: float
    theta: float
    vega: float


# canonical ordering of the raw feature vector fed to policies
STATE_FIELDS = (
    "tau",
    "moneyness",
    "position",
    "sigma_impl",
    "sigma_20",
    "sigma_30",
    "gamma",
    "theta",
    "vega",
)


def state_features(state: HedgeState) -> np.ndarray:
    """Raw (unnormalized) feature vector in STATE_FIELDS order."""
    return np.array([getattr(state, name) for name in STATE_FIELDS])


@dataclass
class AccountState:
    """Cash, stock position and mark-to-market portfolio value."""

    cash: float
    position: float
    portfolio: float


@dataclass
class Transition:
    """One (s, a, r, s', done) tuple of the hedging MDP."""

    state: HedgeState
    action: float
    reward: float
    next_state: HedgeState
    done: bool


def initial_account(episode: HedgeEpisode) -> AccountState:
    """Account right after selling the option: premium in cash, no stock."""
    return AccountState(cash=episode.premium, position=0.0, portfolio=0.0)


def step(
    episode: HedgeEpisode,
    account: AccountState,
    t_index: int,
    new_position: float,
    cost: CostModel,
) -> tuple[float, AccountState, bool]:
    """Advance the account from node t_index to t_index + 1 at the target position.

    Returns (reward, next account, done).  Positions outside [0, 1] are
    clipped (with a RuntimeWarning).  On the final step the option settles
    at its terminal value and the stock position is liquidated at S_T with
    an additional fee.
    """
    n_nodes = episode.n_nodes
    if not 0 <= t_index < n_nodes - 1:
        raise IndexError(f"t_index {t_index} out of range for {n_nodes - 1} steps")
    if not math.isfinite(new_position):
        raise ValueError(f"new_position must be finite, got {new_position}")
    if new_position < 0.0 or new_position > 1.0:
        warnings.warn(
            f"position {new_position} outside [0, 1]; clipped", RuntimeWarning, stacklevel=2
        )
        new_position = min(max(new_position, 0.0), 1.0)

    s_now = float(episode.path.prices[t_index])
    s_next = float(episode.path.prices[t_index + 1])
    c_now = float(episode.option_prices[t_index])
    c_next = float(episode.option_prices[t_index + 1])
    done = t_index == n_nodes - 2

    delta_n = new_position - account.position
    fee = cost.transaction_cost(s_now, delta_n)
    cash = account.cash - s_now * delta_n - fee
    reward = c_now - c_next + new_position * (s_next - s_now) - fee
    position = new_position

    if done:
        liquidation_fee = cost.transaction_cost(s_next, position)
        cash += s_next * position - liquidation_fee
        reward -= liquidation_fee
        position = 0.0

    portfolio = cash + s_next * position - c_next
    return reward, AccountState(cash=cash, position=position, portfolio=portfolio), done


def risk_adjusted_reward(reward: float, risk_lambda: float) -> float:
    """Mean-variance shaping r - (lambda/2) r^2 with the single-sample variance proxy."""
    if risk_lambda < 0.0:
        raise ValueError(f"risk_lambda must be >= 0, got {risk_lambda}")
    if not math.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    return reward - 0.5 * risk_lambda * reward * reward


def build_state(episode: HedgeEpisode, t_index: int, position: float) -> HedgeState:
    """Assemble the state at a grid node for a given held position.

    Simulation mode takes the known generating vol for all three vol
    features and computes greeks on the fly; market-data mode reads the
    precomputed per-node features.  Expiry nodes use the degenerate
    branches (zero greeks).
    """
    if not 0 <= t_index < episode.n_nodes:
        raise IndexError(f"t_index {t_index} out of range for {episode.n_nodes} nodes")
    spot = float(episode.path.prices[t_index])
    tau = float(episode.taus[t_index])
    moneyness = spot / episode.spec.strike

    if episode.features is not None:
        f = episode.features
        return HedgeState(
            tau=tau,
            moneyness=moneyness,
            position=position,
            sigma_impl=float(f.sigma_impl[t_index]),
            sigma_20=float(f.sigma_20[t_index]),
            sigma_30=float(f.sigma_30[t_index]),
            gamma=float(f.gamma[t_index]),
            theta=float(f.theta[t_index]),
            vega=float(f.vega[t_index]),
        )

    if episode.sigma is None:
        raise ValueError("episode has neither a generating vol nor precomputed features")
    sigma = episode.sigma
    gamma, theta, vega = (
        grid_gamma_theta_vega(spot, tau, episode.spec.strike, sigma)
        if tau > 0.0
        else (0.0, 0.0, 0.0)
    )
    return HedgeState(
        tau=tau,
        moneyness=moneyness,
        position=position,
        sigma_impl=sigma,
        sigma_20=sigma,
        sigma_30=sigma,
        gamma=float(gamma),
        theta=float(theta),
        vega=float(vega),
    )


def rollout(
    episode: HedgeEpisode,
    policy: Callable[[HedgeState], float],
    cost: CostModel,
) -> tuple[list[Transition], float]:
    """Drive one episode with a policy; returns the transitions and total P&L."""
    account = initial_account(episode)
    transitions: list[Transition] = []
    total = 0.0
    state = build_state(episode, 0, account.position)
    for t in range(episode.n_steps):
        action = float(np.clip(policy(state), 0.0, 1.0))
        reward, account, done = step(episode, account, t, action, cost)
        next_state = build_state(episode, t + 1, account.position)
        transitions.append(
            Transition(state=state, action=action, reward=reward, next_state=next_state, done=done)
        )
        total += reward
        state = next_state
    return transitions, total
