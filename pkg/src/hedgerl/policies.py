"""Hedging policies: no-hedge, constant, Black-Scholes delta, trained actor.

Each policy is callable on a single HedgeState and also exposes ``act`` on
a matrix of raw feature rows (STATE_FIELDS order), which the batched
evaluator uses to run thousands of episodes at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .agent import Actor, actor_forward, encode_features
from .env import HedgeState, state_features

__all__ = ["NoHedgePolicy", "ConstantPolicy", "BsDeltaPolicy", "ActorPolicy"]


class _BatchPolicy:
    def __call__(self, state: HedgeState) -> float:
        return float(self.act(state_features(state)[None, :])[0])


@dataclass
class NoHedgePolicy(_BatchPolicy):
    """Never hold stock: the naked-seller baseline."""

    def act(self, features: np.ndarray) -> np.ndarray:
        return np.zeros(features.shape[0])


@dataclass
class ConstantPolicy(_BatchPolicy):
    """Hold a fixed position regardless of the state."""

    position: float

    def act(self, features: np.ndarray) -> np.ndarray:
        return np.full(features.shape[0], float(np.clip(self.position, 0.0, 1.0)))


@dataclass
class BsDeltaPolicy(_BatchPolicy):
    """Classical delta hedge Phi(d1) at the state's implied vol (or an override)."""

    vol: float | None = None

    def act(self, features: np.ndarray) -> np.ndarray:
        tau = features[:, 0]
        moneyness = features[:, 1]
        vol = np.full(tau.shape, self.vol) if self.vol is not None else features[:, 3]
        out = np.where(moneyness > 1.0, 1.0, 0.0)
        out = np.where(moneyness == 1.0, 0.5, out)
        live = (tau > 0.0) & (vol > 0.0)
        if np.any(live):
            sig_sqrt = vol[live] * np.sqrt(tau[live])
            d1 = (np.log(moneyness[live]) + 0.5 * vol[live] ** 2 * tau[live]) / sig_sqrt
            out[live] = ndtr(d1)
        return out


@dataclass
class ActorPolicy(_BatchPolicy):
    """Deterministic policy of a trained actor (normalizes features itself)."""

    actor: Actor

    def act(self, features: np.ndarray) -> np.ndarray:
        actions, _ = actor_forward(self.actor, encode_features(features))
        return actions

    def sigma2(self, features: np.ndarray) -> np.ndarray:
        """Aleatoric variance head exp(log-var) on raw feature rows."""
        _, log_var = actor_forward(self.actor, encode_features(features))
        return np.exp(log_var)
