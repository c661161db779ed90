"""Seeded geometric-Brownian-motion paths and full hedging episodes.

Paths use the exact lognormal update S_{t+dt} = S_t exp((mu - sigma^2/2) dt
+ sigma sqrt(dt) Z) so hedging-error statistics carry no discretization
bias.  Normal variates come from the inverse CDF of the PCG64 stream, which
keeps paths bit-reproducible for a given seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .analytics import OptionSpec, grid_call_price

DAYS_PER_YEAR = 365.0

__all__ = [
    "DAYS_PER_YEAR",
    "GbmParams",
    "PricePath",
    "EpisodeFeatures",
    "HedgeEpisode",
    "episode_seed",
    "simulate_gbm",
    "generate_episode",
    "generate_episodes",
]


@dataclass(frozen=True)
class GbmParams:
    """Annualized drift/vol and the initial price of the underlying."""

    drift: float
    vol: float
    initial_price: float

    def __post_init__(self) -> None:
        if self.vol < 0.0:
            raise ValueError(f"vol must be >= 0, got {self.vol}")
        if not (self.initial_price > 0.0):
            raise ValueError(f"initial_price must be positive, got {self.initial_price}")


@dataclass
class PricePath:
    """A stock price series on a time grid (years).

    Simulated paths have uniform spacing; paths rebuilt from market data
    carry calendar-day gaps.
    """

    times: np.ndarray
    prices: np.ndarray
    seed: int


@dataclass
class EpisodeFeatures:
    """Per-node state features precomputed for market-data episodes."""

    sigma_impl: np.ndarray
    sigma_20: np.ndarray
    sigma_30: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    vega: np.ndarray


@dataclass
class HedgeEpisode:
    """Stock path plus the option-price series the hedger is short.

    In simulation mode ``option_prices`` are Black-Scholes values at the
    generating vol ``sigma``; in market-data mode they are quote mids and
    ``features`` carries the ingested state variables.
    """

    path: PricePath
    spec: OptionSpec
    option_prices: np.ndarray
    steps_per_day: int
    premium: float
    taus: np.ndarray
    sigma: float | None = None
    features: EpisodeFeatures | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.path.prices)

    @property
    def n_steps(self) -> int:
        return len(self.path.prices) - 1


def episode_seed(master_seed: int, index: int) -> int:
    """Derive a per-episode 64-bit seed from a master seed via a counter split."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _standard_normals(rng: np.random.Generator, n: int) -> np.ndarray:
    # inverse-CDF transform of open-interval uniforms: deterministic given the
    # RNG stream and immune to the 0 endpoint of random()
    u = (rng.integers(0, 2**53, size=n).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def simulate_gbm(params: GbmParams, horizon: float, dt: float, seed: int) -> PricePath:
    """Simulate one GBM path on a uniform grid of step dt over [0, horizon]."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if dt > horizon:
        raise ValueError(f"dt {dt} exceeds horizon {horizon}")
    n = int(round(horizon / dt))
    rng = np.random.default_rng(int(seed))
    z = _standard_normals(rng, n)
    log_increments = (params.drift - 0.5 * params.vol**2) * dt + params.vol * math.sqrt(dt) * z
    prices = np.empty(n + 1)
    prices[0] = params.initial_price
    prices[1:] = params.initial_price * np.exp(np.cumsum(log_increments))
    times = np.arange(n + 1) * dt
    return PricePath(times=times, prices=prices, seed=int(seed))


def generate_episode(
    params: GbmParams,
    maturity_days: int,
    steps_per_day: int,
    seed: int,
    days_per_year: float = DAYS_PER_YEAR,
) -> HedgeEpisode:
    """Simulate a path and price an at-the-money call (K = S0) along it."""
    if not 1 <= maturity_days <= 365:
        raise ValueError(f"maturity_days must be in [1, 365], got {maturity_days}")
    if steps_per_day < 1:
        raise ValueError(f"steps_per_day must be >= 1, got {steps_per_day}")
    horizon = maturity_days / days_per_year
    n = maturity_days * steps_per_day
    dt = horizon / n
    path = simulate_gbm(params, horizon, dt, seed)
    taus = horizon - path.times
    taus[-1] = 0.0
    spec = OptionSpec(strike=params.initial_price, time_to_maturity=horizon)
    option_prices = grid_call_price(path.prices, taus, spec.strike, params.vol)
    return HedgeEpisode(
        path=path,
        spec=spec,
        option_prices=option_prices,
        steps_per_day=steps_per_day,
        premium=float(option_prices[0]),
        taus=taus,
        sigma=params.vol,
    )


def generate_episodes(
    params: GbmParams,
    maturity_days: int,
    steps_per_day: int,
    n_episodes: int,
    master_seed: int,
    days_per_year: float = DAYS_PER_YEAR,
) -> list[HedgeEpisode]:
    """Generate independent episodes with per-episode seeds split off master_seed."""
    return [
        generate_episode(
            params, maturity_days, steps_per_day, episode_seed(master_seed, i), days_per_year
        )
        for i in range(n_episodes)
    ]
