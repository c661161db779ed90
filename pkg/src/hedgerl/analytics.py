"""Black-Scholes call pricing, greeks and implied volatility.

Closed forms for a European call with continuously compounded rate r
(default 0, matching the hedging environment).  Scalar functions validate
their inputs strictly; the ``grid_*`` variants are vectorized and lenient
at expiry / zero vol so they can price whole paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

IV_LOWER = 1e-4
IV_UPPER = 5.0

__all__ = [
    "OptionSpec",
    "Greeks",
    "NoArbitrageBoundsError",
    "IVConvergenceError",
    "std_normal_cdf",
    "std_normal_pdf",
    "bs_call_price",
    "bs_delta",
    "bs_greeks",
    "implied_vol",
    "grid_call_price",
    "grid_delta",
    "grid_gamma_theta_vega",
]


class NoArbitrageBoundsError(ValueError):
    """Quoted price violates the intrinsic-value/spot no-arbitrage bounds."""


class IVConvergenceError(RuntimeError):
    """Implied-volatility search did not reach tolerance within max iterations."""


@dataclass(frozen=True)
class OptionSpec:
    """Contract terms of a European call.

    strike and time_to_maturity in price / year units; rate is per-year
    continuous compounding.  Only calls are supported.
    """

    strike: float
    time_to_maturity: float
    rate: float = 0.0
    is_call: bool = True

    def __post_init__(self) -> None:
        if not (self.strike > 0.0) or not math.isfinite(self.strike):
            raise ValueError(f"strike must be positive, got {self.strike}")
        if self.time_to_maturity < 0.0 or not math.isfinite(self.time_to_maturity):
            raise ValueError(
                f"time_to_maturity must be >= 0, got {self.time_to_maturity}"
            )
        if not self.is_call:
            raise ValueError("only call options are supported")


@dataclass(frozen=True)
class Greeks:
    """First/second order call sensitivities (delta, gamma per price, theta per year, vega per vol)."""

    delta: float
    gamma: float
    theta: float
    vega: float


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via the erfc identity (abs error well below 1e-9)."""
    if not math.isfinite(x):
        raise ValueError(f"std_normal_cdf requires finite input, got {x}")
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def std_normal_pdf(x: float) -> float:
    """Standard normal density."""
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _validate_priceable(spot: float, vol: float) -> None:
    if not (spot > 0.0) or not math.isfinite(spot):
        raise ValueError(f"spot must be positive, got {spot}")
    if vol < 0.0 or not math.isfinite(vol):
        raise ValueError(f"vol must be >= 0, got {vol}")


def _d1_d2(spot: float, strike: float, tau: float, vol: float, rate: float) -> tuple[float, float]:
    sig_sqrt = vol * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (rate + 0.5 * vol * vol) * tau) / sig_sqrt
    return d1, d1 - sig_sqrt


def intrinsic_value(spot: float, spec: OptionSpec) -> float:
    """Discounted intrinsic value max(S - K e^{-r tau}, 0)."""
    return max(spot - spec.strike * math.exp(-spec.rate * spec.time_to_maturity), 0.0)


def bs_call_price(spot: float, spec: OptionSpec, vol: float) -> float:
    """Black-Scholes call price; returns intrinsic value when tau or vol is 0."""
    _validate_priceable(spot, vol)
    tau = spec.time_to_maturity
    if tau == 0.0 or vol == 0.0:
        return intrinsic_value(spot, spec)
    d1, d2 = _d1_d2(spot, spec.strike, tau, vol, spec.rate)
    disc = math.exp(-spec.rate * tau)
    return spot * std_normal_cdf(d1) - spec.strike * disc * std_normal_cdf(d2)


def bs_delta(spot: float, spec: OptionSpec, vol: float) -> float:
    """Call delta Phi(d1); at expiry the exercise indicator (0.5 exactly at the strike)."""
    _validate_priceable(spot, vol)
    tau = spec.time_to_maturity
    if tau == 0.0 or vol == 0.0:
        if spot > spec.strike:
            return 1.0
        return 0.5 if spot == spec.strike else 0.0
    d1, _ = _d1_d2(spot, spec.strike, tau, vol, spec.rate)
    return std_normal_cdf(d1)


def bs_greeks(spot: float, spec: OptionSpec, vol: float) -> Greeks:
    """Delta, gamma, theta and vega of a live call.

    Requires tau > 0 and vol > 0; callers must special-case expiry via the
    intrinsic-value branches of the pricing functions.
    """
    _validate_priceable(spot, vol)
    tau = spec.time_to_maturity
    if tau <= 0.0 or vol <= 0.0:
        raise ValueError("bs_greeks requires time_to_maturity > 0 and vol > 0")
    d1, d2 = _d1_d2(spot, spec.strike, tau, vol, spec.rate)
    pdf_d1 = std_normal_pdf(d1)
    sqrt_tau = math.sqrt(tau)
    disc = math.exp(-spec.rate * tau)
    gamma = pdf_d1 / (spot * vol * sqrt_tau)
    theta = -spot * pdf_d1 * vol / (2.0 * sqrt_tau) - spec.rate * spec.strike * disc * std_normal_cdf(d2)
    vega = spot * pdf_d1 * sqrt_tau
    return Greeks(delta=bs_delta(spot, spec, vol), gamma=gamma, theta=theta, vega=vega)


def implied_vol(
    market_price: float,
    spot: float,
    spec: OptionSpec,
    price_tol: float = 1e-8,
    max_iter: int = 100,
) -> float:
    """Invert bs_call_price for volatility with a safeguarded Newton iteration.

    Newton steps use vega and fall back to bisection whenever the step
    leaves the current bracket inside [IV_LOWER, IV_UPPER].  Raises
    NoArbitrageBoundsError for quotes at or outside (intrinsic, spot) and
    IVConvergenceError if ``max_iter`` iterations do not reach ``price_tol``.
    """
    _validate_priceable(spot, 0.0)
    if spec.time_to_maturity <= 0.0:
        raise ValueError("implied_vol requires time_to_maturity > 0")
    if not math.isfinite(market_price):
        raise ValueError(f"market_price must be finite, got {market_price}")
    lo_price = intrinsic_value(spot, spec)
    if not (lo_price < market_price < spot):
        raise NoArbitrageBoundsError(
            f"price {market_price} outside no-arbitrage bounds ({lo_price}, {spot})"
        )

    lo, hi = IV_LOWER, IV_UPPER
    f_lo = bs_call_price(spot, spec, lo) - market_price
    if f_lo > 0.0:
        # quote below the vol floor's price: report the floor if within tolerance
        if abs(f_lo) <= price_tol:
            return lo
        raise NoArbitrageBoundsError(
            f"price {market_price} below the price at the vol floor {IV_LOWER}"
        )
    f_hi = bs_call_price(spot, spec, hi) - market_price
    if f_hi < 0.0:
        if abs(f_hi) <= price_tol:
            return hi
        raise NoArbitrageBoundsError(
            f"price {market_price} above the price at the vol cap {IV_UPPER}"
        )

    sigma = min(max(math.sqrt(2.0 * math.pi / spec.time_to_maturity) * market_price / spot, lo), hi)
    for _ in range(max_iter):
        f = bs_call_price(spot, spec, sigma) - market_price
        if abs(f) <= price_tol:
            return sigma
        if f > 0.0:
            hi = sigma
        else:
            lo = sigma
        vega = bs_greeks(spot, spec, sigma).vega
        if vega > 1e-12:
            candidate = sigma - f / vega
        else:
            candidate = math.nan
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        sigma = candidate
    raise IVConvergenceError(
        f"implied vol did not converge to {price_tol} within {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# Vectorized variants for path/grid pricing.  Lenient at expiry: tau == 0 or
# vol == 0 falls back to intrinsic value (price), the exercise indicator
# (delta) and zero (gamma/theta/vega).
# ---------------------------------------------------------------------------

def grid_call_price(
    spot: np.ndarray, tau: np.ndarray, strike: float, vol: float, rate: float = 0.0
) -> np.ndarray:
    """Vectorized call price over broadcastable spot/tau arrays."""
    spot = np.asarray(spot, dtype=float)
    tau = np.asarray(tau, dtype=float)
    spot_b, tau_b = np.broadcast_arrays(spot, tau)
    disc = np.exp(-rate * np.maximum(tau_b, 0.0))
    out = np.maximum(spot_b - strike * disc, 0.0)
    live = (tau_b > 0.0) & (vol > 0.0)
    if np.any(live):
        s = spot_b[live]
        t = tau_b[live]
        sig_sqrt = vol * np.sqrt(t)
        d1 = (np.log(s / strike) + (rate + 0.5 * vol * vol) * t) / sig_sqrt
        d2 = d1 - sig_sqrt
        out = out.copy()
        out[live] = s * ndtr(d1) - strike * np.exp(-rate * t) * ndtr(d2)
    return out


def grid_delta(
    spot: np.ndarray, tau: np.ndarray, strike: float, vol: float, rate: float = 0.0
) -> np.ndarray:
    """Vectorized call delta; expiry nodes get the exercise indicator."""
    spot = np.asarray(spot, dtype=float)
    tau = np.asarray(tau, dtype=float)
    spot_b, tau_b = np.broadcast_arrays(spot, tau)
    out = np.where(spot_b > strike, 1.0, 0.0)
    out = np.where(spot_b == strike, 0.5, out)
    live = (tau_b > 0.0) & (vol > 0.0)
    if np.any(live):
        t = tau_b[live]
        sig_sqrt = vol * np.sqrt(t)
        d1 = (np.log(spot_b[live] / strike) + (rate + 0.5 * vol * vol) * t) / sig_sqrt
        out[live] = ndtr(d1)
    return out


def grid_gamma_theta_vega(
    spot: np.ndarray, tau: np.ndarray, strike: float, vol: float | np.ndarray, rate: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (gamma, theta, vega); zero at expiry or zero vol."""
    spot = np.asarray(spot, dtype=float)
    tau = np.asarray(tau, dtype=float)
    vol = np.asarray(vol, dtype=float)
    spot_b, tau_b, vol_b = np.broadcast_arrays(spot, tau, vol)
    gamma = np.zeros(spot_b.shape)
    theta = np.zeros(spot_b.shape)
    vega = np.zeros(spot_b.shape)
    live = (tau_b > 0.0) & (vol_b > 0.0)
    if np.any(live):
        s = spot_b[live]
        t = tau_b[live]
        v = vol_b[live]
        sqrt_t = np.sqrt(t)
        sig_sqrt = v * sqrt_t
        d1 = (np.log(s / strike) + (rate + 0.5 * v * v) * t) / sig_sqrt
        d2 = d1 - sig_sqrt
        pdf_d1 = np.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)
        gamma[live] = pdf_d1 / (s * v * sqrt_t)
        theta[live] = -s * pdf_d1 * v / (2.0 * sqrt_t) - rate * strike * np.exp(-rate * t) * ndtr(d2)
        vega[live] = s * pdf_d1 * sqrt_t
    return gamma, theta, vega
