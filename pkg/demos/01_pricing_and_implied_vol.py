"""Black-Scholes analytics: price/delta curves, greeks, implied-vol round trip.

Reproduces the textbook pictures for the one-month at-the-money call that
the hedging experiments revolve around: the hockey-stick price curve near
expiry vs the smooth curve with time value, and the delta S-curve.
"""
import numpy as np

from hedgerl.analytics import (
    OptionSpec,
    bs_call_price,
    bs_delta,
    bs_greeks,
    implied_vol,
)

ONE_MONTH = OptionSpec(strike=100.0, time_to_maturity=30.0 / 365.0)
NEAR_EXPIRY = OptionSpec(strike=100.0, time_to_maturity=1.0 / 365.0)

print("=== one-month ATM call, sigma = 20%, r = 0 ===")
premium = bs_call_price(100.0, ONE_MONTH, 0.20)
print(f"premium C0             = {premium:.4f}   (the paper-scale ~2.28 contract)")
print(f"delta                  = {bs_delta(100.0, ONE_MONTH, 0.20):.5f}")
greeks = bs_greeks(100.0, ONE_MONTH, 0.20)
print(f"gamma / theta / vega   = {greeks.gamma:.4f} / {greeks.theta:.2f} / {greeks.vega:.2f}")

print("\n=== price vs spot: time value melts as expiry approaches ===")
print(f"{'spot':>6} {'C (30d)':>9} {'C (1d)':>9} {'intrinsic':>10}")
for spot in (85.0, 95.0, 100.0, 105.0, 115.0):
    c_far = bs_call_price(spot, ONE_MONTH, 0.20)
    c_near = bs_call_price(spot, NEAR_EXPIRY, 0.20)
    print(f"{spot:6.0f} {c_far:9.4f} {c_near:9.4f} {max(spot - 100.0, 0.0):10.2f}")

print("\n=== delta vs moneyness: 0 -> 1 S-curve, a step function at expiry ===")
print(f"{'moneyness':>10} {'delta (30d)':>12} {'delta (1d)':>11}")
for m in np.linspace(0.9, 1.1, 9):
    spot = 100.0 * m
    print(
        f"{m:10.3f} {bs_delta(spot, ONE_MONTH, 0.20):12.4f} "
        f"{bs_delta(spot, NEAR_EXPIRY, 0.20):11.4f}"
    )

print("\n=== implied vol: invert the price back to the quoted vol ===")
for sigma in (0.1, 0.2, 0.5):
    price = bs_call_price(100.0, ONE_MONTH, sigma)
    recovered = implied_vol(price, 100.0, ONE_MONTH)
    print(f"sigma {sigma:.2f} -> price {price:.4f} -> implied {recovered:.8f}")
