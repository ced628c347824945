"""Self-financing collars on the stock portfolio.

A collar buys a one-year put (the floor) and sells a one-year call (the
cap) priced to the same premium, so the net option cost is zero.  Both
legs are priced with Black-Scholes.  Collared portfolio returns clip the
market return to [floor, cap] before mixing with Treasuries and
subtracting inflation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CollarError(ValueError):
    pass


@dataclass(frozen=True)
class CollarSpec:
    floor: float
    cap: float
    stock_weight: float
    risk_free: float
    expected_inflation: float
    volatility: float
    tenor: float = 1.0

    def __post_init__(self):
        if self.floor > self.risk_free + 1e-12:
            raise CollarError("floor cannot exceed the risk-free rate")
        if self.cap < self.floor:
            raise CollarError("cap must be at least the floor")
        if not (0 < self.stock_weight <= 1):
            raise CollarError("stock weight must lie in (0, 1]")
        if self.volatility <= 0:
            raise CollarError("volatility must be positive")


def norm_cdf(x: float) -> float:
    """Standard normal CDF via the Abramowitz-Stegun 26.2.17 rational fit.

    Five-term polynomial in 1 / (1 + 0.2316419 x) times the normal pdf;
    absolute error below 7.5e-8 everywhere.
    """
    if x < 0:
        return 1.0 - norm_cdf(-x)
    if x > 40:
        return 1.0
    k = 1.0 / (1.0 + 0.2316419 * x)
    poly = k * (
        0.319381530
        + k * (-0.356563782 + k * (1.781477937 + k * (-1.821255978 + k * 1.330274429)))
    )
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return 1.0 - pdf * poly


def black_scholes_price(
    kind: str, spot: float, strike: float, r_f: float, sigma: float, tenor: float = 1.0
) -> float:
    """Black-Scholes value of a European put or call."""
    if kind not in ("put", "call"):
        raise CollarError("kind must be 'put' or 'call'")
    if spot <= 0 or strike <= 0 or sigma <= 0 or tenor <= 0:
        raise CollarError("spot, strike, sigma, and tenor must be positive")
    sig_rt = sigma * math.sqrt(tenor)
    d1 = (math.log(spot / strike) + (r_f + 0.5 * sigma * sigma) * tenor) / sig_rt
    d2 = d1 - sig_rt
    disc = math.exp(-r_f * tenor)
    if kind == "call":
        return spot * norm_cdf(d1) - strike * disc * norm_cdf(d2)
    return strike * disc * norm_cdf(-d2) - spot * norm_cdf(-d1)


def collar_floor(r_min: float, stock_weight: float, r_f: float, expected_inflation: float) -> float:
    """Floor that guarantees a real portfolio return of at least ``r_min``.

    Capped at the risk-free rate, above which a self-financing collar
    cannot exist.
    """
    if stock_weight <= 0:
        raise CollarError("stock weight must be positive")
    needed = (r_min - (1 - stock_weight) * r_f + expected_inflation) / stock_weight
    return min(needed, r_f)


def solve_cap(
    floor: float,
    spot: float = 1.0,
    r_f: float = 0.04,
    sigma: float = 0.20,
    tenor: float = 1.0,
    price_tol: float = 1e-8,
) -> float:
    """Cap whose call premium equals the floor's put premium.

    The put struck at spot*(1+floor) is priced, then the call strike is
    bisected (call value is strictly decreasing in strike) until the leg
    prices match to ``price_tol``.  A worthless put buys no cap: returns
    +inf, meaning no call is sold.
    """
    if floor > r_f + 1e-12:
        raise CollarError("floor must not exceed the risk-free rate")
    put_strike = spot * (1.0 + floor)
    put_price = black_scholes_price("put", spot, put_strike, r_f, sigma, tenor)
    if put_price <= price_tol:
        return math.inf
    lo = put_strike
    hi = spot * math.exp((r_f + 10 * sigma) * tenor)
    while black_scholes_price("call", spot, hi, r_f, sigma, tenor) > put_price:
        hi *= 2.0
        if hi > spot * 1e9:
            return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        diff = black_scholes_price("call", spot, mid, r_f, sigma, tenor) - put_price
        if abs(diff) <= price_tol:
            return mid / spot - 1.0
        if diff > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) / spot - 1.0


def collared_return(market_r, floor: float, cap: float, stock_weight: float, treasury_r, inflation):
    """Real return of a stock/Treasury mix with the stock leg clipped to [floor, cap]."""
    if floor > cap:
        raise CollarError("floor must not exceed cap")
    clipped = np.clip(np.asarray(market_r, dtype=float), floor, cap)
    out = stock_weight * clipped + (1 - stock_weight) * np.asarray(treasury_r) - np.asarray(inflation)
    return float(out) if out.ndim == 0 else out
