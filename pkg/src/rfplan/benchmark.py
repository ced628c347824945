"""Fixed inflation-adjusted withdrawal benchmark.

The retiree fixes a post-tax spending target at a percentage of initial
wealth plus projected additional income through a projection age, then
each year withdraws whatever pre-tax amount delivers it: the IRA RMD
comes first, the rest is split across accounts in proportion to their
balances.  Surplus income is parked in the brokerage account.  No Roth
conversions are ever made.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .mpc import RetireeState, YearlyAction
from .tax import (
    RMDSchedule,
    TaxSchedule,
    exact_capital_gains_tax,
    income_tax,
    rmd_fraction,
)

BISECTION_TOLERANCE = 1.0  # dollars of post-tax cash
MAX_BISECTIONS = 60


@dataclass(frozen=True)
class BenchmarkConfig:
    withdrawal_rate: float = 0.0375
    projection_age: int = 85
    target_post_tax: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.withdrawal_rate < 1.0):
            raise ValueError("withdrawal rate must lie in [0, 1)")


def benchmark_target(
    balances_total: float,
    additional_by_age: Callable[[int], float],
    start_age: int,
    config: BenchmarkConfig,
) -> float:
    """Post-tax annual spending target.

    The rate times initial wealth plus all additional income projected
    for ages start through the projection age inclusive.
    """
    projected = sum(
        additional_by_age(age) for age in range(start_age, config.projection_age + 1)
    )
    return config.withdrawal_rate * (balances_total + projected)


def _allocate(w: float, brokerage: float, ira: float, roth: float, rmd_amt: float):
    """Split a total withdrawal: RMD first, then proportional to balances."""
    total = brokerage + ira + roth
    if total <= 0:
        return 0.0, 0.0, 0.0
    iw = max(rmd_amt, ira / total * w)
    iw = min(iw, ira)
    rem = max(w - iw, 0.0)
    other = brokerage + roth
    b = min(rem * (brokerage / other), brokerage) if other > 0 else 0.0
    rw = min(rem * (roth / other), roth) if other > 0 else 0.0
    leftover = rem - b - rw
    if leftover > 1e-9:
        add = min(leftover, brokerage - b)
        b += add
        leftover -= add
        add = min(leftover, roth - rw)
        rw += add
        leftover -= add
        iw = min(iw + leftover, ira)
    return b, iw, rw


def _post_tax_cash(
    b: float, iw: float, rw: float, earned: float, additional: float,
    basis_ratio: float, schedule: TaxSchedule,
) -> tuple[float, float]:
    omega = iw + earned + additional
    gain = max(b, 0.0) * (1.0 - basis_ratio)
    tax = income_tax(omega, schedule) + exact_capital_gains_tax(gain, omega, schedule)
    return b + iw + rw + earned + additional - tax, tax


def benchmark_step(
    state: RetireeState,
    config: BenchmarkConfig,
    tax_schedule: TaxSchedule,
    rmd_schedule: RMDSchedule,
    additional: float = 0.0,
    earned: float = 0.0,
    liability: float = 0.0,
) -> YearlyAction:
    """One benchmark year: withdraw to hit the post-tax target.

    Post-tax cash is monotone in the pre-tax withdrawal, so the amount is
    found by bisection to within a dollar.  Income beyond the target is
    deposited in the brokerage account; if even full depletion cannot
    reach the target the retiree consumes whatever remains.
    """
    if not state.alive:
        raise ValueError("cannot act on a dead retiree's state")
    brokerage, ira, roth = max(state.brokerage, 0.0), max(state.ira, 0.0), max(state.roth, 0.0)
    delta = state.basis.ratio
    kappa = rmd_fraction(state.age, rmd_schedule)
    rmd_amt = min(kappa * ira, ira)
    needed = config.target_post_tax + liability

    def action(b, iw, rw, consumption, tax):
        return YearlyAction(
            brokerage=b, ira_conversion=0.0, ira_deposit=0.0, ira_withdrawal=iw,
            roth_conversion=0.0, roth_deposit=0.0, roth_withdrawal=rw,
            consumption=consumption, planned_tax=tax,
        )

    cash_min, tax_min = _post_tax_cash(
        0.0, rmd_amt, 0.0, earned, additional, delta, tax_schedule
    )
    if cash_min >= needed:
        surplus = cash_min - needed
        return action(-surplus, rmd_amt, 0.0, config.target_post_tax, tax_min)

    w_hi = brokerage + ira + roth
    b, iw, rw = _allocate(w_hi, brokerage, ira, roth, rmd_amt)
    cash_max, tax_max = _post_tax_cash(b, iw, rw, earned, additional, delta, tax_schedule)
    if cash_max < needed:
        consumption = min(max(cash_max - liability, 0.0), config.target_post_tax)
        return action(b, iw, rw, consumption, tax_max)

    lo, hi = rmd_amt, w_hi
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        b, iw, rw = _allocate(mid, brokerage, ira, roth, rmd_amt)
        cash, tax = _post_tax_cash(b, iw, rw, earned, additional, delta, tax_schedule)
        if abs(cash - needed) <= BISECTION_TOLERANCE:
            break
        if cash < needed:
            lo = mid
        else:
            hi = mid
    return action(b, iw, rw, config.target_post_tax, tax)
