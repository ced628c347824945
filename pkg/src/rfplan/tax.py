"""Income tax, capital gains tax, RMD fractions, and deposit limits.

The income tax function is an increasing convex piecewise linear function
of taxable income, zero for nonpositive income.  The planner uses a fixed
long-term capital gains rate; the simulator taxes realized gains exactly,
stacking them on top of ordinary income through progressive brackets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

# 2024 federal brackets for single filers.  Bracket edges are the kink
# points of the tax function; marginal rates apply between them.
DEFAULT_BRACKET_EDGES = (11_600.0, 47_150.0, 100_525.0, 191_950.0, 243_725.0, 609_350.0)
DEFAULT_MARGINAL_RATES = (0.10, 0.12, 0.22, 0.24, 0.32, 0.35, 0.37)

# 2024 long-term capital gains brackets for single filers: gains stacked
# on ordinary income are taxed at 0% / 15% / 20% as the total crosses
# these thresholds.  Config data, not law baked into the code.
DEFAULT_LTCG_BRACKETS = ((47_025.0, 0.0), (518_900.0, 0.15), (math.inf, 0.20))


class TaxError(ValueError):
    pass


@dataclass(frozen=True)
class TaxSchedule:
    """Piecewise linear income tax plus capital gains treatment.

    ``bracket_edges`` are strictly increasing positive kink points and
    ``marginal_rates`` the slopes in the ``len(edges) + 1`` intervals,
    strictly increasing in [0, 1).  ``ltcg_fixed_rate`` is the flat rate
    the planner assumes; ``ltcg_brackets`` is a list of
    ``(upper_threshold, rate)`` pairs (last threshold inf) used for the
    exact progressive computation in simulation.
    """

    bracket_edges: tuple[float, ...] = DEFAULT_BRACKET_EDGES
    marginal_rates: tuple[float, ...] = DEFAULT_MARGINAL_RATES
    ltcg_fixed_rate: float = 0.15
    ltcg_brackets: tuple[tuple[float, float], ...] = DEFAULT_LTCG_BRACKETS

    def __post_init__(self):
        edges = self.bracket_edges
        rates = self.marginal_rates
        if len(rates) != len(edges) + 1:
            raise TaxError("need len(edges) + 1 marginal rates")
        if any(e <= 0 for e in edges) or any(b >= a for a, b in zip(edges[1:], edges)):
            raise TaxError("bracket edges must be positive and strictly increasing")
        if any(not (0 <= r < 1) for r in rates):
            raise TaxError("marginal rates must lie in [0, 1)")
        if any(b >= a for a, b in zip(rates[1:], rates)):
            raise TaxError("marginal rates must be strictly increasing")
        if not (0 <= self.ltcg_fixed_rate < 1):
            raise TaxError("ltcg_fixed_rate must lie in [0, 1)")
        if not self.ltcg_brackets or self.ltcg_brackets[-1][0] != math.inf:
            raise TaxError("ltcg_brackets must end with an infinite threshold")
        thresholds = [t for t, _ in self.ltcg_brackets]
        if any(b >= a for a, b in zip(thresholds[1:], thresholds)):
            raise TaxError("ltcg thresholds must be strictly increasing")

    def capital_gains_coefficient(self, basis_ratio: float) -> float:
        """Planner coefficient on positive brokerage sales.

        Equals the fixed rate times the positive part of one minus the
        basis-to-value ratio; a basis above value yields zero (losses give
        no tax benefit).
        """
        return self.ltcg_fixed_rate * max(1.0 - basis_ratio, 0.0)


def income_tax(omega: float, schedule: TaxSchedule) -> float:
    """Tax on ordinary taxable income ``omega``; zero for omega <= 0."""
    if omega <= 0:
        return 0.0
    tax = 0.0
    lo = 0.0
    for edge, rate in zip(schedule.bracket_edges, schedule.marginal_rates):
        if omega <= edge:
            return tax + rate * (omega - lo)
        tax += rate * (edge - lo)
        lo = edge
    return tax + schedule.marginal_rates[-1] * (omega - lo)


def income_tax_epigraph(schedule: TaxSchedule) -> list[tuple[float, float]]:
    """Affine pieces ``(slope, intercept)`` whose pointwise max equals the tax.

    Returns ``K + 2`` pieces for ``K`` bracket edges, including the zero
    piece that makes the function vanish for nonpositive income.
    Intercepts are chosen so consecutive pieces agree at the kinks.
    """
    pieces = [(0.0, 0.0)]
    lo = 0.0
    tax_at_lo = 0.0
    for i, rate in enumerate(schedule.marginal_rates):
        pieces.append((rate, tax_at_lo - rate * lo))
        if i < len(schedule.bracket_edges):
            edge = schedule.bracket_edges[i]
            tax_at_lo += rate * (edge - lo)
            lo = edge
    return pieces


def exact_capital_gains_tax(
    realized_gain: float, ordinary_taxable_income: float, schedule: TaxSchedule
) -> float:
    """Progressive tax on a realized long-term gain stacked on ordinary income.

    Nonpositive gains are untaxed and give no benefit.  The gain fills the
    ltcg brackets starting at the retiree's ordinary taxable income
    (floored at zero), so a large gain can straddle several rates.
    """
    if realized_gain <= 0:
        return 0.0
    start = max(ordinary_taxable_income, 0.0)
    end = start + realized_gain
    tax = 0.0
    lo = 0.0
    for threshold, rate in schedule.ltcg_brackets:
        overlap = min(end, threshold) - max(start, lo)
        if overlap > 0:
            tax += rate * overlap
        lo = threshold
        if lo >= end:
            break
    return tax


@dataclass(frozen=True)
class RMDSchedule:
    """Required-minimum-distribution fractions from the IRS divisor table."""

    start_age: int = 73
    divisor_by_age: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if any(d <= 0 for d in self.divisor_by_age.values()):
            raise TaxError("RMD divisors must be positive")


def rmd_fraction(age: int, schedule: RMDSchedule) -> float:
    """Mandatory IRA withdrawal fraction: 0 before the start age, else 1/divisor."""
    if age < 0:
        raise TaxError("age must be nonnegative")
    if age < schedule.start_age:
        return 0.0
    divisor = schedule.divisor_by_age.get(age)
    if divisor is None:
        raise TaxError(f"RMD table has no divisor for age {age}")
    return 1.0 / divisor


@dataclass(frozen=True)
class DepositLimits:
    """Combined annual IRA + Roth contribution cap."""

    d_max: float = 8_000.0

    def __post_init__(self):
        if self.d_max < 0:
            raise TaxError("deposit limit must be nonnegative")


def load_tax_schedule(path) -> TaxSchedule:
    """Load a tax schedule from a YAML file.

    Expected keys: ``bracket_edges``, ``marginal_rates``, ``ltcg_fixed_rate``,
    and ``ltcg_brackets`` as a list of ``[threshold, rate]`` rows where the
    last threshold may be the string ``inf``.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    try:
        ltcg = tuple(
            (math.inf if t in ("inf", ".inf") else float(t), float(r))
            for t, r in raw.get("ltcg_brackets", [["inf", 0.15]])
        )
        return TaxSchedule(
            bracket_edges=tuple(float(v) for v in raw["bracket_edges"]),
            marginal_rates=tuple(float(v) for v in raw["marginal_rates"]),
            ltcg_fixed_rate=float(raw.get("ltcg_fixed_rate", 0.15)),
            ltcg_brackets=ltcg,
        )
    except (KeyError, TypeError) as exc:
        raise TaxError(f"malformed tax schedule file {path}: {exc}") from exc


def load_rmd_schedule(path=None, start_age: int = 73) -> RMDSchedule:
    """Load the RMD divisor table: two whitespace-separated columns (age, divisor).

    Defaults to the bundled IRS uniform-lifetime distribution periods.
    Ages must be contiguous from ``start_age`` through 120.
    """
    if path is None:
        path = resources.files("rfplan.data") / "rmd_uniform_lifetime.txt"
    divisors: dict[int, float] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            age_s, div_s = line.split()
            divisors[int(age_s)] = float(div_s)
    expected = set(range(start_age, 121))
    if not expected.issubset(divisors):
        missing = sorted(expected - set(divisors))
        raise TaxError(f"RMD table incomplete, missing ages {missing[:5]}...")
    return RMDSchedule(start_age=start_age, divisor_by_age=divisors)


def taxable_income(ic: float, idep: float, iw: float, earned: float, additional: float) -> float:
    """Ordinary taxable income: net taxed IRA flows plus earned and additional income."""
    return ic - idep + iw + earned + additional


def income_tax_vector(omegas: np.ndarray, schedule: TaxSchedule) -> np.ndarray:
    """Vectorized income tax, used by verification code on whole trajectories."""
    pieces = income_tax_epigraph(schedule)
    slopes = np.array([m for m, _ in pieces])
    intercepts = np.array([b for _, b in pieces])
    vals = np.asarray(omegas)[..., None] * slopes + intercepts
    return vals.max(axis=-1)
