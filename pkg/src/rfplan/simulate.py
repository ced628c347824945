"""Monte Carlo evaluation of retirement policies.

Scenarios bundle a sampled death age with market, Treasury, and
inflation paths and the derived per-account real returns (optionally
collared).  The MPC and benchmark policies are run on identical
scenarios, so their relative consumption and bequest are paired
comparisons.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import collar as collar_mod
from . import markets
from .benchmark import BenchmarkConfig, benchmark_step
from .lifetable import sample_death_year
from .mpc import (
    PolicyConfig,
    RealizedYear,
    RetireeState,
    YearlyAction,
    bequest_at_death,
    mpc_step,
    settle_year,
)
from .profiles import ModelSet, RetireeProfile, make_policy_config


@dataclass
class BasisTracker:
    """Average-cost brokerage basis in nominal dollars.

    Policy amounts are real; the tracker converts them with a cumulative
    price index.  Sales remove basis proportionally (average cost),
    deposits add basis at cost, and growth scales the nominal value by
    the real return times realized inflation.
    """

    nominal_basis: float
    nominal_value: float
    inflation_index: float = 1.0

    @property
    def ratio(self) -> float:
        """Basis-to-value ratio; 1 by convention for an empty account."""
        if self.nominal_value <= 1e-12:
            return 1.0
        return self.nominal_basis / self.nominal_value

    def sell(self, real_amount: float) -> None:
        nominal = real_amount * self.inflation_index
        if self.nominal_value <= 1e-12:
            return
        fraction = min(nominal / self.nominal_value, 1.0)
        self.nominal_basis *= 1.0 - fraction
        self.nominal_value = max(self.nominal_value - nominal, 0.0)
        if self.nominal_value == 0.0:
            self.nominal_basis = 0.0

    def deposit(self, real_amount: float) -> None:
        nominal = real_amount * self.inflation_index
        self.nominal_basis += nominal
        self.nominal_value += nominal

    def grow(self, real_gross_return: float, inflation: float) -> None:
        self.nominal_value *= real_gross_return * (1.0 + inflation)
        self.inflation_index *= 1.0 + inflation


@dataclass
class Scenario:
    """One sampled future shared by both policies."""

    index: int
    start_age: int
    death_age: int
    market: np.ndarray
    treasury: np.ndarray
    inflation: np.ndarray
    return_brokerage: np.ndarray  # gross real, collared when enabled
    return_retirement: np.ndarray
    initial_rates: tuple[float, float]
    collar_floor: float | None = None
    collar_caps: np.ndarray | None = None

    @property
    def years(self) -> int:
        return self.death_age - self.start_age + 1


@dataclass
class SimulationReport:
    scenario_id: int
    death_age: int
    records: list[dict]
    bequest: float
    total_consumption: float
    depleted: bool
    shortfall_years: int
    final_liability: float


def generate_scenarios(
    n: int,
    profile: RetireeProfile,
    models: ModelSet,
    base_seed: int = 2024,
    collar_enabled: bool = False,
    collar_floor: float = -0.075,
    collar_sigma: float | None = None,
    initial_rates: tuple[float, float] | None = None,
) -> list[Scenario]:
    """Sample ``n`` reproducible scenarios.

    Scenario k draws from ``default_rng([base_seed, k])`` in a fixed
    order (death, initial rates, VAR noise, market returns), so runs are
    bitwise reproducible for a given seed and scenario count.  Initial
    Treasury/inflation rates come from the VAR steady state unless given.
    """
    if n < 1:
        raise ValueError("need at least one scenario")
    table = models.life_table(profile.sex)
    horizon = table.terminal_age - profile.start_age + 1
    sigma = collar_sigma if collar_sigma is not None else models.gmm.std
    w_b = markets.BROKERAGE_PORTFOLIO.stock_weight
    w_r = markets.RETIREMENT_PORTFOLIO.stock_weight
    scenarios = []
    for k in range(n):
        rng = np.random.default_rng([base_seed, k])
        death = sample_death_year(profile.start_age, table, rng)
        if initial_rates is None:
            x0 = markets.steady_state_sample(models.var, rng)
        else:
            x0 = np.array(
                [
                    initial_rates[0],
                    markets.transform_inflation(initial_rates[1], models.transform),
                ]
            )
        path = markets.simulate_var(models.var, x0, horizon, rng)
        treasury = path[:, 0]
        inflation = markets.inverse_transform(path[:, 1], models.transform)
        market = markets.sample_market_returns(models.gmm, horizon, rng)

        caps = None
        stock_b, stock_r = market, market
        floor = None
        if collar_enabled:
            floor = collar_floor
            caps = np.empty(horizon)
            clipped = np.empty(horizon)
            for y in range(horizon):
                f_y = min(floor, treasury[y])
                caps[y] = collar_mod.solve_cap(f_y, 1.0, treasury[y], sigma)
                clipped[y] = min(max(market[y], f_y), caps[y])
            stock_b = stock_r = clipped
        rho_b = np.maximum(1.0 + w_b * stock_b + (1 - w_b) * treasury - inflation, 1e-9)
        rho_r = np.maximum(1.0 + w_r * stock_r + (1 - w_r) * treasury - inflation, 1e-9)
        scenarios.append(
            Scenario(
                index=k,
                start_age=profile.start_age,
                death_age=death,
                market=market,
                treasury=treasury,
                inflation=inflation,
                return_brokerage=rho_b,
                return_retirement=rho_r,
                initial_rates=(
                    float(x0[0]),
                    float(markets.inverse_transform(x0[1], models.transform)),
                ),
                collar_floor=floor,
                collar_caps=caps,
            )
        )
    return scenarios


def initial_state(profile: RetireeProfile, scenario: Scenario) -> RetireeState:
    return RetireeState(
        age=profile.start_age,
        brokerage=profile.brokerage,
        ira=profile.ira,
        roth=profile.roth,
        basis=BasisTracker(
            nominal_basis=profile.basis_ratio * profile.brokerage,
            nominal_value=profile.brokerage,
        ),
        last_rates=np.array(scenario.initial_rates),
    )


def run_trajectory(
    policy: str,
    scenario: Scenario,
    profile: RetireeProfile,
    models: ModelSet,
    policy_config: PolicyConfig | None = None,
    benchmark_config: BenchmarkConfig | None = None,
) -> SimulationReport:
    """Run one policy over one scenario until death.

    ``policy`` is "mpc" or "benchmark".  Exact taxes (progressive
    capital gains stacked on ordinary income) are charged each year and
    the cash discrepancy rolls into the next year's liability; at death
    outstanding liabilities reduce the bequest.
    """
    if policy == "mpc" and policy_config is None:
        policy_config = make_policy_config(profile, models)
    if policy == "benchmark" and benchmark_config is None:
        benchmark_config = BenchmarkConfig(target_post_tax=profile.target_consumption)

    state = initial_state(profile, scenario)
    records: list[dict] = []
    depleted = False
    shortfall_years = 0
    for age in range(profile.start_age, scenario.death_age + 1):
        y = age - profile.start_age
        if policy == "mpc":
            action = mpc_step(state, policy_config)
        elif policy == "benchmark":
            action = benchmark_step(
                state,
                benchmark_config,
                models.tax_schedule,
                models.rmd_schedule,
                additional=profile.additional_by_age(age),
                earned=profile.earned_by_age(age),
                liability=profile.liability_by_age(age) + state.carried_liability,
            )
        else:
            raise ValueError(f"unknown policy {policy!r}")
        realized = RealizedYear(
            return_brokerage=float(scenario.return_brokerage[y]),
            return_ira=float(scenario.return_retirement[y]),
            return_roth=float(scenario.return_retirement[y]),
            inflation=float(scenario.inflation[y]),
            earned=profile.earned_by_age(age),
            additional=profile.additional_by_age(age),
            scheduled_liability=profile.liability_by_age(age),
        )
        state, record = settle_year(state, action, realized, models.tax_schedule)
        state.last_rates = np.array([scenario.treasury[y], scenario.inflation[y]])
        records.append(record)
        if state.total < 1.0:
            depleted = True
        if action.consumption < profile.target_consumption - 1e-6:
            shortfall_years += 1
    return SimulationReport(
        scenario_id=scenario.index,
        death_age=scenario.death_age,
        records=records,
        bequest=bequest_at_death(state),
        total_consumption=float(sum(r["consumption"] for r in records)),
        depleted=depleted,
        shortfall_years=shortfall_years,
        final_liability=state.carried_liability,
    )


def run_many(
    policy: str,
    scenarios: list[Scenario],
    profile: RetireeProfile,
    models: ModelSet,
    policy_config: PolicyConfig | None = None,
    n_jobs: int = 1,
) -> list[SimulationReport]:
    """Run a policy over many scenarios, optionally across processes."""
    if n_jobs == 1:
        return [
            run_trajectory(policy, sc, profile, models, policy_config) for sc in scenarios
        ]
    return Parallel(n_jobs=n_jobs)(
        delayed(run_trajectory)(policy, sc, profile, models, policy_config)
        for sc in scenarios
    )


def wealth_conservation_gap(report: SimulationReport, profile: RetireeProfile) -> float:
    """Relative gap in the lifetime wealth identity for one trajectory.

    Initial wealth plus incomes plus investment gains must equal
    consumption plus taxes plus scheduled liabilities plus the estate
    (bequest plus any written-off negative carryover).
    """
    recs = report.records
    initial = profile.total_balance
    incomes = sum(r["earned"] + r["additional"] for r in recs)
    gains = sum(
        (r["brokerage_start"] - r["action_brokerage"]) * (r["return_brokerage"] - 1.0)
        + (r["ira_start"] - r["net_ira"]) * (r["return_ira"] - 1.0)
        + (r["roth_start"] - r["net_roth"]) * (r["return_roth"] - 1.0)
        for r in recs
    )
    consumption = sum(r["consumption"] for r in recs)
    taxes = sum(r["exact_tax"] for r in recs)
    scheduled = sum(
        r["liability_paid"] - (recs[i - 1]["discrepancy"] if i else 0.0)
        for i, r in enumerate(recs)
    )
    final_carry = recs[-1]["discrepancy"]
    estate = report.bequest + max(final_carry, 0.0) - final_carry
    lhs = initial + incomes + gains
    rhs = consumption + taxes + scheduled + estate
    return abs(lhs - rhs) / (1.0 + abs(lhs))


def aggregate(
    reports_mpc: list[SimulationReport],
    reports_benchmark: list[SimulationReport],
    target_consumption: float | None = None,
) -> dict:
    """Paired relative metrics and per-age bands across scenarios."""
    by_id = {r.scenario_id: r for r in reports_benchmark}
    if sorted(by_id) != sorted(r.scenario_id for r in reports_mpc):
        raise ValueError("reports are not paired by scenario id")
    pairs = [(m, by_id[m.scenario_id]) for m in reports_mpc]

    rel_bequest = np.array(
        [m.bequest / b.bequest if b.bequest > 0 else math.inf for m, b in pairs]
    )
    rel_consumption = np.array(
        [
            m.total_consumption / b.total_consumption if b.total_consumption > 0 else math.inf
            for m, b in pairs
        ]
    )
    finite = rel_bequest[np.isfinite(rel_bequest)]
    larger = np.array([m.bequest > b.bequest for m, b in pairs])
    uplift = rel_bequest[larger & np.isfinite(rel_bequest)] - 1.0

    def pct(arr, q):
        # Order statistics so infinite ratios (zero benchmark bequest) never
        # enter interpolation arithmetic.
        return float(np.percentile(arr, q, method="lower")) if len(arr) else math.nan

    metrics = {
        "n_scenarios": len(pairs),
        "relative_bequest": {
            "min": float(np.min(rel_bequest)),
            # Max over finite ratios only; zero-bequest benchmarks make it unbounded.
            "max": float(np.max(finite)) if len(finite) else math.nan,
            "p1": pct(rel_bequest, 1),
            "p5": pct(rel_bequest, 5),
            "p50": pct(rel_bequest, 50),
            "p95": pct(rel_bequest, 95),
            "p99": pct(rel_bequest, 99),
            "n_infinite": int(np.sum(~np.isfinite(rel_bequest))),
        },
        "fraction_mpc_bequest_larger": float(np.mean(larger)),
        "conditional_median_uplift": float(np.median(uplift)) if len(uplift) else math.nan,
        "fraction_consumption_differs": float(np.mean(np.abs(rel_consumption - 1.0) > 1e-9)),
        "relative_consumption": {
            "min": float(np.min(rel_consumption)),
            "max": float(np.max(rel_consumption[np.isfinite(rel_consumption)])),
        },
        "mpc_depleted_fraction": float(np.mean([m.depleted for m, _ in pairs])),
        "benchmark_depleted_fraction": float(np.mean([b.depleted for _, b in pairs])),
        "bequest_mpc": _dist_summary([m.bequest for m, _ in pairs]),
        "bequest_benchmark": _dist_summary([b.bequest for _, b in pairs]),
    }
    metrics["relative_bequest_cdf"] = _ecdf(finite)
    metrics["bequest_cdf_mpc"] = _ecdf([m.bequest for m, _ in pairs])
    metrics["bequest_cdf_benchmark"] = _ecdf([b.bequest for _, b in pairs])
    metrics["per_age_mpc"] = per_age_bands(reports_mpc)
    metrics["per_age_benchmark"] = per_age_bands(reports_benchmark)
    return metrics


def _dist_summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {
        "mean": float(v.mean()),
        "p5": float(np.percentile(v, 5)),
        "p50": float(np.percentile(v, 50)),
        "p95": float(np.percentile(v, 95)),
    }


def _ecdf(values) -> dict:
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        return {"values": [], "probabilities": []}
    probs = (np.arange(len(v)) + 1.0) / len(v)
    return {"values": v.tolist(), "probabilities": probs.tolist()}


PER_AGE_FIELDS = (
    "consumption",
    "exact_tax",
    "ira_conversion",
    "action_brokerage",
    "net_ira",
    "net_roth",
    "brokerage_start",
    "ira_start",
    "roth_start",
)


def per_age_bands(reports: list[SimulationReport], fields=PER_AGE_FIELDS) -> dict:
    """Median and 5th/95th percentile of per-year quantities at each age."""
    buckets: dict[int, dict[str, list]] = {}
    for rep in reports:
        for rec in rep.records:
            slot = buckets.setdefault(rec["age"], {f: [] for f in fields})
            for f in fields:
                slot[f].append(rec[f])
    ages = sorted(buckets)
    out: dict = {"age": ages}
    for f in fields:
        out[f] = {
            "median": [float(np.median(buckets[a][f])) for a in ages],
            "p5": [float(np.percentile(buckets[a][f], 5)) for a in ages],
            "p95": [float(np.percentile(buckets[a][f], 95)) for a in ages],
        }
    return out


def write_scenario_summary(path, reports_mpc, reports_benchmark) -> None:
    """Per-scenario paired summary as delimited text."""
    by_id = {r.scenario_id: r for r in reports_benchmark}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["scenario", "death_age", "bequest_mpc", "bequest_benchmark",
             "relative_bequest", "consumption_mpc", "consumption_benchmark",
             "mpc_depleted", "benchmark_depleted"]
        )
        for m in reports_mpc:
            b = by_id[m.scenario_id]
            rel = m.bequest / b.bequest if b.bequest > 0 else math.inf
            w.writerow(
                [m.scenario_id, m.death_age, round(m.bequest, 2), round(b.bequest, 2),
                 round(rel, 6) if math.isfinite(rel) else "inf",
                 round(m.total_consumption, 2), round(b.total_consumption, 2),
                 int(m.depleted), int(b.depleted)]
            )


def write_per_year(path, reports: list[SimulationReport], policy: str) -> None:
    """Long-format per-year records for one policy."""
    fields = ["scenario", "policy", "age", "consumption", "exact_tax", "ira_conversion",
              "action_brokerage", "ira_withdrawal", "roth_withdrawal", "net_ira", "net_roth",
              "brokerage_start", "ira_start", "roth_start", "discrepancy"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for rep in reports:
            for rec in rep.records:
                w.writerow(
                    [rep.scenario_id, policy]
                    + [round(float(rec[f]), 4) for f in fields[2:]]
                )


def write_ecdf(path, cdf: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "probability"])
        for v, p in zip(cdf["values"], cdf["probabilities"]):
            w.writerow([round(v, 4), round(p, 6)])
