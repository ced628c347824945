"""Yearly update-plan-act policy around the planning problem.

Each year the policy refreshes the horizon from the life table, rebuilds
the planning instance from current balances and forecasts, solves it,
and expends only the first year's actions.  Settling a year applies
realized returns and exact taxes; any gap between planned and realized
cash flows is carried into the next year's liabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .lifetable import LifeTable, planning_horizon
from .planner import InfeasiblePlanError, PlanInputs, solve_plan
from .tax import RMDSchedule, TaxSchedule, exact_capital_gains_tax, income_tax, rmd_fraction
from . import markets


class PolicyError(ValueError):
    pass


@dataclass
class RetireeState:
    """Mutable per-trajectory state between yearly decisions."""

    age: int
    brokerage: float
    ira: float
    roth: float
    basis: object  # BasisTracker duck type: .ratio, .sell, .deposit, .grow
    carried_liability: float = 0.0
    alive: bool = True
    last_rates: np.ndarray | None = None  # (treasury, inflation) observed last year

    def __post_init__(self):
        if min(self.brokerage, self.ira, self.roth) < -1e-9:
            raise PolicyError("balances must be nonnegative")

    @property
    def total(self) -> float:
        return self.brokerage + self.ira + self.roth


@dataclass(frozen=True)
class YearlyAction:
    """First-year flows emitted by a policy; components are nonnegative."""

    brokerage: float  # negative means a deposit
    ira_conversion: float
    ira_deposit: float
    ira_withdrawal: float
    roth_conversion: float
    roth_deposit: float
    roth_withdrawal: float
    consumption: float
    planned_tax: float

    def __post_init__(self):
        comps = (
            self.ira_conversion,
            self.ira_deposit,
            self.ira_withdrawal,
            self.roth_conversion,
            self.roth_deposit,
            self.roth_withdrawal,
        )
        if min(comps) < 0:
            raise PolicyError("action components must be nonnegative")
        if abs(self.ira_conversion - self.roth_conversion) > 1e-6:
            raise PolicyError("conversion legs must match")

    @property
    def net_ira(self) -> float:
        return self.ira_conversion - self.ira_deposit + self.ira_withdrawal

    @property
    def net_roth(self) -> float:
        return -self.roth_conversion - self.roth_deposit + self.roth_withdrawal


@dataclass(frozen=True)
class RealizedYear:
    """Outcomes revealed at the end of a year."""

    return_brokerage: float  # gross real returns
    return_ira: float
    return_roth: float
    inflation: float
    earned: float = 0.0
    additional: float = 0.0
    scheduled_liability: float = 0.0


@dataclass
class PolicyConfig:
    """Everything the yearly policy needs besides the retiree state."""

    target_consumption: float
    shortfall_weight: float
    tax_schedule: TaxSchedule
    rmd_schedule: RMDSchedule
    life_table: LifeTable
    earned_by_age: Callable[[int], float] = lambda age: 0.0
    additional_by_age: Callable[[int], float] = lambda age: 0.0
    liability_by_age: Callable[[int], float] = lambda age: 0.0
    deposit_limit: float = 8_000.0
    horizon_factor: float = 1.5
    max_age: int = 120
    forecast_mode: str = "fixed"  # "fixed" or "var"
    forecast_brokerage: float = 1.032
    forecast_retirement: float = 1.055
    var_model: markets.VARModel | None = None
    inflation_transform: markets.PWLTransform = field(default_factory=markets.PWLTransform)
    market_forecast: float = markets.MARKET_FORECAST
    brokerage_stock_weight: float = 0.20
    retirement_stock_weight: float = 0.60
    tightness_weight: float = 1e-6
    fallback_on_infeasible: bool = True


def forecast_returns(config: PolicyConfig, state: RetireeState, horizon: int):
    """Per-year gross real return forecasts for the three accounts."""
    if config.forecast_mode == "fixed" or state.last_rates is None:
        rho_b = np.full(horizon, config.forecast_brokerage)
        rho_ir = np.full(horizon, config.forecast_retirement)
        return rho_b, rho_ir, rho_ir.copy()
    if config.var_model is None:
        raise PolicyError("var forecast mode requires a VAR model")
    x_t = np.array(
        [
            state.last_rates[0],
            markets.transform_inflation(state.last_rates[1], config.inflation_transform),
        ]
    )
    fc = markets.forecast_var(config.var_model, x_t, np.arange(1, horizon + 1))
    fc = np.atleast_2d(fc)
    treas = fc[:, 0]
    infl = markets.inverse_transform(fc[:, 1], config.inflation_transform)
    rho_b = 1.0 + markets.portfolio_real_return(
        config.market_forecast, treas, infl, markets.PortfolioSpec(config.brokerage_stock_weight)
    )
    rho_ir = 1.0 + markets.portfolio_real_return(
        config.market_forecast, treas, infl, markets.PortfolioSpec(config.retirement_stock_weight)
    )
    return rho_b, rho_ir, rho_ir.copy()


def build_plan_inputs(state: RetireeState, config: PolicyConfig) -> PlanInputs:
    t = planning_horizon(state.age, config.life_table, config.horizon_factor, config.max_age)
    ages = state.age + np.arange(t)
    rho_b, rho_i, rho_r = forecast_returns(config, state, t)
    liabilities = np.array([config.liability_by_age(int(a)) for a in ages], dtype=float)
    liabilities[0] += state.carried_liability
    return PlanInputs(
        horizon=t,
        balance_brokerage=max(state.brokerage, 0.0),
        balance_ira=max(state.ira, 0.0),
        balance_roth=max(state.roth, 0.0),
        basis_ratio=state.basis.ratio,
        returns_brokerage=rho_b,
        returns_ira=rho_i,
        returns_roth=rho_r,
        earned_income=np.array([config.earned_by_age(int(a)) for a in ages], dtype=float),
        additional_income=np.array([config.additional_by_age(int(a)) for a in ages], dtype=float),
        liabilities=liabilities,
        rmd_fractions=np.array(
            [rmd_fraction(int(a), config.rmd_schedule) for a in ages], dtype=float
        ),
        tax_schedule=config.tax_schedule,
        deposit_limit=config.deposit_limit,
        target_consumption=config.target_consumption,
        shortfall_weight=config.shortfall_weight,
        tightness_weight=config.tightness_weight,
    )


def mpc_step(state: RetireeState, config: PolicyConfig) -> YearlyAction:
    """Solve this year's plan and return its first-year actions.

    When the instance is infeasible (obligations exceed resources) the
    policy falls back for one year to the benchmark's RMD-first
    proportional mechanics so an action is always emitted.
    """
    if not state.alive:
        raise PolicyError("cannot act on a dead retiree's state")
    inputs = build_plan_inputs(state, config)
    try:
        plan = solve_plan(inputs)
    except InfeasiblePlanError:
        if not config.fallback_on_infeasible:
            raise
        return _fallback_action(state, config)
    kappa = inputs.rmd_fractions[0]
    action = YearlyAction(
        brokerage=float(plan.withdrawals_brokerage[0]),
        ira_conversion=(ic := max(float(plan.ira_conversion[0]), 0.0)),
        ira_deposit=max(float(plan.ira_deposit[0]), 0.0),
        ira_withdrawal=max(float(plan.ira_withdrawal[0]), kappa * max(state.ira, 0.0)),
        roth_conversion=ic,
        roth_deposit=max(float(plan.roth_deposit[0]), 0.0),
        roth_withdrawal=max(float(plan.roth_withdrawal[0]), 0.0),
        consumption=plan.consumption,
        planned_tax=float(plan.taxes[0]),
    )
    return _clip_to_balances(action, state)


def _fallback_action(state: RetireeState, config: PolicyConfig) -> YearlyAction:
    from .benchmark import BenchmarkConfig, benchmark_step

    cfg = BenchmarkConfig(
        withdrawal_rate=0.0,
        projection_age=config.max_age,
        target_post_tax=config.target_consumption,
    )
    return benchmark_step(state, cfg, config.tax_schedule, config.rmd_schedule,
                          additional=config.additional_by_age(state.age),
                          earned=config.earned_by_age(state.age),
                          liability=config.liability_by_age(state.age) + state.carried_liability)


def _clip_to_balances(action: YearlyAction, state: RetireeState) -> YearlyAction:
    """Remove solver-tolerance overshoot so withdrawals never exceed balances."""
    b = min(action.brokerage, state.brokerage)
    net_i = action.net_ira
    net_r = action.net_roth
    scale_i = 1.0 if net_i <= state.ira else state.ira / net_i if net_i > 0 else 1.0
    scale_r = 1.0 if net_r <= state.roth else state.roth / net_r if net_r > 0 else 1.0
    scale = min(scale_i, scale_r)
    if scale >= 1.0 and b == action.brokerage:
        return action
    return replace(
        action,
        brokerage=b,
        ira_conversion=action.ira_conversion * scale,
        roth_conversion=action.roth_conversion * scale,
        ira_withdrawal=action.ira_withdrawal * scale,
        roth_withdrawal=action.roth_withdrawal * scale,
    )


def settle_year(
    state: RetireeState, action: YearlyAction, realized: RealizedYear,
    tax_schedule: TaxSchedule,
) -> tuple[RetireeState, dict]:
    """Apply one year's action under realized outcomes.

    Computes the exact tax bill (progressive capital gains included),
    updates the brokerage basis with nominal flows, grows balances at the
    realized returns, and carries the cash-balance discrepancy forward as
    next year's liability.  Returns the new state and a realized record.
    """
    eps = 1e-6
    if (
        action.brokerage > state.brokerage + eps
        or action.net_ira > state.ira + eps
        or action.net_roth > state.roth + eps
    ):
        raise PolicyError("withdrawal exceeds balance; planner emitted a bad action")

    delta_ratio = state.basis.ratio
    omega = (
        action.ira_conversion
        - action.ira_deposit
        + action.ira_withdrawal
        + realized.earned
        + realized.additional
    )
    gain = max(action.brokerage, 0.0) * (1.0 - delta_ratio)
    exact_tax = income_tax(omega, tax_schedule) + exact_capital_gains_tax(
        gain, omega, tax_schedule
    )

    liability = realized.scheduled_liability + state.carried_liability
    funding = (
        action.brokerage
        + action.net_ira
        + action.net_roth
        + realized.earned
        + realized.additional
    )
    discrepancy = action.consumption + exact_tax + liability - funding

    if action.brokerage > 0:
        state.basis.sell(action.brokerage)
    elif action.brokerage < 0:
        state.basis.deposit(-action.brokerage)
    state.basis.grow(realized.return_brokerage, realized.inflation)

    new_state = RetireeState(
        age=state.age + 1,
        brokerage=max((state.brokerage - action.brokerage) * realized.return_brokerage, 0.0),
        ira=max((state.ira - action.net_ira) * realized.return_ira, 0.0),
        roth=max((state.roth - action.net_roth) * realized.return_roth, 0.0),
        basis=state.basis,
        carried_liability=discrepancy,
        alive=state.alive,
        last_rates=state.last_rates,
    )
    record = {
        "age": state.age,
        "brokerage_start": state.brokerage,
        "ira_start": state.ira,
        "roth_start": state.roth,
        "action_brokerage": action.brokerage,
        "ira_conversion": action.ira_conversion,
        "ira_deposit": action.ira_deposit,
        "ira_withdrawal": action.ira_withdrawal,
        "roth_conversion": action.roth_conversion,
        "roth_deposit": action.roth_deposit,
        "roth_withdrawal": action.roth_withdrawal,
        "net_ira": action.net_ira,
        "net_roth": action.net_roth,
        "consumption": action.consumption,
        "planned_tax": action.planned_tax,
        "exact_tax": exact_tax,
        "taxable_income": omega,
        "realized_gain": gain,
        "discrepancy": discrepancy,
        "liability_paid": liability,
        "earned": realized.earned,
        "additional": realized.additional,
        "basis_ratio": delta_ratio,
        "inflation": realized.inflation,
        "return_brokerage": realized.return_brokerage,
        "return_ira": realized.return_ira,
        "return_roth": realized.return_roth,
    }
    return new_state, record


def bequest_at_death(state: RetireeState) -> float:
    """Estate value: account balances net of any outstanding liability."""
    return state.total - max(state.carried_liability, 0.0)
