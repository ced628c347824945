"""Pose one retirement funding planning instance and solve it as an LP.

The problem maximizes the bequest minus a penalty on consumption
shortfall, over per-year withdrawals, deposits, and Roth conversions,
subject to account dynamics, cash balance, RMDs, deposit limits, and a
relaxed (epigraph) tax constraint that is tight at the optimum.  A tiny
tax term in the objective forces tightness even when the bequest and
shortfall are insensitive to the tax split.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import LPSolution, StandardFormLP, solve_lp
from .tax import TaxSchedule, income_tax, income_tax_epigraph

DEFAULT_TIGHTNESS_WEIGHT = 1e-6


class PlannerError(ValueError):
    pass


class InfeasiblePlanError(PlannerError):
    def __init__(self, message: str, year: int | None = None):
        super().__init__(message)
        self.year = year


@dataclass
class PlanInputs:
    """Data of one planning instance; all dollar amounts in real USD."""

    horizon: int
    balance_brokerage: float
    balance_ira: float
    balance_roth: float
    basis_ratio: float
    returns_brokerage: np.ndarray
    returns_ira: np.ndarray
    returns_roth: np.ndarray
    earned_income: np.ndarray
    additional_income: np.ndarray
    liabilities: np.ndarray
    rmd_fractions: np.ndarray
    tax_schedule: TaxSchedule
    deposit_limit: float
    target_consumption: float
    shortfall_weight: float = 500.0
    tightness_weight: float = DEFAULT_TIGHTNESS_WEIGHT
    # Infinitesimal preference for labeling free 12%-bracket capacity as a
    # Roth conversion rather than a withdrawal refunded from the Roth side;
    # the two are exactly tied in balances, taxes, and bequest.  Kept two
    # orders below the tax tie-break so it never buys taxed conversions.
    conversion_tiebreak: float = 1e-8

    def __post_init__(self):
        t = self.horizon
        if t < 1:
            raise PlannerError("horizon must be >= 1")
        for name in (
            "returns_brokerage",
            "returns_ira",
            "returns_roth",
            "earned_income",
            "additional_income",
            "liabilities",
            "rmd_fractions",
        ):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape == ():
                arr = np.full(t, float(arr))
            if len(arr) != t:
                raise PlannerError(f"{name} must have length {t}")
            setattr(self, name, arr)
        if min(self.balance_brokerage, self.balance_ira, self.balance_roth) < 0:
            raise PlannerError("initial balances must be nonnegative")
        if self.basis_ratio < 0:
            raise PlannerError("basis ratio must be nonnegative")
        for name in ("returns_brokerage", "returns_ira", "returns_roth"):
            if np.any(getattr(self, name) <= 0):
                raise PlannerError("gross returns must be positive")
        if np.any((self.rmd_fractions < 0) | (self.rmd_fractions > 1)):
            raise PlannerError("RMD fractions must lie in [0, 1]")
        if np.any(self.earned_income < 0) or np.any(self.additional_income < 0):
            raise PlannerError("income streams must be nonnegative")
        if self.deposit_limit < 0:
            raise PlannerError("deposit limit must be nonnegative")
        if self.target_consumption < 0:
            raise PlannerError("target consumption must be nonnegative")
        if self.shortfall_weight <= 0 or self.tightness_weight <= 0:
            raise PlannerError("objective weights must be positive")

    @property
    def capital_gains_coefficient(self) -> float:
        return self.tax_schedule.capital_gains_coefficient(self.basis_ratio)


@dataclass
class VariableMap:
    """Column ranges of each variable block in the assembled LP."""

    horizon: int
    b: slice
    i: slice
    r: slice
    ic: slice
    idep: slice
    iw: slice
    rc: slice
    rd: slice
    rw: slice
    tau: slice
    g: slice
    bal_b: slice
    bal_i: slice
    bal_r: slice
    c: int
    s: int
    n_variables: int = 0
    n_equalities: int = 0
    n_inequalities: int = 0
    n_epigraph_rows: int = 0


@dataclass
class Plan:
    """Solved trajectories of one planning instance."""

    inputs: PlanInputs
    balances_brokerage: np.ndarray
    balances_ira: np.ndarray
    balances_roth: np.ndarray
    withdrawals_brokerage: np.ndarray
    net_ira: np.ndarray
    net_roth: np.ndarray
    ira_conversion: np.ndarray
    ira_deposit: np.ndarray
    ira_withdrawal: np.ndarray
    roth_conversion: np.ndarray
    roth_deposit: np.ndarray
    roth_withdrawal: np.ndarray
    taxes: np.ndarray
    consumption: float
    bequest: float
    objective_value: float
    solve_time: float
    status: str = "optimal"
    diagnostics: dict = field(default_factory=dict)


def build_lp(inputs: PlanInputs) -> tuple[StandardFormLP, VariableMap]:
    """Assemble the sparse LP for one instance.

    Structural inequality rows (withdrawal caps, RMD, deposit limit,
    capital-gains hinge, next-balance nonnegativity) are counted apart
    from the tax and shortfall epigraph rows in the returned map.
    """
    t = inputs.horizon
    vm = _variable_map(t)
    n = vm.n_variables

    idx = np.arange(t)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    for block in (vm.ic, vm.idep, vm.iw, vm.rc, vm.rd, vm.rw, vm.g):
        lb[block] = 0.0
    lb[vm.c] = 0.0
    lb[vm.s] = 0.0
    lb[vm.bal_b.start] = ub[vm.bal_b.start] = inputs.balance_brokerage
    lb[vm.bal_i.start] = ub[vm.bal_i.start] = inputs.balance_ira
    lb[vm.bal_r.start] = ub[vm.bal_r.start] = inputs.balance_roth

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    rhs: list[np.ndarray] = []
    row_base = 0

    def add_block(entries, rhs_vals):
        nonlocal row_base
        for roff, cidx, v in entries:
            rows.append(row_base + roff)
            cols.append(np.asarray(cidx))
            vals.append(np.broadcast_to(np.asarray(v, dtype=float), (t,)).copy())
        rhs.append(np.broadcast_to(np.asarray(rhs_vals, dtype=float), (t,)).copy())
        row_base += t

    # Equalities: three balance dynamics, the two net-withdrawal
    # definitions, cash balance, and conversion matching.
    for bal, flow, rho in (
        (vm.bal_b, vm.b, inputs.returns_brokerage),
        (vm.bal_i, vm.i, inputs.returns_ira),
        (vm.bal_r, vm.r, inputs.returns_roth),
    ):
        add_block(
            [
                (idx, np.arange(bal.start + 1, bal.stop), 1.0),
                (idx, np.arange(bal.start, bal.stop - 1), -rho),
                (idx, np.arange(flow.start, flow.stop), rho),
            ],
            0.0,
        )
    add_block(
        [
            (idx, np.arange(vm.i.start, vm.i.stop), 1.0),
            (idx, np.arange(vm.ic.start, vm.ic.stop), -1.0),
            (idx, np.arange(vm.idep.start, vm.idep.stop), 1.0),
            (idx, np.arange(vm.iw.start, vm.iw.stop), -1.0),
        ],
        0.0,
    )
    add_block(
        [
            (idx, np.arange(vm.r.start, vm.r.stop), 1.0),
            (idx, np.arange(vm.rc.start, vm.rc.stop), 1.0),
            (idx, np.arange(vm.rd.start, vm.rd.stop), 1.0),
            (idx, np.arange(vm.rw.start, vm.rw.stop), -1.0),
        ],
        0.0,
    )
    add_block(
        [
            (idx, np.arange(vm.b.start, vm.b.stop), 1.0),
            (idx, np.arange(vm.i.start, vm.i.stop), 1.0),
            (idx, np.arange(vm.r.start, vm.r.stop), 1.0),
            (idx, np.full(t, vm.c), -1.0),
            (idx, np.arange(vm.tau.start, vm.tau.stop), -1.0),
        ],
        inputs.liabilities - inputs.earned_income - inputs.additional_income,
    )
    add_block(
        [
            (idx, np.arange(vm.ic.start, vm.ic.stop), 1.0),
            (idx, np.arange(vm.rc.start, vm.rc.stop), -1.0),
        ],
        0.0,
    )
    n_eq = row_base
    eq = _to_csr(rows, cols, vals, n_eq, n)
    eq_rhs = np.concatenate(rhs)

    rows, cols, vals, rhs = [], [], [], []
    row_base = 0

    # Structural inequalities.
    for flow, bal in ((vm.b, vm.bal_b), (vm.i, vm.bal_i), (vm.r, vm.bal_r)):
        add_block(
            [
                (idx, np.arange(flow.start, flow.stop), 1.0),
                (idx, np.arange(bal.start, bal.stop - 1), -1.0),
            ],
            0.0,
        )
    add_block(
        [
            (idx, np.arange(vm.bal_i.start, vm.bal_i.stop - 1), inputs.rmd_fractions),
            (idx, np.arange(vm.iw.start, vm.iw.stop), -1.0),
        ],
        0.0,
    )
    add_block(
        [
            (idx, np.arange(vm.idep.start, vm.idep.stop), 1.0),
            (idx, np.arange(vm.rd.start, vm.rd.stop), 1.0),
        ],
        np.minimum(inputs.deposit_limit, inputs.earned_income),
    )
    add_block(
        [
            (idx, np.arange(vm.b.start, vm.b.stop), 1.0),
            (idx, np.arange(vm.g.start, vm.g.stop), -1.0),
        ],
        0.0,
    )
    for bal in (vm.bal_b, vm.bal_i, vm.bal_r):
        add_block([(idx, np.arange(bal.start + 1, bal.stop), -1.0)], 0.0)
    n_ineq = row_base

    # Epigraph rows: tax pieces and the consumption shortfall hinge.
    zeta = inputs.capital_gains_coefficient
    other_income = inputs.earned_income + inputs.additional_income
    for slope, intercept in income_tax_epigraph(inputs.tax_schedule):
        entries = [
            (idx, np.arange(vm.g.start, vm.g.stop), zeta),
            (idx, np.arange(vm.tau.start, vm.tau.stop), -1.0),
        ]
        if slope:
            entries = [
                (idx, np.arange(vm.ic.start, vm.ic.stop), slope),
                (idx, np.arange(vm.idep.start, vm.idep.stop), -slope),
                (idx, np.arange(vm.iw.start, vm.iw.stop), slope),
            ] + entries
        add_block(entries, -intercept - slope * other_income)
    rows.append(np.array([row_base, row_base]))
    cols.append(np.array([vm.c, vm.s]))
    vals.append(np.array([-1.0, -1.0]))
    rhs.append(np.array([-inputs.target_consumption]))
    row_base += 1
    n_epi = row_base - n_ineq

    ineq = _to_csr(rows, cols, vals, row_base, n)
    ineq_rhs = np.concatenate(rhs)

    objective = np.zeros(n)
    objective[vm.bal_b.stop - 1] = 1.0
    objective[vm.bal_i.stop - 1] = 1.0
    objective[vm.bal_r.stop - 1] = 1.0
    objective[vm.s] = -inputs.shortfall_weight
    objective[vm.tau] = -inputs.tightness_weight
    objective[vm.ic] = inputs.conversion_tiebreak

    vm.n_variables = n
    vm.n_equalities = n_eq
    vm.n_inequalities = n_ineq
    vm.n_epigraph_rows = n_epi
    lp = StandardFormLP(
        objective=objective,
        eq_matrix=eq,
        eq_rhs=eq_rhs,
        ineq_matrix=ineq,
        ineq_rhs=ineq_rhs,
        lower_bounds=lb,
        upper_bounds=ub,
        variable_names=_variable_names(vm),
    )
    return lp, vm


def _variable_map(t: int) -> VariableMap:
    blocks = {}
    start = 0
    for name, size in (
        ("b", t), ("i", t), ("r", t),
        ("ic", t), ("idep", t), ("iw", t),
        ("rc", t), ("rd", t), ("rw", t),
        ("tau", t), ("g", t),
        ("bal_b", t + 1), ("bal_i", t + 1), ("bal_r", t + 1),
    ):
        blocks[name] = slice(start, start + size)
        start += size
    return VariableMap(horizon=t, c=start, s=start + 1, n_variables=start + 2, **blocks)


def _variable_names(vm: VariableMap) -> list[str]:
    names = [""] * vm.n_variables
    for label in ("b", "i", "r", "ic", "idep", "iw", "rc", "rd", "rw", "tau", "g"):
        block = getattr(vm, label)
        for k, j in enumerate(range(block.start, block.stop)):
            names[j] = f"{label}[{k + 1}]"
    for label, block in (("B", vm.bal_b), ("I", vm.bal_i), ("R", vm.bal_r)):
        for k, j in enumerate(range(block.start, block.stop)):
            names[j] = f"{label}[{k + 1}]"
    names[vm.c] = "c"
    names[vm.s] = "s"
    return names


def _to_csr(rows, cols, vals, nrows, ncols) -> sp.csr_matrix:
    if not rows:
        return sp.csr_matrix((nrows, ncols))
    r = np.concatenate([np.broadcast_to(x, np.shape(c)) for x, c in zip(rows, cols)])
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    return sp.coo_matrix((v, (r, c)), shape=(nrows, ncols)).tocsr()


def solve_plan(inputs: PlanInputs, tolerance: float = 1e-9) -> Plan:
    """Solve one planning instance and unpack the trajectories.

    Raises :class:`InfeasiblePlanError` when the constraints contradict;
    an unbounded status cannot legitimately occur (the bequest is bounded
    by balances and income) and is treated as a numerical failure.  A
    numerical failure triggers one retry with the money unit scaled to
    thousands.
    """
    lp, vm = build_lp(inputs)
    sol = solve_lp(lp, tolerance)
    if sol.status == "numerical_failure" or sol.status == "unbounded":
        sol = _retry_scaled(lp, tolerance)
    if sol.status == "infeasible":
        raise InfeasiblePlanError(
            "planning instance is infeasible", year=_first_infeasible_year(inputs)
        )
    if sol.status != "optimal":
        raise PlannerError(f"solver failed with status {sol.status}")
    return _unpack(inputs, vm, sol)


def _retry_scaled(lp: StandardFormLP, tolerance: float) -> LPSolution:
    # Rescale dollars to thousands: divide rhs and bounds, keep matrices.
    scale = 1e-3
    scaled = StandardFormLP(
        objective=lp.objective.copy(),
        eq_matrix=lp.eq_matrix,
        eq_rhs=lp.eq_rhs * scale,
        ineq_matrix=lp.ineq_matrix,
        ineq_rhs=lp.ineq_rhs * scale,
        lower_bounds=np.where(np.isfinite(lp.lower_bounds), lp.lower_bounds * scale, lp.lower_bounds),
        upper_bounds=np.where(np.isfinite(lp.upper_bounds), lp.upper_bounds * scale, lp.upper_bounds),
        variable_names=lp.variable_names,
    )
    sol = solve_lp(scaled, tolerance)
    if sol.status == "optimal":
        sol.primal = sol.primal / scale
        sol.objective_value /= scale
    return sol


def _first_infeasible_year(inputs: PlanInputs) -> int:
    """Best-effort guess at the first year whose obligations cannot be met."""
    avail = inputs.balance_brokerage + inputs.balance_ira + inputs.balance_roth
    for t in range(inputs.horizon):
        avail += inputs.earned_income[t] + inputs.additional_income[t]
        need = inputs.liabilities[t]
        if avail < need - 1e-9:
            return t + 1
        growth = max(
            inputs.returns_brokerage[t], inputs.returns_ira[t], inputs.returns_roth[t]
        )
        avail = (avail - need) * growth
    return 1


def _unpack(inputs: PlanInputs, vm: VariableMap, sol: LPSolution) -> Plan:
    x = sol.primal
    plan = Plan(
        inputs=inputs,
        balances_brokerage=x[vm.bal_b],
        balances_ira=x[vm.bal_i],
        balances_roth=x[vm.bal_r],
        withdrawals_brokerage=x[vm.b],
        net_ira=x[vm.i],
        net_roth=x[vm.r],
        ira_conversion=x[vm.ic],
        ira_deposit=x[vm.idep],
        ira_withdrawal=x[vm.iw],
        roth_conversion=x[vm.rc],
        roth_deposit=x[vm.rd],
        roth_withdrawal=x[vm.rw],
        taxes=x[vm.tau],
        consumption=float(x[vm.c]),
        bequest=float(x[vm.bal_b.stop - 1] + x[vm.bal_i.stop - 1] + x[vm.bal_r.stop - 1]),
        objective_value=sol.objective_value,
        solve_time=sol.solve_time,
        diagnostics={
            "max_eq_residual": sol.max_eq_residual,
            "max_ineq_violation": sol.max_ineq_violation,
            "n_variables": vm.n_variables,
            "n_equalities": vm.n_equalities,
            "n_inequalities": vm.n_inequalities,
            "n_epigraph_rows": vm.n_epigraph_rows,
        },
    )
    return plan


def verify_plan(inputs: PlanInputs, plan: Plan) -> dict[str, float]:
    """Recompute every constraint residual directly from the trajectories.

    Independent of the LP: uses the exact piecewise tax function, not the
    epigraph.  Returns the max absolute violation per constraint family;
    the tightness entry is relative, scaled by 1 + tax.
    """
    t = inputs.horizon
    bb, bi, br = plan.balances_brokerage, plan.balances_ira, plan.balances_roth
    res: dict[str, float] = {}
    res["initial_balance"] = max(
        abs(bb[0] - inputs.balance_brokerage),
        abs(bi[0] - inputs.balance_ira),
        abs(br[0] - inputs.balance_roth),
    )
    res["dynamics"] = max(
        np.max(np.abs(bb[1:] - (bb[:-1] - plan.withdrawals_brokerage) * inputs.returns_brokerage)),
        np.max(np.abs(bi[1:] - (bi[:-1] - plan.net_ira) * inputs.returns_ira)),
        np.max(np.abs(br[1:] - (br[:-1] - plan.net_roth) * inputs.returns_roth)),
    )
    res["net_definitions"] = max(
        np.max(np.abs(plan.net_ira - (plan.ira_conversion - plan.ira_deposit + plan.ira_withdrawal))),
        np.max(np.abs(plan.net_roth - (-plan.roth_conversion - plan.roth_deposit + plan.roth_withdrawal))),
    )
    cash_lhs = (
        plan.withdrawals_brokerage
        + plan.net_ira
        + plan.net_roth
        + inputs.earned_income
        + inputs.additional_income
    )
    cash_rhs = plan.consumption + inputs.liabilities + plan.taxes
    res["cash_balance"] = float(np.max(np.abs(cash_lhs - cash_rhs)))
    res["rmd"] = float(np.max(inputs.rmd_fractions * bi[:-1] - plan.ira_withdrawal, initial=0.0))
    res["deposit_limit"] = float(
        np.max(
            plan.ira_deposit + plan.roth_deposit
            - np.minimum(inputs.deposit_limit, inputs.earned_income),
            initial=0.0,
        )
    )
    res["conversion_match"] = float(np.max(np.abs(plan.ira_conversion - plan.roth_conversion)))
    res["withdrawal_caps"] = float(
        max(
            np.max(plan.withdrawals_brokerage - bb[:-1], initial=0.0),
            np.max(plan.net_ira - bi[:-1], initial=0.0),
            np.max(plan.net_roth - br[:-1], initial=0.0),
        )
    )
    res["balance_nonneg"] = float(max(-min(bb.min(), bi.min(), br.min()), 0.0))
    res["component_nonneg"] = float(
        max(
            0.0,
            -min(
                plan.ira_conversion.min(),
                plan.ira_deposit.min(),
                plan.ira_withdrawal.min(),
                plan.roth_conversion.min(),
                plan.roth_deposit.min(),
                plan.roth_withdrawal.min(),
            ),
        )
    )
    zeta = inputs.capital_gains_coefficient
    tight = 0.0
    for k in range(t):
        omega = (
            plan.ira_conversion[k]
            - plan.ira_deposit[k]
            + plan.ira_withdrawal[k]
            + inputs.earned_income[k]
            + inputs.additional_income[k]
        )
        exact = income_tax(omega, inputs.tax_schedule) + zeta * max(
            plan.withdrawals_brokerage[k], 0.0
        )
        tight = max(tight, abs(plan.taxes[k] - exact) / (1.0 + plan.taxes[k]))
    res["tax_tightness"] = tight
    return res


def export_plan_csv(plan: Plan, path, start_age: int | None = None) -> None:
    """Write the per-year trajectories as a delimited table."""
    t = plan.inputs.horizon
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["year", "age", "brokerage", "ira", "roth", "b", "i_conv", "i_dep",
             "i_wdr", "r_conv", "r_dep", "r_wdr", "tax", "consumption", "bequest"]
        )
        for k in range(t):
            w.writerow(
                [
                    k + 1,
                    start_age + k if start_age is not None else "",
                    round(plan.balances_brokerage[k], 2),
                    round(plan.balances_ira[k], 2),
                    round(plan.balances_roth[k], 2),
                    round(plan.withdrawals_brokerage[k], 2),
                    round(plan.ira_conversion[k], 2),
                    round(plan.ira_deposit[k], 2),
                    round(plan.ira_withdrawal[k], 2),
                    round(plan.roth_conversion[k], 2),
                    round(plan.roth_deposit[k], 2),
                    round(plan.roth_withdrawal[k], 2),
                    round(plan.taxes[k], 2),
                    round(plan.consumption, 2),
                    "",
                ]
            )
        w.writerow(
            [t + 1, start_age + t if start_age is not None else "",
             round(plan.balances_brokerage[t], 2), round(plan.balances_ira[t], 2),
             round(plan.balances_roth[t], 2), "", "", "", "", "", "", "", "", "",
             round(plan.bequest, 2)]
        )


def plan_to_dict(plan: Plan) -> dict:
    """Structured-document form of a plan, used by the API and CLI."""
    return {
        "consumption": plan.consumption,
        "bequest": plan.bequest,
        "objective_value": plan.objective_value,
        "solve_time": plan.solve_time,
        "status": plan.status,
        "balances": {
            "brokerage": plan.balances_brokerage.tolist(),
            "ira": plan.balances_ira.tolist(),
            "roth": plan.balances_roth.tolist(),
        },
        "flows": {
            "brokerage_withdrawal": plan.withdrawals_brokerage.tolist(),
            "ira_conversion": plan.ira_conversion.tolist(),
            "ira_deposit": plan.ira_deposit.tolist(),
            "ira_withdrawal": plan.ira_withdrawal.tolist(),
            "roth_conversion": plan.roth_conversion.tolist(),
            "roth_deposit": plan.roth_deposit.tolist(),
            "roth_withdrawal": plan.roth_withdrawal.tolist(),
        },
        "taxes": plan.taxes.tolist(),
        "tightness_residual": verify_plan(plan.inputs, plan)["tax_tightness"],
    }
