import math

import numpy as np
import pytest

from rfplan.planner import (
    InfeasiblePlanError,
    PlanInputs,
    PlannerError,
    build_lp,
    export_plan_csv,
    plan_to_dict,
    solve_plan,
    verify_plan,
)
from rfplan.tax import TaxSchedule, income_tax


def make_inputs(zero_tax, **kw):
    base = dict(
        horizon=1,
        balance_brokerage=100_000.0,
        balance_ira=0.0,
        balance_roth=0.0,
        basis_ratio=1.0,
        returns_brokerage=1.0,
        returns_ira=1.0,
        returns_roth=1.0,
        earned_income=0.0,
        additional_income=0.0,
        liabilities=0.0,
        rmd_fractions=0.0,
        tax_schedule=zero_tax,
        deposit_limit=0.0,
        target_consumption=40_000.0,
        shortfall_weight=500.0,
    )
    base.update(kw)
    return PlanInputs(**base)


from tests.conftest import random_feasible_inputs


class TestBuildLP:
    def test_t45_counts(self, table4):
        inputs = make_inputs(table4, horizon=45, additional_income=np.full(45, 4e4))
        lp, vm = build_lp(inputs)
        assert 13 * 45 <= vm.n_variables <= 13 * 45 + 60
        assert vm.n_variables == 14 * 45 + 5
        assert vm.n_equalities == 7 * 45
        assert vm.n_inequalities == 9 * 45
        # 8 tax pieces per year plus the consumption shortfall hinge.
        assert vm.n_epigraph_rows == 8 * 45 + 1
        assert lp.eq_matrix.shape == (vm.n_equalities, vm.n_variables)
        assert lp.ineq_matrix.shape[0] == vm.n_inequalities + vm.n_epigraph_rows

    def test_t1_hand_enumeration(self, zero_tax):
        # Equalities: 3 dynamics + i and r definitions + cash + conversion.
        # Structural inequalities: 3 caps + RMD + deposit + gains hinge +
        # 3 next-balance nonnegativity rows.
        lp, vm = build_lp(make_inputs(zero_tax))
        assert vm.n_equalities == 7
        assert vm.n_inequalities == 9
        # zero-rate schedule has two pieces (the zero piece twice) + shortfall
        assert vm.n_epigraph_rows == 2 + 1

    def test_full_basis_kills_gain_coupling(self, table4):
        inputs = make_inputs(table4, basis_ratio=1.0)
        lp, vm = build_lp(inputs)
        g_col = vm.g.start
        epigraph = lp.ineq_matrix[vm.n_inequalities :, g_col].toarray().ravel()
        assert np.all(epigraph == 0.0)
        inputs2 = make_inputs(table4, basis_ratio=0.5)
        lp2, vm2 = build_lp(inputs2)
        epigraph2 = lp2.ineq_matrix[vm2.n_inequalities :, vm2.g.start].toarray().ravel()
        assert np.any(epigraph2 > 0.0)

    def test_invalid_inputs(self, table4):
        with pytest.raises(PlannerError):
            make_inputs(table4, horizon=0)
        with pytest.raises(PlannerError):
            make_inputs(table4, balance_ira=-1.0)
        with pytest.raises(PlannerError):
            make_inputs(table4, returns_ira=0.0)
        with pytest.raises(PlannerError):
            make_inputs(table4, rmd_fractions=1.5)


class TestSolvePlan:
    def test_consumption_saturates_then_bequest(self, zero_tax):
        plan = solve_plan(make_inputs(zero_tax))
        assert plan.consumption == pytest.approx(40_000.0, abs=1e-4)
        assert plan.bequest == pytest.approx(60_000.0, abs=1e-4)

    def test_feasibility_cap_binds(self, zero_tax):
        plan = solve_plan(make_inputs(zero_tax, balance_brokerage=10_000.0))
        assert plan.consumption == pytest.approx(10_000.0, abs=1e-4)
        assert plan.bequest == pytest.approx(0.0, abs=1e-4)

    def test_rmd_row_enforced(self, table4):
        plan = solve_plan(
            make_inputs(
                table4,
                horizon=2,
                balance_brokerage=0.0,
                balance_ira=100_000.0,
                rmd_fractions=np.array([0.1, 0.0]),
                target_consumption=5_000.0,
            )
        )
        assert plan.ira_withdrawal[0] >= 10_000.0 - 1e-6

    def test_upper_profile_shape(self, table4):
        t = 30
        add = np.where(np.arange(65, 65 + t) >= 70, 47_256.0, 0.0)
        inputs = make_inputs(
            table4,
            horizon=t,
            balance_brokerage=200_000.0,
            balance_ira=400_000.0,
            balance_roth=200_000.0,
            basis_ratio=0.5,
            returns_brokerage=np.full(t, 1.032),
            returns_ira=np.full(t, 1.055),
            returns_roth=np.full(t, 1.055),
            additional_income=add,
            rmd_fractions=np.zeros(t),
            target_consumption=58_400.0,
            deposit_limit=8_000.0,
        )
        plan = solve_plan(inputs)
        assert plan.status == "optimal"
        assert plan.solve_time < 0.5
        assert plan.consumption == pytest.approx(58_400.0, abs=1e-3)
        conv = plan.ira_conversion
        assert np.all(conv[:3] > 1_000.0)
        assert np.all(conv[8:] < 1_000.0)

    def test_infeasible_reports_year(self, zero_tax):
        inputs = make_inputs(
            zero_tax,
            horizon=3,
            balance_brokerage=1_000.0,
            liabilities=np.array([0.0, 5_000.0, 0.0]),
        )
        with pytest.raises(InfeasiblePlanError) as err:
            solve_plan(inputs)
        assert err.value.year == 2

    def test_pathological_scale_still_solves(self, table4):
        plan = solve_plan(
            make_inputs(table4, balance_brokerage=1e9, target_consumption=1e7)
        )
        assert plan.status == "optimal"


class TestVerifyPlan:
    def test_optimal_plan_clean(self, table4, rng):
        inputs = random_feasible_inputs(rng, table4)
        plan = solve_plan(inputs)
        report = verify_plan(inputs, plan)
        for family, value in report.items():
            assert value <= 1e-6, family

    def test_inflated_tax_reported(self, zero_tax):
        inputs = make_inputs(zero_tax)
        plan = solve_plan(inputs)
        plan.taxes = plan.taxes + 1.0
        report = verify_plan(inputs, plan)
        assert report["tax_tightness"] == pytest.approx(1.0 / (1.0 + plan.taxes[0]))

    def test_perturbed_balance_reported(self, zero_tax):
        inputs = make_inputs(zero_tax)
        plan = solve_plan(inputs)
        plan.balances_brokerage = plan.balances_brokerage.copy()
        plan.balances_brokerage[1] += 7.0
        assert verify_plan(inputs, plan)["dynamics"] == pytest.approx(7.0)


class TestProperties:
    def test_tightness_on_random_instances(self, table4, rng):
        for _ in range(120):
            inputs = random_feasible_inputs(rng, table4)
            try:
                plan = solve_plan(inputs)
            except InfeasiblePlanError:
                continue
            zeta = inputs.capital_gains_coefficient
            for k in range(inputs.horizon):
                omega = (
                    plan.ira_conversion[k]
                    - plan.ira_deposit[k]
                    + plan.ira_withdrawal[k]
                    + inputs.earned_income[k]
                    + inputs.additional_income[k]
                )
                exact = income_tax(omega, table4) + zeta * max(
                    plan.withdrawals_brokerage[k], 0.0
                )
                assert abs(plan.taxes[k] - exact) <= 1e-6 * (1.0 + plan.taxes[k])

    def test_monotone_in_initial_balance(self, table4, rng):
        for _ in range(10):
            inputs = random_feasible_inputs(rng, table4)
            try:
                base = solve_plan(inputs).objective_value
            except InfeasiblePlanError:
                continue
            richer = solve_plan(
                PlanInputs(
                    **{
                        **inputs.__dict__,
                        "balance_brokerage": inputs.balance_brokerage + 50_000.0,
                    }
                )
            ).objective_value
            assert richer >= base - 1e-5 * (1 + abs(base))

    def test_deposit_limit_and_conversion_match(self, table4, rng):
        checked = 0
        while checked < 20:
            inputs = random_feasible_inputs(rng, table4)
            if inputs.earned_income.max() == 0:
                continue
            try:
                plan = solve_plan(inputs)
            except InfeasiblePlanError:
                continue
            checked += 1
            cap = np.minimum(inputs.deposit_limit, inputs.earned_income)
            assert np.all(plan.ira_deposit + plan.roth_deposit <= cap + 1e-6)
            assert np.max(np.abs(plan.ira_conversion - plan.roth_conversion)) <= 1e-6

    def test_consumption_saturation_when_affordable(self, table4, rng):
        # Rich instances: hitting the target leaves a nonnegative bequest,
        # so the 500x shortfall weight forces consumption to the target.
        for _ in range(10):
            inputs = random_feasible_inputs(rng, table4)
            rich = PlanInputs(
                **{
                    **inputs.__dict__,
                    "balance_brokerage": 2e6 + inputs.horizon * inputs.target_consumption,
                    "liabilities": np.minimum(inputs.liabilities, 0.0),
                }
            )
            plan = solve_plan(rich)
            assert plan.consumption >= rich.target_consumption - 1e-4


class TestExport:
    def test_csv_export(self, zero_tax, tmp_path):
        plan = solve_plan(make_inputs(zero_tax, horizon=2))
        path = tmp_path / "plan.csv"
        export_plan_csv(plan, path, start_age=65)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("year,age,brokerage")
        assert len(lines) == 1 + 2 + 1  # header, two years, terminal row

    def test_dict_export(self, zero_tax):
        plan = solve_plan(make_inputs(zero_tax))
        doc = plan_to_dict(plan)
        assert doc["consumption"] == pytest.approx(40_000.0, abs=1e-4)
        assert doc["tightness_residual"] <= 1e-6
        assert len(doc["balances"]["brokerage"]) == 2
