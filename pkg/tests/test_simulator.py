import dataclasses
import math

import numpy as np
import pytest

from rfplan import markets as mk
from rfplan.lifetable import LifeTable
from rfplan.profiles import LOWER_PROFILE, UPPER_PROFILE, RetireeProfile, default_models
from rfplan.simulate import (
    BasisTracker,
    aggregate,
    generate_scenarios,
    run_trajectory,
    wealth_conservation_gap,
    write_scenario_summary,
)


@pytest.fixture(scope="module")
def models():
    return default_models(ltcg_fixed_rate=0.15)


class TestBasisTracker:
    def test_ratio_starts_at_configured_value(self):
        t = BasisTracker(nominal_basis=50.0, nominal_value=100.0)
        assert t.ratio == pytest.approx(0.5)

    def test_liquidate_and_redeposit_resets_ratio(self):
        t = BasisTracker(nominal_basis=40.0, nominal_value=100.0, inflation_index=1.3)
        t.sell(100.0 / 1.3)
        assert t.nominal_value == pytest.approx(0.0)
        assert t.ratio == 1.0
        t.deposit(77.0)
        assert t.ratio == pytest.approx(1.0)
        assert t.nominal_value == pytest.approx(77.0 * 1.3)

    def test_growth_dilutes_basis(self):
        t = BasisTracker(nominal_basis=100.0, nominal_value=100.0)
        t.grow(1.05, 0.03)
        assert t.nominal_value == pytest.approx(100.0 * 1.05 * 1.03)
        assert t.nominal_basis == pytest.approx(100.0)
        assert t.ratio == pytest.approx(1.0 / (1.05 * 1.03))
        assert t.inflation_index == pytest.approx(1.03)

    def test_average_cost_sale(self):
        t = BasisTracker(nominal_basis=60.0, nominal_value=120.0)
        t.sell(30.0)  # a quarter of the account
        assert t.nominal_basis == pytest.approx(45.0)
        assert t.nominal_value == pytest.approx(90.0)
        assert t.ratio == pytest.approx(0.5)


class TestScenarioGeneration:
    def test_bitwise_reproducibility(self, models):
        a = generate_scenarios(5, UPPER_PROFILE, models, base_seed=99)
        b = generate_scenarios(5, UPPER_PROFILE, models, base_seed=99)
        for s1, s2 in zip(a, b):
            assert s1.death_age == s2.death_age
            assert np.array_equal(s1.market, s2.market)
            assert np.array_equal(s1.treasury, s2.treasury)
            assert np.array_equal(s1.return_brokerage, s2.return_brokerage)

    def test_seed_changes_paths(self, models):
        a = generate_scenarios(1, UPPER_PROFILE, models, base_seed=1)[0]
        b = generate_scenarios(1, UPPER_PROFILE, models, base_seed=2)[0]
        assert not np.array_equal(a.market, b.market)

    def test_degenerate_models_identical_paths_variable_death(self):
        models = default_models(0.15)
        models = dataclasses.replace(
            models,
            gmm=mk.GaussianMixture(weights=(1.0,), means=(0.08,), std_devs=(0.0,)),
            var=mk.VARModel(
                mean=models.var.mean,
                coefficient=models.var.coefficient,
                noise_cov=np.zeros((2, 2)),
            ),
        )
        scens = generate_scenarios(
            6, UPPER_PROFILE, models, base_seed=5, initial_rates=(0.058, 0.029)
        )
        ref = scens[0]
        assert len({s.death_age for s in scens}) > 1
        for s in scens[1:]:
            assert np.allclose(s.market, ref.market)
            assert np.allclose(s.return_brokerage, ref.return_brokerage)

    def test_collar_clips_and_self_finances(self, models):
        from rfplan.collar import black_scholes_price

        scens = generate_scenarios(
            3, UPPER_PROFILE, models, base_seed=11, collar_enabled=True, collar_floor=-0.075
        )
        sigma = models.gmm.std
        for s in scens:
            assert s.collar_caps is not None
            clipped = np.clip(s.market, np.minimum(-0.075, s.treasury), s.collar_caps)
            expect = np.maximum(
                1 + 0.6 * clipped + 0.4 * s.treasury - s.inflation, 1e-9
            )
            assert np.allclose(s.return_retirement, expect)
            for y in range(s.years):
                f_y = min(-0.075, s.treasury[y])
                cap = s.collar_caps[y]
                if math.isfinite(cap):
                    put = black_scholes_price("put", 1.0, 1.0 + f_y, s.treasury[y], sigma)
                    call = black_scholes_price("call", 1.0, 1.0 + cap, s.treasury[y], sigma)
                    assert abs(put - call) <= 1e-8

    def test_paths_cover_terminal_age(self, models):
        s = generate_scenarios(1, UPPER_PROFILE, models, base_seed=3)[0]
        assert len(s.market) == 120 - 65 + 1
        assert s.death_age <= 120


class TestTrajectories:
    def test_benchmark_no_tax_flat_returns_declines_by_target(self, models):
        # Zero taxes, unit gross returns, no income: balances fall by the
        # target every year until they run out.
        profile = RetireeProfile(
            name="flat",
            start_age=65,
            sex="female",
            brokerage=60_000.0,
            ira=30_000.0,
            roth=10_000.0,
            ss_monthly=0.0,
            target_consumption=30_000.0,
            ltcg_fixed_rate=0.0,
        )
        models_flat = dataclasses.replace(models, tax_schedule=dataclasses.replace(
            models.tax_schedule) if False else models.tax_schedule)
        # zero-tax schedule
        from rfplan.tax import TaxSchedule

        models_flat = dataclasses.replace(
            models,
            tax_schedule=TaxSchedule(
                bracket_edges=(),
                marginal_rates=(0.0,),
                ltcg_fixed_rate=0.0,
                ltcg_brackets=((math.inf, 0.0),),
            ),
        )
        scen = generate_scenarios(1, profile, models_flat, base_seed=8)[0]
        scen.return_brokerage[:] = 1.0
        scen.return_retirement[:] = 1.0
        scen.inflation[:] = 0.0
        scen.death_age = 70
        rep = run_trajectory("benchmark", scen, profile, models_flat)
        totals = [r["brokerage_start"] + r["ira_start"] + r["roth_start"] for r in rep.records]
        assert totals[0] == pytest.approx(100_000.0)
        for a, b in zip(totals[:3], totals[1:4]):
            assert a - b == pytest.approx(30_000.0, abs=1.5)
        # Year 4 starts with only 10k: depletion consumes the remainder.
        assert totals[3] == pytest.approx(10_000.0, abs=5.0)
        assert rep.records[3]["consumption"] == pytest.approx(totals[3], abs=1.5)
        assert totals[4] == pytest.approx(0.0, abs=1e-6)
        assert rep.depleted

    def test_depleted_trajectory_consumes_income(self, models):
        profile = RetireeProfile(
            name="poor",
            start_age=65,
            sex="male",
            brokerage=5_000.0,
            ira=0.0,
            roth=0.0,
            ss_monthly=1_000.0,
            ss_start_age=65,
            target_consumption=40_000.0,
            ltcg_fixed_rate=0.0,
        )
        scen = generate_scenarios(1, profile, models, base_seed=4)[0]
        scen.death_age = 75
        rep = run_trajectory("benchmark", scen, profile, models)
        assert rep.depleted
        last = rep.records[-1]
        # Balances exhausted: consumption equals post-tax income.
        assert last["brokerage_start"] + last["ira_start"] + last["roth_start"] < 1.0
        assert last["consumption"] == pytest.approx(12_000.0 - last["exact_tax"], abs=1.0)
        assert rep.bequest >= 0.0 or rep.final_liability > 0

    def test_wealth_conservation_both_policies(self, models):
        profile = dataclasses.replace(UPPER_PROFILE)
        scens = generate_scenarios(3, profile, models, base_seed=21)
        for scen in scens:
            for policy in ("mpc", "benchmark"):
                rep = run_trajectory(policy, scen, profile, models)
                assert wealth_conservation_gap(rep, profile) <= 1e-6
                for rec in rep.records:
                    assert rec["brokerage_start"] >= 0
                    assert rec["ira_start"] >= 0
                    assert rec["roth_start"] >= 0

    def test_rmd_compliance_in_simulation(self, models):
        profile = dataclasses.replace(UPPER_PROFILE)
        scen = generate_scenarios(1, profile, models, base_seed=31)[0]
        scen.death_age = max(scen.death_age, 85)
        for policy in ("mpc", "benchmark"):
            rep = run_trajectory(policy, scen, profile, models)
            for rec in rep.records:
                if rec["age"] >= 73:
                    kappa = 1.0 / models.rmd_schedule.divisor_by_age[rec["age"]]
                    assert rec["ira_withdrawal"] >= kappa * rec["ira_start"] - 1e-6

    def test_unknown_policy(self, models):
        scen = generate_scenarios(1, UPPER_PROFILE, models, base_seed=1)[0]
        with pytest.raises(ValueError):
            run_trajectory("martingale", scen, UPPER_PROFILE, models)


class TestAggregate:
    def _fake_report(self, sid, bequest, consumption, death=85):
        from rfplan.simulate import SimulationReport

        return SimulationReport(
            scenario_id=sid,
            death_age=death,
            records=[{"age": 65, **{f: 0.0 for f in (
                "consumption", "exact_tax", "ira_conversion", "action_brokerage",
                "net_ira", "net_roth", "brokerage_start", "ira_start", "roth_start")}}],
            bequest=bequest,
            total_consumption=consumption,
            depleted=False,
            shortfall_years=0,
            final_liability=0.0,
        )

    def test_identical_reports_give_unit_ratios(self):
        a = [self._fake_report(i, 100_000.0 + i, 50_000.0) for i in range(4)]
        b = [self._fake_report(i, 100_000.0 + i, 50_000.0) for i in range(4)]
        agg = aggregate(a, b)
        assert agg["relative_bequest"]["p50"] == pytest.approx(1.0)
        assert agg["fraction_mpc_bequest_larger"] == 0.0
        assert agg["fraction_consumption_differs"] == 0.0

    def test_zero_benchmark_bequest_handling(self):
        mpc = [self._fake_report(0, 50_000.0, 10.0), self._fake_report(1, 80_000.0, 10.0)]
        bench = [self._fake_report(0, 0.0, 10.0), self._fake_report(1, 40_000.0, 10.0)]
        agg = aggregate(mpc, bench)
        assert agg["relative_bequest"]["n_infinite"] == 1
        assert agg["relative_bequest"]["max"] == pytest.approx(2.0)  # finite only
        assert agg["fraction_mpc_bequest_larger"] == 1.0

    def test_unpaired_rejected(self):
        with pytest.raises(ValueError):
            aggregate([self._fake_report(0, 1.0, 1.0)], [self._fake_report(1, 1.0, 1.0)])

    def test_summary_file(self, tmp_path):
        a = [self._fake_report(i, 100.0, 50.0) for i in range(3)]
        path = tmp_path / "summary.csv"
        write_scenario_summary(path, a, a)
        lines = path.read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("scenario,death_age")
