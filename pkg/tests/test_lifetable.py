import numpy as np
import pytest

from rfplan.lifetable import (
    LifeTable,
    LifeTableError,
    expected_remaining,
    load_life_table,
    planning_horizon,
    sample_death_year,
)


def synthetic(qmap, sex="female"):
    return LifeTable(sex=sex, death_prob_by_age=qmap)


def certain_death_at(age, lo=60, hi=None):
    hi = hi if hi is not None else age
    q = {a: 0.0 for a in range(lo, hi + 1)}
    q[hi] = 1.0
    q[age] = 1.0
    return synthetic(q)


@pytest.fixture(scope="module")
def female():
    return load_life_table(sex="female")


@pytest.fixture(scope="module")
def male():
    return load_life_table(sex="male")


class TestExpectedRemaining:
    def test_certain_death_now(self):
        table = synthetic({60: 0.0, 61: 1.0})
        assert expected_remaining(61, table) == 0.0

    def test_uniform_death_at_90(self):
        q = {a: 0.0 for a in range(80, 90)}
        q[90] = 1.0
        assert expected_remaining(80, synthetic(q)) == pytest.approx(10.0)

    def test_ingested_expectancy_consistent_with_derived(self, female, male):
        for table in (female, male):
            for age in range(table.min_age, 110):
                derived = sum(
                    np.prod([1 - table.q(age + j) for j in range(k)])
                    for k in range(1, table.terminal_age - age + 2)
                )
                assert table.expected_remaining_by_age[age] == pytest.approx(
                    derived, abs=1e-9
                )

    def test_out_of_range(self, female):
        with pytest.raises(LifeTableError):
            expected_remaining(10, female)


class TestPlanningHorizon:
    def test_paper_example(self, female):
        # 65-year-old with 20 years expected: plan 30 years, to age 95.
        assert expected_remaining(65, female) == pytest.approx(20.0, abs=1e-6)
        assert planning_horizon(65, female) == 30

    def test_max_age_cap(self):
        q = {a: 0.0 for a in range(110, 120)}
        q[120] = 1.0
        table = synthetic(q)
        assert planning_horizon(115, table, inflation_factor=1.5, max_age=120) == 5

    def test_identity_factor(self, female):
        assert planning_horizon(65, female, inflation_factor=1.0) == 20

    def test_at_least_one_year(self):
        table = synthetic({119: 0.0, 120: 1.0})
        assert planning_horizon(120, table) == 1

    def test_nonincreasing_in_age(self, female):
        horizons = [planning_horizon(a, female) for a in range(60, 110)]
        assert all(b <= a for a, b in zip(horizons, horizons[1:]))

    def test_bad_factor(self, female):
        with pytest.raises(LifeTableError):
            planning_horizon(65, female, inflation_factor=0.5)


class TestSampleDeath:
    def test_certain_death_age(self):
        q = {a: 0.0 for a in range(60, 90)}
        q[80] = 1.0
        q[89] = 1.0
        table = synthetic(q)
        rng = np.random.default_rng(1)
        assert all(sample_death_year(65, table, rng) == 80 for _ in range(20))

    def test_zero_hazard_until_terminal(self):
        q = {a: 0.0 for a in range(60, 90)}
        q[89] = 1.0
        table = synthetic(q)
        assert sample_death_year(60, table, 7) == 89

    def test_result_strictly_after_current_age(self, female):
        rng = np.random.default_rng(3)
        draws = [sample_death_year(100, female, rng) for _ in range(500)]
        assert min(draws) > 100
        assert max(draws) <= female.terminal_age

    def test_constant_hazard_mean(self):
        # Geometric with q = 1/2 on the years after the current one: the mean
        # number of remaining years is 1/q = 2.
        q = {a: 0.5 for a in range(65, 121)}
        q[120] = 1.0
        table = synthetic(q)
        rng = np.random.default_rng(99)
        draws = np.array([sample_death_year(65, table, rng) for _ in range(100_000)])
        assert (draws - 65).mean() == pytest.approx(2.0, abs=0.05)

    def test_monte_carlo_mean_matches_distribution(self, female):
        # The sampler draws hazards from the year after the current age, so
        # its analytic mean is one year plus the curtate expectancy at the
        # next age; check the sample mean against that within 3 standard
        # errors.  (The curtate expectancy at the current age differs from
        # this by q_age * (1 + e_{age+1}): a boundary-convention offset.)
        age = 65
        analytic = 1.0 + expected_remaining(age + 1, female)
        rng = np.random.default_rng(5)
        draws = np.array([sample_death_year(age, female, rng) - age for _ in range(100_000)])
        se = draws.std() / np.sqrt(len(draws))
        assert abs(draws.mean() - analytic) <= 3 * se
        assert abs(analytic - expected_remaining(age, female)) < 0.5

    def test_seed_reproducibility(self, female):
        a = [sample_death_year(65, female, np.random.default_rng(42)) for _ in range(10)]
        b = [sample_death_year(65, female, np.random.default_rng(42)) for _ in range(10)]
        assert a == b


class TestIngest:
    def test_table_invariants(self, female, male):
        for t in (female, male):
            assert t.q(t.terminal_age) == 1.0
            assert t.min_age == 50
            assert all(0 <= t.q(a) <= 1 for a in range(t.min_age, t.terminal_age + 1))

    def test_male_shorter_lived(self, female, male):
        assert expected_remaining(65, male) < expected_remaining(65, female)

    def test_missing_header_rejected(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("65,0.01,0.02\n")
        with pytest.raises(LifeTableError):
            load_life_table(p)

    def test_bad_tables_rejected(self):
        with pytest.raises(LifeTableError):
            synthetic({60: 0.5, 62: 1.0})  # gap
        with pytest.raises(LifeTableError):
            synthetic({60: 0.5, 61: 0.5})  # terminal not certain
        with pytest.raises(LifeTableError):
            LifeTable(sex="other", death_prob_by_age={60: 1.0})
