import math

import numpy as np
import pytest

from rfplan.tax import TaxSchedule
from rfplan.profiles import default_models


@pytest.fixture(scope="session")
def table4():
    """2024 single-filer schedule with the 15% planner capital-gains rate."""
    return TaxSchedule(ltcg_fixed_rate=0.15)


@pytest.fixture(scope="session")
def zero_tax():
    return TaxSchedule(
        bracket_edges=(),
        marginal_rates=(0.0,),
        ltcg_fixed_rate=0.0,
        ltcg_brackets=((math.inf, 0.0),),
    )


@pytest.fixture(scope="session")
def flat_cg_models():
    """Bundled models but with a single flat capital-gains bracket at 15%."""
    models = default_models(ltcg_fixed_rate=0.15)
    models.tax_schedule = TaxSchedule(
        bracket_edges=models.tax_schedule.bracket_edges,
        marginal_rates=models.tax_schedule.marginal_rates,
        ltcg_fixed_rate=0.15,
        ltcg_brackets=((math.inf, 0.15),),
    )
    return models


@pytest.fixture(scope="session")
def models_upper():
    return default_models(ltcg_fixed_rate=0.15)


@pytest.fixture(scope="session")
def models_lower():
    return default_models(ltcg_fixed_rate=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def random_feasible_inputs(rng, schedule):
    """Randomized planning instances in documented ranges.

    Balances up to $1M, gross returns 0.95-1.12, incomes up to $60k,
    liabilities small relative to wealth so draws stay feasible, RMD
    fractions from plausible divisors at ages 60-99.
    """
    from rfplan.planner import PlanInputs

    t = int(rng.integers(1, 21))
    ages = 60 + rng.integers(0, 40)
    kappa = np.where(
        np.arange(ages, ages + t) >= 73,
        1.0 / rng.uniform(10.0, 27.0, t),
        0.0,
    )
    return PlanInputs(
        horizon=t,
        balance_brokerage=float(rng.uniform(0, 1e6)),
        balance_ira=float(rng.uniform(0, 1e6)),
        balance_roth=float(rng.uniform(0, 5e5)),
        basis_ratio=float(rng.uniform(0.0, 1.2)),
        returns_brokerage=rng.uniform(0.95, 1.12, t),
        returns_ira=rng.uniform(0.95, 1.12, t),
        returns_roth=rng.uniform(0.95, 1.12, t),
        earned_income=np.where(rng.random(t) < 0.3, rng.uniform(0, 2e4, t), 0.0),
        additional_income=np.where(rng.random(t) < 0.5, rng.uniform(0, 6e4, t), 0.0),
        liabilities=rng.uniform(-1e4, 2e4, t),
        rmd_fractions=kappa,
        tax_schedule=schedule,
        deposit_limit=8_000.0,
        target_consumption=float(rng.uniform(1e4, 1e5)),
        shortfall_weight=500.0,
    )
