"""Tax-aware retirement funding: planning, yearly MPC policy, and simulation."""

from .benchmark import BenchmarkConfig, benchmark_step, benchmark_target
from .collar import black_scholes_price, collar_floor, collared_return, solve_cap
from .lifetable import LifeTable, expected_remaining, load_life_table, planning_horizon, sample_death_year
from .lp import LPSolution, StandardFormLP, solve_lp, validate_solution
from .markets import (
    GaussianMixture,
    PWLTransform,
    PortfolioSpec,
    VARModel,
    fit_gmm,
    fit_var,
    forecast_var,
    inverse_transform,
    portfolio_real_return,
    sample_market_returns,
    simulate_var,
    steady_state_cov,
    transform_inflation,
)
from .mpc import PolicyConfig, RetireeState, YearlyAction, mpc_step, settle_year
from .planner import Plan, PlanInputs, build_lp, solve_plan, verify_plan
from .profiles import RetireeProfile, RunConfig, default_models, load_profile, make_policy_config
from .simulate import (
    BasisTracker,
    Scenario,
    SimulationReport,
    aggregate,
    generate_scenarios,
    run_many,
    run_trajectory,
)
from .tax import (
    RMDSchedule,
    TaxSchedule,
    exact_capital_gains_tax,
    income_tax,
    income_tax_epigraph,
    rmd_fraction,
)

__version__ = "0.1.0"
