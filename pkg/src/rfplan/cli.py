"""Command-line front door: plan, simulate, fit, serve.

Exit codes: 0 success, 1 solver failure, 2 configuration or data error,
3 service error.  All outputs are plain delimited or YAML files; money
prints in whole dollars.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import markets
from .mpc import build_plan_inputs
from .planner import InfeasiblePlanError, PlannerError, export_plan_csv, solve_plan
from .profiles import ConfigError, default_models, load_profile, make_policy_config
from .simulate import (
    aggregate,
    generate_scenarios,
    initial_state,
    run_many,
    write_ecdf,
    write_per_year,
    write_scenario_summary,
)

EXIT_SOLVER = 1
EXIT_CONFIG = 2
EXIT_SERVICE = 3


@click.group()
def main():
    """Retirement funding planner and policy simulator."""


@main.command("plan")
@click.option("--profile", "profile_src", required=True, help="Builtin name (upper, lower) or YAML path.")
@click.option("--forecast-mode", type=click.Choice(["fixed", "var"]), default="fixed", show_default=True)
@click.option("--out", "out_dir", default=".", show_default=True, help="Output directory.")
def cmd_plan(profile_src, forecast_mode, out_dir):
    """Solve one planning instance and write the trajectory table."""
    try:
        profile = load_profile(profile_src)
        models = default_models(ltcg_fixed_rate=profile.ltcg_fixed_rate)
        config = make_policy_config(profile, models, forecast_mode=forecast_mode)
        from .simulate import Scenario

        scenario = Scenario(
            index=-1, start_age=profile.start_age, death_age=profile.start_age,
            market=np.zeros(1), treasury=np.zeros(1), inflation=np.zeros(1),
            return_brokerage=np.ones(1), return_retirement=np.ones(1),
            initial_rates=(float(models.var.mean[0]), float(models.var.mean[1])),
        )
        inputs = build_plan_inputs(initial_state(profile, scenario), config)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        plan = solve_plan(inputs)
    except InfeasiblePlanError as exc:
        click.echo(f"infeasible plan (around year {exc.year})", err=True)
        sys.exit(EXIT_SOLVER)
    except PlannerError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"plan_{profile.name}.csv"
    export_plan_csv(plan, path, start_age=profile.start_age)
    click.echo(
        f"consumption ${plan.consumption:,.0f}/yr  bequest ${plan.bequest:,.0f}  "
        f"horizon {inputs.horizon}y  solve {plan.solve_time * 1e3:.1f} ms"
    )
    click.echo(f"wrote {path}")


@main.command("simulate")
@click.option("--profile", "profile_src", required=True)
@click.option("-n", "--scenarios", "n_scenarios", default=1000, show_default=True)
@click.option("--seed", default=2024, show_default=True)
@click.option("--collar/--no-collar", default=False, show_default=True)
@click.option("--collar-floor", default=-0.075, show_default=True)
@click.option("--forecast-mode", type=click.Choice(["fixed", "var"]), default="fixed", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--per-year/--no-per-year", default=False, help="Also write long-format per-year records.")
@click.option("--out", "out_dir", default=".", show_default=True)
def cmd_simulate(profile_src, n_scenarios, seed, collar, collar_floor, forecast_mode,
                 workers, per_year, out_dir):
    """Paired Monte Carlo comparison of the planning policy and the benchmark."""
    try:
        if n_scenarios < 1:
            raise ConfigError("scenario count must be >= 1")
        profile = load_profile(profile_src)
        models = default_models(ltcg_fixed_rate=profile.ltcg_fixed_rate)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scenarios = generate_scenarios(
        n_scenarios, profile, models, base_seed=seed,
        collar_enabled=collar, collar_floor=collar_floor,
    )
    config = make_policy_config(profile, models, forecast_mode=forecast_mode,
                                collared_forecasts=collar)
    try:
        mpc_reports = run_many("mpc", scenarios, profile, models, config, n_jobs=workers)
        bench_reports = run_many("benchmark", scenarios, profile, models)
    except PlannerError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    metrics = aggregate(mpc_reports, bench_reports, profile.target_consumption)

    write_scenario_summary(out / "scenario_summary.csv", mpc_reports, bench_reports)
    write_ecdf(out / "bequest_cdf.csv", metrics["bequest_cdf_mpc"])
    write_ecdf(out / "relative_bequest_cdf.csv", metrics["relative_bequest_cdf"])
    if collar:
        # Comparison arm without the collar for the appendix-style CDFs.
        plain = generate_scenarios(n_scenarios, profile, models, base_seed=seed)
        plain_cfg = make_policy_config(profile, models, forecast_mode=forecast_mode)
        plain_reports = run_many("mpc", plain, profile, models, plain_cfg, n_jobs=workers)
        from .simulate import _ecdf

        write_ecdf(out / "bequest_cdf_collar.csv", metrics["bequest_cdf_mpc"])
        write_ecdf(out / "bequest_cdf_nocollar.csv", _ecdf([r.bequest for r in plain_reports]))
    if per_year:
        write_per_year(out / "per_year_mpc.csv", mpc_reports, "mpc")
        write_per_year(out / "per_year_benchmark.csv", bench_reports, "benchmark")
    summary = {
        k: metrics[k]
        for k in (
            "n_scenarios",
            "relative_bequest",
            "fraction_mpc_bequest_larger",
            "conditional_median_uplift",
            "fraction_consumption_differs",
            "mpc_depleted_fraction",
            "benchmark_depleted_fraction",
            "bequest_mpc",
            "bequest_benchmark",
        )
    }
    with open(out / "metrics.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    rb = metrics["relative_bequest"]
    click.echo(
        "relative bequest  min {:.2f}  p1 {:.2f}  p5 {:.2f}  p50 {:.2f}  p95 {:.2f}  p99 {:.2f}".format(
            rb["min"], rb["p1"], rb["p5"], rb["p50"], rb["p95"], rb["p99"]
        )
    )
    click.echo(
        f"MPC bequest larger in {metrics['fraction_mpc_bequest_larger']:.0%} of scenarios; "
        f"median uplift when larger {metrics['conditional_median_uplift']:.0%}"
    )
    click.echo(f"wrote {out / 'scenario_summary.csv'} and {out / 'metrics.yaml'}")


@main.command("fit")
@click.option("--market", "market_path", type=click.Path(exists=False), default=None,
              help="Delimited (year, market_return) file.")
@click.option("--rates", "rates_path", type=click.Path(exists=False), default=None,
              help="Delimited (year, treasury_rate, inflation_rate) file.")
@click.option("--components", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", default="preset.yaml", show_default=True)
def cmd_fit(market_path, rates_path, components, seed, out_path):
    """Fit the market mixture and the rates VAR from historical files."""
    gmm, var, transform = markets.GMM_PRESET, markets.VAR_PRESET, markets.INFLATION_TRANSFORM
    try:
        if market_path is not None:
            _, returns = markets.load_market_returns(market_path)
            gmm, ll = markets.fit_gmm(returns, components, rng=seed)
            click.echo(f"mixture log-likelihood {ll:.2f}")
            for w, m, s in zip(gmm.weights, gmm.means, gmm.std_devs):
                click.echo(f"  weight {w:.3f}  mean {m:+.3f}  std {s:.3f}")
        if rates_path is not None:
            _, treasury, inflation = markets.load_rate_history(rates_path)
            series = np.column_stack(
                [treasury, markets.transform_inflation(inflation, transform)]
            )
            var = markets.fit_var(series)
            click.echo(f"VAR mean {np.round(var.mean, 4).tolist()}")
            click.echo(f"VAR coefficient {np.round(var.coefficient, 4).tolist()}")
            click.echo(f"VAR noise cov {np.round(var.noise_cov, 8).tolist()}")
    except (OSError, markets.ModelError) as exc:
        click.echo(f"fit error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    markets.save_preset(out_path, gmm, var, transform)
    click.echo(f"wrote {out_path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def cmd_serve(host, port):
    """Run the HTTP API for the companion UI."""
    import signal
    import socket

    import uvicorn

    from .api import create_app

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError:
        click.echo(f"port {port} is already in use", err=True)
        sys.exit(EXIT_SERVICE)
    finally:
        probe.close()
    # uvicorn re-raises the shutdown signal after draining; exit 0 instead.
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    signal.signal(signal.SIGINT, lambda *_: sys.exit(0))
    uvicorn.run(create_app(), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
