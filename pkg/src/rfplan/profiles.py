"""Retiree profiles and run configuration.

A profile bundles everything that describes one retiree: age, sex,
balances, basis ratio, income schedules, spending target, and tax
choices.  Profiles load from YAML documents; the two bundled ones are
an upper-middle-class and a lower-middle-class retiree at 65.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import yaml

from .lifetable import LifeTable, load_life_table
from .mpc import PolicyConfig
from .tax import RMDSchedule, TaxSchedule, load_rmd_schedule, load_tax_schedule
from . import markets


class ConfigError(ValueError):
    pass


@dataclass
class RetireeProfile:
    name: str
    start_age: int
    sex: str
    brokerage: float
    ira: float
    roth: float
    basis_ratio: float = 1.0
    ss_monthly: float = 0.0
    ss_start_age: int = 70
    target_consumption: float = 0.0
    shortfall_weight: float = 500.0
    ltcg_fixed_rate: float = 0.15
    earned_schedule: dict[int, float] = field(default_factory=dict)
    additional_schedule: dict[int, float] = field(default_factory=dict)
    liability_schedule: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if min(self.brokerage, self.ira, self.roth) < 0:
            raise ConfigError("balances must be nonnegative")
        if self.start_age < 0 or self.target_consumption < 0:
            raise ConfigError("invalid profile values")

    @property
    def total_balance(self) -> float:
        return self.brokerage + self.ira + self.roth

    def earned_by_age(self, age: int) -> float:
        return self.earned_schedule.get(age, 0.0)

    def additional_by_age(self, age: int) -> float:
        ss = 12.0 * self.ss_monthly if age >= self.ss_start_age else 0.0
        return ss + self.additional_schedule.get(age, 0.0)

    def liability_by_age(self, age: int) -> float:
        return self.liability_schedule.get(age, 0.0)


UPPER_PROFILE = RetireeProfile(
    name="upper",
    start_age=65,
    sex="female",
    brokerage=200_000.0,
    ira=400_000.0,
    roth=200_000.0,
    basis_ratio=0.5,
    ss_monthly=3_938.0,
    target_consumption=58_400.0,
    ltcg_fixed_rate=0.15,
)

LOWER_PROFILE = RetireeProfile(
    name="lower",
    start_age=65,
    sex="male",
    brokerage=50_000.0,
    ira=100_000.0,
    roth=0.0,
    basis_ratio=0.5,
    ss_monthly=2_013.0,
    target_consumption=20_100.0,
    ltcg_fixed_rate=0.0,
)

_BUILTIN = {"upper": UPPER_PROFILE, "lower": LOWER_PROFILE}


def load_profile(source) -> RetireeProfile:
    """Load a profile: a builtin name ('upper', 'lower') or a YAML path."""
    if isinstance(source, str) and source in _BUILTIN:
        return _BUILTIN[source]
    try:
        with open(source) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read profile {source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"profile {source} is not a mapping")
    try:
        bal = raw.get("balances", {})
        ss = raw.get("social_security", {})
        return RetireeProfile(
            name=str(raw.get("name", "custom")),
            start_age=int(raw["age"]),
            sex=str(raw.get("sex", "female")),
            brokerage=float(bal.get("brokerage", 0.0)),
            ira=float(bal.get("ira", 0.0)),
            roth=float(bal.get("roth", 0.0)),
            basis_ratio=float(raw.get("basis_ratio", 1.0)),
            ss_monthly=float(ss.get("monthly", 0.0)),
            ss_start_age=int(ss.get("start_age", 70)),
            target_consumption=float(raw["target_consumption"]),
            shortfall_weight=float(raw.get("shortfall_weight", 500.0)),
            ltcg_fixed_rate=float(raw.get("ltcg_fixed_rate", 0.15)),
            earned_schedule={int(k): float(v) for k, v in (raw.get("earned_income") or {}).items()},
            additional_schedule={
                int(k): float(v) for k, v in (raw.get("additional_income") or {}).items()
            },
            liability_schedule={
                int(k): float(v) for k, v in (raw.get("liabilities") or {}).items()
            },
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed profile {source}: {exc}") from exc


@dataclass
class ModelSet:
    """The statistical models and tables one run needs."""

    gmm: markets.GaussianMixture
    var: markets.VARModel
    transform: markets.PWLTransform
    tax_schedule: TaxSchedule
    rmd_schedule: RMDSchedule
    life_table_female: LifeTable
    life_table_male: LifeTable

    def life_table(self, sex: str) -> LifeTable:
        return self.life_table_female if sex == "female" else self.life_table_male


def default_models(ltcg_fixed_rate: float = 0.15, preset_path=None) -> ModelSet:
    """Bundled presets plus the packaged tax, RMD, and life tables."""
    if preset_path is not None:
        gmm, var, transform = markets.load_preset(preset_path)
    else:
        gmm, var, transform = markets.GMM_PRESET, markets.VAR_PRESET, markets.INFLATION_TRANSFORM
    base = load_tax_schedule(resources.files("rfplan.data") / "tax_single_2024.yaml")
    schedule = TaxSchedule(
        bracket_edges=base.bracket_edges,
        marginal_rates=base.marginal_rates,
        ltcg_fixed_rate=ltcg_fixed_rate,
        ltcg_brackets=base.ltcg_brackets,
    )
    return ModelSet(
        gmm=gmm,
        var=var,
        transform=transform,
        tax_schedule=schedule,
        rmd_schedule=load_rmd_schedule(),
        life_table_female=load_life_table(sex="female"),
        life_table_male=load_life_table(sex="male"),
    )


def make_policy_config(
    profile: RetireeProfile,
    models: ModelSet,
    forecast_mode: str = "fixed",
    collared_forecasts: bool = False,
) -> PolicyConfig:
    """Policy configuration for one retiree under the given models."""
    fixed = markets.FIXED_FORECASTS_COLLARED if collared_forecasts else markets.FIXED_FORECASTS
    return PolicyConfig(
        target_consumption=profile.target_consumption,
        shortfall_weight=profile.shortfall_weight,
        tax_schedule=models.tax_schedule,
        rmd_schedule=models.rmd_schedule,
        life_table=models.life_table(profile.sex),
        earned_by_age=profile.earned_by_age,
        additional_by_age=profile.additional_by_age,
        liability_by_age=profile.liability_by_age,
        forecast_mode=forecast_mode,
        forecast_brokerage=fixed["20/80"],
        forecast_retirement=fixed["60/40"],
        var_model=models.var,
        inflation_transform=models.transform,
    )


@dataclass
class RunConfig:
    """One CLI or API run: profile, models, scenario count, seed, outputs."""

    profile: RetireeProfile
    n_scenarios: int = 1000
    base_seed: int = 2024
    forecast_mode: str = "fixed"
    collar: bool = False
    collar_floor: float = -0.075
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ConfigError("scenario count must be >= 1")
        if self.forecast_mode not in ("fixed", "var"):
            raise ConfigError("forecast mode must be 'fixed' or 'var'")
