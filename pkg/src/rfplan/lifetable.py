"""Actuarial life tables: expectancy, death sampling, and the planning horizon.

A table holds one-year death probabilities q by age for each sex, with
q = 1 at the terminal age.  Expected remaining lifetime follows the
curtate formula e_x = sum_{k>=1} prod_{j<k} (1 - q_{x+j-1}); the horizon
rule inflates it by a conservatism factor and caps at a maximum age.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class LifeTableError(ValueError):
    pass


@dataclass(frozen=True)
class LifeTable:
    sex: str  # "female" | "male"
    death_prob_by_age: dict[int, float]
    expected_remaining_by_age: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.sex not in ("female", "male"):
            raise LifeTableError("sex must be 'female' or 'male'")
        ages = sorted(self.death_prob_by_age)
        if not ages:
            raise LifeTableError("empty life table")
        if any(b - a != 1 for a, b in zip(ages, ages[1:])):
            raise LifeTableError("table ages must be contiguous")
        if any(not (0 <= q <= 1) for q in self.death_prob_by_age.values()):
            raise LifeTableError("death probabilities must lie in [0, 1]")
        if self.death_prob_by_age[ages[-1]] != 1.0:
            raise LifeTableError("terminal age must have death probability 1")

    @property
    def min_age(self) -> int:
        return min(self.death_prob_by_age)

    @property
    def terminal_age(self) -> int:
        return max(self.death_prob_by_age)

    def q(self, age: int) -> float:
        try:
            return self.death_prob_by_age[age]
        except KeyError:
            raise LifeTableError(f"age {age} outside life table range") from None


def expected_remaining(age: int, table: LifeTable) -> float:
    """Curtate expected remaining lifetime at ``age`` in years."""
    if age < table.min_age or age > table.terminal_age:
        raise LifeTableError(f"age {age} outside life table range")
    if table.expected_remaining_by_age and age in table.expected_remaining_by_age:
        return table.expected_remaining_by_age[age]
    return _curtate_expectancy(age, table)


def _curtate_expectancy(age: int, table: LifeTable) -> float:
    total = 0.0
    surv = 1.0
    for x in range(age, table.terminal_age + 1):
        surv *= 1.0 - table.q(x)
        if surv == 0.0:
            break
        total += surv
    return total


def planning_horizon(
    age: int, table: LifeTable, inflation_factor: float = 1.5, max_age: int = 120
) -> int:
    """Conservative horizon: the inflated expectancy, capped at ``max_age``.

    Rounds the inflated expectancy to the nearest whole year (ties up) and
    never returns less than one year.
    """
    if inflation_factor < 1:
        raise LifeTableError("inflation_factor must be >= 1")
    e = expected_remaining(age, table)
    inflated = math.floor(inflation_factor * e + 0.5)
    return max(min(inflated, max_age - age), 1)


def sample_death_year(age: int, table: LifeTable, rng) -> int:
    """Sample the age at death for someone currently alive at ``age``.

    Scans forward one year at a time from the next year: the retiree
    survives the current year by assumption, then dies in year d with
    probability q_d given survival so far.  The result lies in
    (age, terminal age]; with a seed or Generator argument the draw is
    reproducible.
    """
    if age < table.min_age or age > table.terminal_age:
        raise LifeTableError(f"age {age} outside life table range")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    for d in range(age + 1, table.terminal_age + 1):
        if rng.random() < table.q(d):
            return d
    return table.terminal_age


def load_life_table(path=None, sex: str = "female") -> LifeTable:
    """Load a life table from delimited text.

    Columns: age, q_female, q_male, and optionally e_female, e_male.
    Defaults to the bundled table (a smooth Gompertz fit anchored to
    SSA-style period expectancies).
    """
    if path is None:
        path = resources.files("rfplan.data") / "life_table.csv"
    qcol = 1 if sex == "female" else 2
    ecol = 3 if sex == "female" else 4
    death, expect = {}, {}
    with open(path) as fh:
        header = fh.readline()
        if not header.lower().lstrip("#").strip().startswith("age"):
            raise LifeTableError(f"life table {path} missing header row")
        for line in fh:
            parts = line.replace(",", " ").split()
            if not parts:
                continue
            age = int(parts[0])
            death[age] = float(parts[qcol])
            if len(parts) > ecol:
                expect[age] = float(parts[ecol])
    return LifeTable(sex=sex, death_prob_by_age=death, expected_remaining_by_age=expect)
