"""Sparse standard-form linear programs and a solver adapter.

Problems are posed as: maximize c'x subject to A x = b, G x <= h, and
elementwise variable bounds.  The default backend is scipy's HiGHS
solver; any backend implementing :class:`SolverBackend` can be swapped
in without touching the callers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

DEFAULT_TOLERANCE = 1e-8


class LPError(ValueError):
    pass


@dataclass
class StandardFormLP:
    """maximize objective @ x  s.t.  eq_matrix x = eq_rhs, ineq_matrix x <= ineq_rhs."""

    objective: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    ineq_matrix: sp.csr_matrix
    ineq_rhs: np.ndarray
    lower_bounds: np.ndarray
    upper_bounds: np.ndarray
    variable_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.objective)
        if self.eq_matrix.shape[1] != n or self.ineq_matrix.shape[1] != n:
            raise LPError("matrix column counts must equal objective length")
        if self.eq_matrix.shape[0] != len(self.eq_rhs):
            raise LPError("eq_rhs length must equal equality row count")
        if self.ineq_matrix.shape[0] != len(self.ineq_rhs):
            raise LPError("ineq_rhs length must equal inequality row count")
        if len(self.lower_bounds) != n or len(self.upper_bounds) != n:
            raise LPError("bound vectors must match objective length")
        if np.any(self.lower_bounds > self.upper_bounds):
            raise LPError("lower bound exceeds upper bound")

    @property
    def n_variables(self) -> int:
        return len(self.objective)


@dataclass
class LPSolution:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    primal: np.ndarray | None
    objective_value: float
    max_eq_residual: float
    max_ineq_violation: float
    solve_time: float


class SolverBackend(Protocol):
    def solve(self, lp: StandardFormLP, tolerance: float) -> LPSolution: ...


class HighsBackend:
    """Adapter to scipy's HiGHS dual simplex / interior point solver."""

    def solve(self, lp: StandardFormLP, tolerance: float) -> LPSolution:
        start = time.perf_counter()
        bounds = np.column_stack([lp.lower_bounds, lp.upper_bounds])
        res = linprog(
            -lp.objective,
            A_ub=lp.ineq_matrix if lp.ineq_matrix.shape[0] else None,
            b_ub=lp.ineq_rhs if lp.ineq_matrix.shape[0] else None,
            A_eq=lp.eq_matrix if lp.eq_matrix.shape[0] else None,
            b_eq=lp.eq_rhs if lp.eq_matrix.shape[0] else None,
            bounds=bounds,
            method="highs",
            options={
                "primal_feasibility_tolerance": tolerance,
                "dual_feasibility_tolerance": tolerance,
            },
        )
        elapsed = time.perf_counter() - start
        status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(
            res.status, "numerical_failure"
        )
        if status != "optimal":
            return LPSolution(status, None, np.nan, np.inf, np.inf, elapsed)
        x = np.asarray(res.x)
        eq_res, ineq_viol, _ = residuals(lp, x)
        return LPSolution("optimal", x, float(lp.objective @ x), eq_res, ineq_viol, elapsed)


def residuals(lp: StandardFormLP, x: np.ndarray) -> tuple[float, float, float]:
    """Max equality residual, inequality violation, and bound violation at x."""
    eq_res = 0.0
    if lp.eq_matrix.shape[0]:
        eq_res = float(np.max(np.abs(lp.eq_matrix @ x - lp.eq_rhs)))
    ineq_viol = 0.0
    if lp.ineq_matrix.shape[0]:
        ineq_viol = float(max(np.max(lp.ineq_matrix @ x - lp.ineq_rhs), 0.0))
    bound_viol = float(
        max(np.max(lp.lower_bounds - x, initial=0.0), np.max(x - lp.upper_bounds, initial=0.0))
    )
    return eq_res, ineq_viol, bound_viol


def solve_lp(
    lp: StandardFormLP,
    tolerance: float = DEFAULT_TOLERANCE,
    backend: SolverBackend | None = None,
) -> LPSolution:
    """Solve the LP, classifying the outcome.

    When the reported status is optimal the primal is feasible to
    1e-6 * (1 + ||rhs||_inf) on each constraint family; anything the
    backend cannot certify is surfaced as ``numerical_failure`` so the
    caller can rescale and retry.
    """
    if tolerance <= 0:
        raise LPError("tolerance must be positive")
    sol = (backend or HighsBackend()).solve(lp, tolerance)
    if sol.status == "optimal":
        eq_ok = sol.max_eq_residual <= 1e-6 * (1 + _inf_norm(lp.eq_rhs))
        ineq_ok = sol.max_ineq_violation <= 1e-6 * (1 + _inf_norm(lp.ineq_rhs))
        if not (eq_ok and ineq_ok):
            return LPSolution(
                "numerical_failure",
                sol.primal,
                sol.objective_value,
                sol.max_eq_residual,
                sol.max_ineq_violation,
                sol.solve_time,
            )
    return sol


def validate_solution(lp: StandardFormLP, sol: LPSolution) -> dict[str, float]:
    """Recompute residuals of an optimal solution independently of the solver."""
    if sol.status != "optimal":
        raise LPError("solution is not optimal")
    eq_res, ineq_viol, bound_viol = residuals(lp, sol.primal)
    return {
        "max_eq_residual": eq_res,
        "max_ineq_violation": ineq_viol,
        "max_bound_violation": bound_viol,
    }


def dump_lp(lp: StandardFormLP, path) -> None:
    """Write the LP to a plain-text debug file.

    Format: an OBJECTIVE section (one coefficient per line), then EQ and
    INEQ sections each headed by ``rows cols nnz`` followed by ``i j v``
    triplet lines and an RHS block, then a BOUNDS section of
    ``lower upper`` pairs.  Infinities print as ``inf``/``-inf``.
    """
    with open(path, "w") as fh:
        fh.write(f"OBJECTIVE {lp.n_variables}\n")
        for v in lp.objective:
            fh.write(f"{float(v)!r}\n")
        for name, mat, rhs in (
            ("EQ", lp.eq_matrix.tocoo(), lp.eq_rhs),
            ("INEQ", lp.ineq_matrix.tocoo(), lp.ineq_rhs),
        ):
            fh.write(f"{name} {mat.shape[0]} {mat.shape[1]} {mat.nnz}\n")
            for i, j, v in zip(mat.row, mat.col, mat.data):
                fh.write(f"{i} {j} {float(v)!r}\n")
            fh.write(f"RHS {len(rhs)}\n")
            for v in rhs:
                fh.write(f"{float(v)!r}\n")
        fh.write(f"BOUNDS {lp.n_variables}\n")
        for lo, hi in zip(lp.lower_bounds, lp.upper_bounds):
            fh.write(f"{float(lo)!r} {float(hi)!r}\n")


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0
