"""HTTP service exposing plan and simulate to the companion UI.

Stateless JSON-over-HTTP: each request carries a full profile, responses
echo the resolved configuration and return per-year arrays ready for
charting.  Simulations run synchronously under a configurable scenario
cap; a saturation guard returns 429 rather than queueing.
"""

from __future__ import annotations

import math
import os
import threading
from typing import Literal

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field, model_validator

from .mpc import build_plan_inputs
from .planner import InfeasiblePlanError, plan_to_dict, solve_plan
from .profiles import RetireeProfile, default_models, make_policy_config
from .simulate import aggregate, generate_scenarios, initial_state, run_many

DEFAULT_SIMULATE_CAP = 2000


class ProfileBody(BaseModel):
    age: int = Field(ge=0, le=119)
    sex: Literal["female", "male"] = "female"
    brokerage: float = Field(ge=0)
    ira: float = Field(ge=0)
    roth: float = Field(ge=0)
    basis_ratio: float = Field(default=1.0, ge=0)
    ss_monthly: float = Field(default=0.0, ge=0)
    ss_start_age: int = Field(default=70, ge=0)
    target_consumption: float = Field(ge=0)
    shortfall_weight: float = Field(default=500.0, gt=0)
    ltcg_fixed_rate: float = Field(default=0.15, ge=0, lt=1)
    liabilities: dict[int, float] = Field(default_factory=dict)

    def to_profile(self) -> RetireeProfile:
        return RetireeProfile(
            name="request",
            start_age=self.age,
            sex=self.sex,
            brokerage=self.brokerage,
            ira=self.ira,
            roth=self.roth,
            basis_ratio=self.basis_ratio,
            ss_monthly=self.ss_monthly,
            ss_start_age=self.ss_start_age,
            target_consumption=self.target_consumption,
            shortfall_weight=self.shortfall_weight,
            ltcg_fixed_rate=self.ltcg_fixed_rate,
            liability_schedule=dict(self.liabilities),
        )


class PlanRequest(BaseModel):
    profile: ProfileBody
    forecast_mode: Literal["fixed", "var"] = "fixed"


class SimulateRequest(BaseModel):
    profile: ProfileBody
    n_scenarios: int = Field(default=200, ge=1)
    seed: int = 2024
    collar: bool = False
    collar_floor: float = -0.075

    @model_validator(mode="after")
    def _under_cap(self):
        if self.n_scenarios > DEFAULT_SIMULATE_CAP:
            raise ValueError(f"n_scenarios exceeds the cap of {DEFAULT_SIMULATE_CAP}")
        return self


def _sanitize(obj):
    """Replace non-finite floats with None for strict-JSON clients."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def create_app(simulate_cap: int = DEFAULT_SIMULATE_CAP, ui_origin: str = "http://localhost:5173") -> FastAPI:
    app = FastAPI(title="rfplan", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[ui_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    busy = threading.Semaphore(1)
    state = {"degraded": False}

    @app.get("/health")
    def health():
        running = not busy.acquire(blocking=False)
        if not running:
            busy.release()
        status = "degraded" if state["degraded"] else "ok"
        return {"status": status, "busy": running}

    @app.post("/plan")
    def plan(req: PlanRequest):
        profile = req.profile.to_profile()
        models = default_models(ltcg_fixed_rate=profile.ltcg_fixed_rate)
        config = make_policy_config(profile, models, forecast_mode=req.forecast_mode)
        scenario_free_state = initial_state(profile, _dummy_scenario(profile))
        inputs = build_plan_inputs(scenario_free_state, config)
        try:
            result = solve_plan(inputs)
        except InfeasiblePlanError as exc:
            raise HTTPException(
                status_code=409,
                detail={"message": "planning problem is infeasible", "year": exc.year},
            ) from exc
        body = plan_to_dict(result)
        body.pop("solve_time")  # wall time would break identical-payload semantics
        body["horizon"] = inputs.horizon
        body["start_age"] = profile.start_age
        body["ages"] = list(range(profile.start_age, profile.start_age + inputs.horizon + 1))
        body["resolved"] = req.model_dump()
        return _sanitize(body)

    @app.post("/simulate")
    def simulate(req: SimulateRequest):
        if req.n_scenarios > simulate_cap:
            raise HTTPException(status_code=422, detail="scenario count exceeds cap")
        if not busy.acquire(blocking=False):
            raise HTTPException(status_code=429, detail="a simulation is already running")
        try:
            profile = req.profile.to_profile()
            models = default_models(ltcg_fixed_rate=profile.ltcg_fixed_rate)
            scenarios = generate_scenarios(
                req.n_scenarios,
                profile,
                models,
                base_seed=req.seed,
                collar_enabled=req.collar,
                collar_floor=req.collar_floor,
            )
            config = make_policy_config(profile, models, collared_forecasts=req.collar)
            n_jobs = min(2, os.cpu_count() or 1) if req.n_scenarios >= 50 else 1
            mpc_reports = run_many("mpc", scenarios, profile, models, config, n_jobs=n_jobs)
            bench_reports = run_many("benchmark", scenarios, profile, models)
            metrics = aggregate(mpc_reports, bench_reports, profile.target_consumption)
            metrics["resolved"] = req.model_dump()
            return _sanitize(metrics)
        except Exception:
            state["degraded"] = True
            raise
        finally:
            busy.release()

    return app


def _dummy_scenario(profile: RetireeProfile):
    from .simulate import Scenario

    return Scenario(
        index=-1,
        start_age=profile.start_age,
        death_age=profile.start_age,
        market=np.zeros(1),
        treasury=np.zeros(1),
        inflation=np.zeros(1),
        return_brokerage=np.ones(1),
        return_retirement=np.ones(1),
        initial_rates=(0.058, 0.029),
    )


app = create_app()
