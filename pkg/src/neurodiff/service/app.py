"""HTTP front for the solvers, gradient backends, and experiment runners.

Every route delegates to the library; nothing numerical lives here. Errors
split into two kinds so clients can tell a bad request from a solver that
gave up: configuration problems come back as 400 (404 for unknown names)
with ``kind: config-error``, runtime integration failures as 500 with
``kind: solver-error``.
"""

import json
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..autodiff import value
from ..core_ode import SolverOptions, solve_erk45
from ..dde import solve_dde_mos
from ..errors import (AdjointUnsupported, ConfigError, HistoryQueryAhead,
                      SolveFailure, TrainingDiverged)
from ..experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from ..sensitivity import (GradientRequest, LossSpec, canonical_backend,
                           evaluate_gradient)
from ..stiff_ode import solve_rosenbrock
from ..systems import (cubic_spiral_problem, delay_lotka_problem,
                       exp_growth_problem, lorenz_problem, lotka_problem,
                       rober_problem)
from .schemas import (AssertionReport, ExperimentListResponse,
                      ExperimentReport, ExperimentRequest, GradientRequestBody,
                      GradientResponse, HealthResponse, SolveRequest,
                      SolveResponse, SolveStatsReport)

# name -> (problem factory, solver suited to its character)
SYSTEMS = {
    "lotka": (lotka_problem, solve_erk45),
    "lorenz": (lorenz_problem, solve_erk45),
    "exp-growth": (exp_growth_problem, solve_erk45),
    "cubic-spiral": (cubic_spiral_problem, solve_erk45),
    "rober": (rober_problem, solve_rosenbrock),
    "delay-lotka": (delay_lotka_problem, solve_dde_mos),
}


def _problem_for(system: str, params):
    if system not in SYSTEMS:
        known = ", ".join(sorted(SYSTEMS))
        raise HTTPException(404, detail=f"unknown system {system!r}; known: {known}")
    factory, solver = SYSTEMS[system]
    problem = factory()
    if params is not None:
        have = np.atleast_1d(np.asarray(problem.params))
        if len(params) != have.size:
            raise ConfigError(
                f"{system} takes {have.size} parameters, got {len(params)}")
        problem = problem.with_params(np.asarray(params, dtype=float))
    return problem, solver


def create_app() -> FastAPI:
    app = FastAPI(title="neurodiff", version=__version__)

    @app.exception_handler(ConfigError)
    async def _config_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc), "kind": "config-error"})

    @app.exception_handler(AdjointUnsupported)
    async def _adjoint_unsupported(request, exc):
        return JSONResponse(status_code=400,
                            content={"detail": str(exc), "kind": "config-error"})

    async def _solver_error(request, exc):
        return JSONResponse(status_code=500,
                            content={"detail": str(exc), "kind": "solver-error"})

    for cls in (SolveFailure, TrainingDiverged, HistoryQueryAhead):
        app.add_exception_handler(cls, _solver_error)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/experiments", response_model=ExperimentListResponse)
    def list_experiments():
        return ExperimentListResponse(experiments=sorted(EXPERIMENTS))

    @app.post("/experiments/{experiment_id}", response_model=ExperimentReport)
    def run_one(experiment_id: str, req: Optional[ExperimentRequest] = None):
        if experiment_id not in EXPERIMENTS:
            known = ", ".join(sorted(EXPERIMENTS))
            raise HTTPException(
                404, detail=f"unknown experiment {experiment_id!r}; known: {known}")
        cfg = ExperimentConfig(**(req.model_dump() if req is not None else {}))
        result = run_experiment(experiment_id, cfg)
        body = json.loads(result.summary_json())
        summary = {k: v for k, v in body.items()
                   if k not in ("experiment", "passed", "assertions")}
        return ExperimentReport(
            experiment=result.experiment,
            passed=result.passed,
            assertions=[AssertionReport(name=a.name, passed=a.passed, detail=a.detail)
                        for a in result.assertions],
            summary=summary,
            artifacts=result.artifacts,
        )

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest):
        problem, solver = _problem_for(req.system, req.params)
        opts = SolverOptions(reltol=req.reltol, abstol=req.abstol, saveat=req.saveat)
        path = solver(problem, opts)
        return SolveResponse(
            system=req.system,
            retcode=path.retcode.value,
            t=[float(t) for t in path.t],
            u=[np.asarray(value(u)).tolist() for u in path.u],
            stats=SolveStatsReport(n_accepted=path.stats.n_accepted,
                                   n_rejected=path.stats.n_rejected,
                                   n_rhs_evals=path.stats.n_rhs_evals),
        )

    @app.post("/gradient", response_model=GradientResponse)
    def gradient(req: GradientRequestBody):
        problem, _ = _problem_for(req.system, req.params)
        data = None
        if req.loss.data is not None:
            data = np.asarray(req.loss.data, dtype=float)
        loss = LossSpec(req.loss.kind, saveat=req.loss.saveat,
                        component=req.loss.component, data=data)
        opts = SolverOptions(reltol=req.reltol, abstol=req.abstol)
        val, g = evaluate_gradient(
            GradientRequest(req.backend, problem, opts, loss, chunk=req.chunk))
        return GradientResponse(
            system=req.system,
            backend=canonical_backend(req.backend),
            loss=float(val),
            gradient=np.asarray(g).tolist(),
        )

    return app


app = create_app()
