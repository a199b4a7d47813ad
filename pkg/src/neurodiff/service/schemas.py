"""Request and response bodies for the HTTP service."""

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ExperimentListResponse(BaseModel):
    experiments: List[str]


class ExperimentRequest(BaseModel):
    """Experiment knobs; defaults mirror the library-side config."""

    reltol: float = Field(1e-6, gt=0)
    abstol: float = Field(1e-9, gt=0)
    seed: int = 0
    iters: int = Field(100, ge=1)
    backend: str = "forward"


class AssertionReport(BaseModel):
    name: str
    passed: bool
    detail: str


class ExperimentReport(BaseModel):
    experiment: str
    passed: bool
    assertions: List[AssertionReport]
    summary: dict
    artifacts: Dict[str, str]


class SolveRequest(BaseModel):
    system: str
    params: Optional[List[float]] = None
    reltol: float = Field(1e-6, gt=0)
    abstol: float = Field(1e-9, gt=0)
    saveat: Optional[Union[float, List[float]]] = None


class SolveStatsReport(BaseModel):
    n_accepted: int
    n_rejected: int
    n_rhs_evals: int


class SolveResponse(BaseModel):
    system: str
    retcode: str
    t: List[float]
    u: List[List[float]]
    stats: SolveStatsReport


class LossBody(BaseModel):
    kind: str = "sum_sq_to_one"
    saveat: Optional[Union[float, List[float]]] = None
    component: int = 0
    data: Optional[List[List[float]]] = None


class GradientRequestBody(BaseModel):
    system: str
    backend: str = "forward"
    params: Optional[List[float]] = None
    loss: LossBody = Field(default_factory=LossBody)
    reltol: float = Field(1e-6, gt=0)
    abstol: float = Field(1e-9, gt=0)
    chunk: Optional[int] = Field(None, ge=1)


class GradientResponse(BaseModel):
    system: str
    backend: str
    loss: float
    gradient: List[float]
