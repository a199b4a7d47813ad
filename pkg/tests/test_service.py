"""HTTP service tests, run in process against the ASGI app."""

import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

import neurodiff
from neurodiff.core_ode import OdeProblem, SolverOptions, solve_erk45
from neurodiff.experiments import run_experiment
from neurodiff.service import app as app_module
from neurodiff.service.app import SYSTEMS, create_app

# loss gradient of the prey-tracking objective at p0 = [2.2, 1, 2, 0.4]
LOTKA_P0 = [2.2, 1.0, 2.0, 0.4]
LOTKA_GRAD_REF = np.array(
    [53.49116133, -1732.95292871, 4553.00088538, -29519.81641354])
LOTKA_LOSS_REF = 4324.597950860234


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def blowup_problem():
    """Reaches a singularity at t = 0.5, well before the horizon."""
    return OdeProblem(rhs=lambda u, p, t: u * u, u0=np.array([2.0]),
                      tspan=(0.0, 1.0), params=np.array([1.0]))


class TestHealth:
    def test_reports_ok_and_version(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok", "version": neurodiff.__version__}


class TestExperimentRoutes:
    def test_list_is_sorted_and_complete(self, client):
        r = client.get("/experiments")
        assert r.status_code == 200
        ids = r.json()["experiments"]
        assert ids == sorted(ids)
        assert len(ids) == 8

    def test_run_without_body_uses_defaults(self, client):
        r = client.post("/experiments/lotka-solve")
        assert r.status_code == 200
        body = r.json()
        assert body["experiment"] == "lotka-solve"
        assert body["passed"] is True
        assert {a["name"] for a in body["assertions"]} == {
            "solver-success", "node-count-101",
            "u(0.1)-within-1e-3", "u(10)-within-1e-2"}

    def test_matches_direct_library_call(self, client):
        over_http = client.post("/experiments/lotka-solve").json()
        direct = run_experiment("lotka-solve")
        assert over_http["artifacts"] == direct.artifacts
        assert over_http["summary"]["n_nodes"] == direct.summary["n_nodes"]
        assert over_http["summary"]["u_at_10"] == direct.summary["u_at_10"]

    def test_seed_flows_through(self, client):
        a = client.post("/experiments/sde-demo", json={"seed": 0}).json()
        b = client.post("/experiments/sde-demo", json={"seed": 7}).json()
        assert a["summary"]["gbm_mean"] != b["summary"]["gbm_mean"]

    def test_unknown_id_is_404(self, client):
        r = client.post("/experiments/ghost")
        assert r.status_code == 404
        assert "unknown experiment" in r.json()["detail"]

    def test_bad_backend_is_400_config_error(self, client):
        r = client.post("/experiments/lotka-solve", json={"backend": "psychic"})
        assert r.status_code == 400
        assert r.json()["kind"] == "config-error"

    def test_out_of_range_options_are_422(self, client):
        assert client.post("/experiments/lotka-solve",
                           json={"iters": 0}).status_code == 422
        assert client.post("/experiments/lotka-solve",
                           json={"reltol": -1.0}).status_code == 422


class TestSolveRoute:
    def test_matches_direct_solve_bitwise(self, client):
        r = client.post("/solve", json={"system": "lotka", "saveat": 2.5})
        assert r.status_code == 200
        body = r.json()
        assert body["retcode"] == "Success"
        from neurodiff.systems import lotka_problem
        path = solve_erk45(lotka_problem(),
                           SolverOptions(reltol=1e-6, abstol=1e-9, saveat=2.5))
        assert body["t"] == [float(t) for t in path.t]
        assert body["u"] == [np.asarray(u).tolist() for u in path.u]
        assert body["stats"]["n_accepted"] > 0
        assert body["stats"]["n_rhs_evals"] > body["stats"]["n_accepted"]

    def test_params_override_changes_solution(self, client):
        base = client.post("/solve", json={"system": "lotka", "saveat": 5.0}).json()
        other = client.post("/solve", json={"system": "lotka", "saveat": 5.0,
                                            "params": LOTKA_P0}).json()
        assert base["u"][-1] != other["u"][-1]

    def test_stiff_system_routed_to_rosenbrock(self, client):
        r = client.post("/solve", json={"system": "rober"})
        assert r.status_code == 200
        body = r.json()
        assert body["retcode"] == "Success"
        assert body["t"][-1] == pytest.approx(1e11)

    def test_delay_system_solves(self, client):
        r = client.post("/solve", json={"system": "delay-lotka", "saveat": 1.0})
        assert r.status_code == 200
        assert len(r.json()["t"]) == 11

    def test_unknown_system_is_404(self, client):
        assert client.post("/solve", json={"system": "ghost"}).status_code == 404

    def test_wrong_param_count_is_400(self, client):
        r = client.post("/solve", json={"system": "lotka", "params": [1.0]})
        assert r.status_code == 400
        assert r.json()["kind"] == "config-error"

    def test_failed_solve_reports_retcode(self, client, monkeypatch):
        monkeypatch.setitem(app_module.SYSTEMS, "blowup",
                            (blowup_problem, solve_erk45))
        r = client.post("/solve", json={"system": "blowup"})
        assert r.status_code == 200
        assert r.json()["retcode"] == "DtUnderflow"


class TestGradientRoute:
    def test_exponential_analytic_value(self, client):
        r = client.post("/gradient", json={
            "system": "exp-growth",
            "reltol": 1e-10, "abstol": 1e-12,
            "loss": {"kind": "sum_sq_to_one"},
        })
        assert r.status_code == 200
        body = r.json()
        e = math.exp(1.5)
        assert body["loss"] == pytest.approx((e - 1.0) ** 2, rel=1e-8)
        assert body["gradient"][0] == pytest.approx(2.0 * (e - 1.0) * e, rel=1e-7)

    def test_lotka_reference_gradient(self, client):
        r = client.post("/gradient", json={
            "system": "lotka", "params": LOTKA_P0, "backend": "adjoint",
            "reltol": 1e-8, "abstol": 1e-10,
            "loss": {"kind": "sum_sq_to_one", "saveat": 0.1},
        })
        body = r.json()
        assert body["backend"] == "adjoint"
        assert body["loss"] == pytest.approx(LOTKA_LOSS_REF, rel=1e-6)
        g = np.asarray(body["gradient"])
        assert np.linalg.norm(g - LOTKA_GRAD_REF) / np.linalg.norm(LOTKA_GRAD_REF) < 1e-4

    def test_backends_agree_over_http(self, client):
        grads = {}
        for backend in ("forward", "fd"):
            r = client.post("/gradient", json={
                "system": "exp-growth", "backend": backend,
                "reltol": 1e-10, "abstol": 1e-12,
            })
            grads[backend] = r.json()["gradient"][0]
        assert grads["forward"] == pytest.approx(grads["fd"], rel=1e-5)

    def test_empty_parameter_vector_is_fine(self, client):
        r = client.post("/gradient", json={"system": "cubic-spiral"})
        assert r.status_code == 200
        assert r.json()["gradient"] == []
        assert r.json()["loss"] > 0.0

    def test_adjoint_on_delay_system_is_400(self, client):
        r = client.post("/gradient", json={"system": "delay-lotka",
                                           "backend": "adjoint"})
        assert r.status_code == 400
        assert r.json()["kind"] == "config-error"

    def test_unknown_loss_kind_is_400(self, client):
        r = client.post("/gradient", json={"system": "lotka",
                                           "loss": {"kind": "entropy"}})
        assert r.status_code == 400
        assert r.json()["kind"] == "config-error"

    def test_solver_failure_is_500_solver_error(self, client, monkeypatch):
        monkeypatch.setitem(app_module.SYSTEMS, "blowup",
                            (blowup_problem, solve_erk45))
        r = client.post("/gradient", json={"system": "blowup"})
        assert r.status_code == 500
        assert r.json()["kind"] == "solver-error"


class TestSystemsRegistry:
    def test_every_entry_solves(self, client):
        for name in SYSTEMS:
            r = client.post("/solve", json={"system": name})
            assert r.status_code == 200, name
            assert r.json()["retcode"] == "Success", name
