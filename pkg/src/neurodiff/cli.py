"""Command-line front end.

``neurodiff <experiment-id> [...]`` runs experiments and writes their
artifacts; ``neurodiff list`` prints the known ids; ``neurodiff serve``
starts the HTTP service. The runner is a thin client: it posts to the
service (in process by default, or a remote one via ``--server``) and
only handles option precedence, artifact files, and exit codes.

Option precedence is flags over config file over defaults. Exit codes:
0 all assertions passed, 1 an assertion failed, 2 a solver gave up,
3 the request never made sense (bad id, option, or config file).
"""

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from .service.app import create_app

CONFIG_KEYS = ("reltol", "abstol", "seed", "iters", "backend")

PASS_CODE = 0
ASSERTION_CODE = 1
SOLVER_CODE = 2
CONFIG_CODE = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; remap so 2 stays solver-only."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(CONFIG_CODE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="neurodiff",
        description="Run differential-equation experiments, or 'list' / 'serve'.")
    parser.add_argument("experiments", nargs="+", metavar="experiment-id",
                        help="experiment ids to run; 'list' prints them, "
                             "'serve' starts the HTTP service")
    parser.add_argument("--reltol", type=float, help="relative tolerance")
    parser.add_argument("--abstol", type=float, help="absolute tolerance")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--iters", type=int, help="training iterations")
    parser.add_argument("--backend", help="gradient backend: forward, adjoint, or fd")
    parser.add_argument("--out", default="runs", metavar="DIR",
                        help="artifact directory (default: runs)")
    parser.add_argument("--config", metavar="FILE",
                        help="JSON file with default options")
    parser.add_argument("--parallel", action="store_true",
                        help="run the listed experiments concurrently")
    parser.add_argument("--server", metavar="URL",
                        help="base URL of a running service "
                             "(default: run in process)")
    parser.add_argument("--host", default="127.0.0.1", help="bind address for serve")
    parser.add_argument("--port", type=int, default=8000, help="port for serve")
    return parser


def _load_config(path) -> dict:
    try:
        loaded = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValueError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file is not valid JSON: {exc}")
    if not isinstance(loaded, dict):
        raise ValueError("config file must hold a JSON object")
    unknown = sorted(set(loaded) - set(CONFIG_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return loaded


def _fail(message: str) -> int:
    print(f"neurodiff: error: {message}", file=sys.stderr)
    return CONFIG_CODE


def _request_body(args) -> dict:
    body = dict(_load_config(args.config)) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key)
        if flag is not None:
            body[key] = flag
    return body


def _client(server):
    if server:
        return httpx.AsyncClient(base_url=server, timeout=600.0)
    transport = httpx.ASGITransport(app=create_app())
    return httpx.AsyncClient(transport=transport, base_url="http://neurodiff.local",
                             timeout=600.0)


async def _post_all(ids, body, parallel, server):
    async with _client(server) as client:
        async def one(experiment_id):
            resp = await client.post(f"/experiments/{experiment_id}", json=body)
            return experiment_id, resp.status_code, resp.json()

        if parallel:
            return list(await asyncio.gather(*(one(eid) for eid in ids)))
        return [await one(eid) for eid in ids]


async def _fetch_ids(server):
    async with _client(server) as client:
        resp = await client.get("/experiments")
        resp.raise_for_status()
        return resp.json()["experiments"]


def _write_artifacts(out_dir: Path, report: dict):
    exp_dir = out_dir / report["experiment"]
    exp_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "experiment": report["experiment"],
        "passed": report["passed"],
        "assertions": report["assertions"],
    }
    summary.update(report["summary"])
    (exp_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for name, text in report["artifacts"].items():
        (exp_dir / name).write_text(text)
    return exp_dir


def _report_outcome(experiment_id, status, payload, out_dir):
    if status == 200:
        code = PASS_CODE if payload["passed"] else ASSERTION_CODE
        verdict = "PASS" if payload["passed"] else "FAIL"
        print(f"{experiment_id}: {verdict}")
        for a in payload["assertions"]:
            marker = "ok  " if a["passed"] else "FAIL"
            print(f"  {marker} {a['name']}: {a['detail']}")
        exp_dir = _write_artifacts(Path(out_dir), payload)
        print(f"  artifacts: {exp_dir}")
        return code
    detail = payload.get("detail", payload)
    print(f"{experiment_id}: error: {detail}", file=sys.stderr)
    if payload.get("kind") == "solver-error":
        return SOLVER_CODE
    if status in (400, 404, 422):
        return CONFIG_CODE
    return SOLVER_CODE


def _serve(args) -> int:
    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return PASS_CODE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ids = args.experiments

    if "serve" in ids:
        if ids != ["serve"]:
            return _fail("'serve' takes no experiment ids")
        return _serve(args)

    if "list" in ids:
        if ids != ["list"]:
            return _fail("'list' takes no experiment ids")
        try:
            for experiment_id in asyncio.run(_fetch_ids(args.server)):
                print(experiment_id)
        except httpx.HTTPError as exc:
            return _fail(f"service unreachable: {exc}")
        return PASS_CODE

    try:
        body = _request_body(args)
    except ValueError as exc:
        return _fail(str(exc))
    try:
        outcomes = asyncio.run(_post_all(ids, body, args.parallel, args.server))
    except httpx.HTTPError as exc:
        return _fail(f"service unreachable: {exc}")

    return max(_report_outcome(eid, status, payload, args.out)
               for eid, status, payload in outcomes)


if __name__ == "__main__":
    sys.exit(main())
