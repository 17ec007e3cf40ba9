"""Command-line runner: ``vbnewton solve | list | check``.

Traces are JSON lines, one record per outer iteration with the fields
``k, lambda, newton_norm, theta, residual, inner_trials``, followed by one
summary record ``{status, iterations, final_residual, final_point}``.

Exit codes: 0 converged (or all checks passed), 1 configuration error,
2 Newton failed, 3 singular Newton operator, 4 iteration limit, 5 failed check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import problems
from .bundle import residual_norm
from .checks import run_checks
from .errors import SingularNewtonOperator, VBNewtonError
from .geometry.connection import CONNECTION_KINDS, ConnectionMap
from .geometry.transport import TransportKind
from .solver import (
    CONVERGED,
    MAX_ITERATIONS,
    NEWTON_FAILED,
    SINGULAR,
    IterationRecord,
    SolveOutcome,
    SolverConfig,
    damped_newton,
    integrate_differential_newton_path,
    local_newton,
)

EXIT_CODES = {CONVERGED: 0, NEWTON_FAILED: 2, SINGULAR: 3, MAX_ITERATIONS: 4}
EXIT_CONFIG = 1
EXIT_CHECK = 5
OUTPUT_ENV = "VBNEWTON_OUTPUT_DIR"
PATH_TOL = 1e-4

# config-file keys and the argparse destinations they map to
SOLVER_FIELDS = ("theta_des", "theta_acc", "lambda_fail", "tol", "max_outer", "max_inner",
                 "initial_lambda")
CONFIG_KEYS = {
    "problem", "A", "b", "n", "shift", "seed", "start", "solver", "connection", "transport",
    "retraction", "steps", "output", "format", *SOLVER_FIELDS,
}


class ConfigError(Exception):
    pass


def _add_run_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with any of the options below (flags override it)")
    p.add_argument("--problem", help="registered problem name (see 'list')")
    p.add_argument("--A", dest="A", help="matrix literal diag:a,b,c or file:<path>")
    p.add_argument("--b", help="vector literal a,b,c")
    p.add_argument("--n", type=int, help="dimension (affine)")
    p.add_argument("--shift", type=float, help="kink location (semismooth_vf)")
    p.add_argument("--retraction", choices=["projection", "skew"], help="sphere retraction")
    p.add_argument("--start", help="default | coords:a,b,c | perturb:<e1|-e1|zero0>:<magnitude>")
    p.add_argument("--seed", type=int, help="seed for random start perturbations (default 0)")
    p.add_argument("--connection", choices=CONNECTION_KINDS)
    p.add_argument("--transport", choices=[k.value for k in TransportKind])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbnewton", description="Newton's method for sections of vector bundles"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run a solver and emit a JSON-lines trace")
    _add_run_args(solve)
    solve.add_argument("--solver", choices=["local", "damped", "diffpath"])
    solve.add_argument("--theta-des", dest="theta_des", type=float)
    solve.add_argument("--theta-acc", dest="theta_acc", type=float)
    solve.add_argument("--lambda-fail", dest="lambda_fail", type=float)
    solve.add_argument("--tol", type=float)
    solve.add_argument("--max-outer", dest="max_outer", type=int)
    solve.add_argument("--max-inner", dest="max_inner", type=int)
    solve.add_argument("--initial-lambda", dest="initial_lambda", type=float)
    solve.add_argument("--steps", type=int, help="RK4 steps for --solver diffpath (default 64)")
    solve.add_argument("--output", help="trace file (default: stdout, or $%s/<problem>_<solver>.jsonl)" % OUTPUT_ENV)
    solve.add_argument("--format", choices=["jsonl", "text"])

    lst = sub.add_parser("list", help="list registered problems")
    lst.add_argument("filter", nargs="?", default="", help="substring filter on problem names")

    check = sub.add_parser("check", help="run the consistency and tangency checks at the start point")
    _add_run_args(check)
    return parser


# -- configuration ---------------------------------------------------------------


def load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config file: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    lines = text.splitlines()
    for key in data:
        if key not in CONFIG_KEYS:
            lineno = next((i + 1 for i, ln in enumerate(lines) if f'"{key}"' in ln), "?")
            raise ConfigError(f"{path}: line {lineno}: unknown field {key!r}")
    return data


def merged_options(args) -> dict:
    opts = {}
    if getattr(args, "config", None):
        opts.update(load_config_file(args.config))
    for key, val in vars(args).items():
        if key in ("config", "command") or val is None:
            continue
        opts[key] = val
    return opts


def solver_config(opts) -> SolverConfig:
    kwargs = {k: opts[k] for k in SOLVER_FIELDS if k in opts}
    try:
        return SolverConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc


def build_problem(opts):
    name = opts.get("problem")
    if not name:
        raise ConfigError("missing field 'problem'")
    if name not in problems.REGISTRY:
        raise ConfigError(f"field 'problem': unknown problem {name!r}")
    spec = problems.REGISTRY[name]
    overrides = {}
    for key in ("A", "b", "n", "shift", "retraction"):
        if key in opts and opts[key] is not None:
            if key not in spec.params:
                raise ConfigError(f"field {key!r} does not apply to problem {name!r}")
            overrides[key] = opts[key]
    try:
        pb, params, spec = problems.build(name, **overrides)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"problem {name!r}: {exc}") from exc
    return pb, params, spec


def _named_point(token, pb, params, spec):
    n = pb.domain.ambient_dim
    sign = 1.0
    if token.startswith("-"):
        sign, token = -1.0, token[1:]
    if token.startswith("e") and token[1:].isdigit():
        i = int(token[1:]) - 1
        if not 0 <= i < n:
            raise ConfigError(f"field 'start': coordinate index {token} out of range 1..{n}")
        z = np.zeros(n)
        z[i] = sign
        return pb.domain.retract(z, np.zeros(n))
    if token.startswith("zero") and token[4:].isdigit():
        zeros = spec.oracle(**params)
        j = int(token[4:])
        if not 0 <= j < len(zeros):
            raise ConfigError(f"field 'start': oracle has {len(zeros)} zeros, no {token}")
        return sign * zeros[j]
    raise ConfigError(f"field 'start': unknown point {token!r}")


def start_point(opts, pb, params, spec) -> np.ndarray:
    text = str(opts.get("start", "default"))
    m = pb.domain
    try:
        if text == "default":
            x = np.asarray(spec.default_start(**params), dtype=float)
        elif text.startswith("coords:"):
            z = problems.parse_vector(text[7:])
            if z.size != m.ambient_dim:
                raise ConfigError(f"field 'start': expected {m.ambient_dim} coordinates, got {z.size}")
            x = m.retract(z, np.zeros_like(z))
        elif text.startswith("perturb:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise ConfigError("field 'start': expected perturb:<point>:<magnitude>")
            base = _named_point(parts[1], pb, params, spec)
            mag = float(parts[2])
            rng = np.random.default_rng(int(opts.get("seed", 0)))
            x = m.retract(base, m.random_tangent(base, rng, mag))
        else:
            raise ConfigError(f"field 'start': cannot parse {text!r}")
    except ValueError as exc:
        raise ConfigError(f"field 'start': {exc}") from exc
    except VBNewtonError as exc:
        raise ConfigError(f"field 'start': {exc}") from exc
    if not m.contains(x):
        raise ConfigError("field 'start': point is not on the manifold after projection")
    return x


def connection_and_transport(opts, pb):
    q = ConnectionMap(opts["connection"]) if opts.get("connection") else pb.default_connection()
    try:
        q.check_compatible(pb)
    except VBNewtonError as exc:
        raise ConfigError(f"field 'connection': {exc}") from exc
    transport = TransportKind(opts["transport"]) if opts.get("transport") else q.transport
    return q, transport


# -- output ------------------------------------------------------------------------


def trace_lines(outcome: SolveOutcome, pb) -> list:
    lines = [json.dumps({k: (int(v) if k in ("k", "inner_trials") else float(v))
                         for k, v in rec.as_dict().items()})
             for rec in outcome.trace]
    final = [float(c) for c in outcome.final]
    lines.append(json.dumps({
        "status": outcome.status,
        "iterations": outcome.iterations,
        "final_residual": residual_norm(pb, np.array(final)),
        "final_point": final,
    }))
    return lines


def text_lines(outcome: SolveOutcome, pb) -> list:
    out = [f"{'k':>3} {'lambda':>10} {'|dx|':>11} {'theta':>11} {'|F|':>11} trials"]
    for r in outcome.trace:
        out.append(f"{r.k:>3} {r.lam:>10.4g} {r.newton_norm:>11.4e} {r.theta:>11.4e} "
                   f"{r.residual:>11.4e} {r.inner_trials:>6}")
    out.append(f"status: {outcome.status}  iterations: {outcome.iterations}  "
               f"|F(final)| = {residual_norm(pb, outcome.final):.3e}")
    out.append("final point: " + " ".join(f"{c:.12g}" for c in outcome.final))
    if outcome.message:
        out.append(f"note: {outcome.message}")
    return out


def _output_path(opts):
    if opts.get("output"):
        return Path(opts["output"])
    env = os.environ.get(OUTPUT_ENV)
    if env:
        ext = "txt" if opts.get("format") == "text" else "jsonl"
        return Path(env) / f"{opts['problem']}_{opts.get('solver', 'damped')}.{ext}"
    return None


def _emit(lines, opts, stdout):
    path = _output_path(opts)
    text = "\n".join(lines) + "\n"
    if path is None:
        stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


# -- commands ----------------------------------------------------------------------


def run_diffpath(pb, q, x0, steps) -> SolveOutcome:
    try:
        path = integrate_differential_newton_path(pb, q, x0, steps)
    except SingularNewtonOperator as exc:
        return SolveOutcome(SINGULAR, np.asarray(x0, dtype=float), [], str(exc))
    trace = []
    h = 1.0 / steps
    for k, x in enumerate(path[1:]):
        trace.append(IterationRecord(k, (k + 1) * h, float(np.linalg.norm(x - path[k])), 0.0,
                                     residual_norm(pb, x), 1, x))
    final = path[-1]
    status = CONVERGED if residual_norm(pb, final) <= PATH_TOL else NEWTON_FAILED
    return SolveOutcome(status, final, trace)


def cmd_solve(opts, stdout) -> int:
    cfg = solver_config(opts)
    pb, params, spec = build_problem(opts)
    x0 = start_point(opts, pb, params, spec)
    q, transport = connection_and_transport(opts, pb)
    solver = opts.get("solver", "damped")
    opts["solver"] = solver
    if solver == "local":
        outcome = local_newton(pb, q, x0, cfg.tol, cfg.max_outer, transport)
    elif solver == "damped":
        outcome = damped_newton(pb, q, x0, cfg, transport)
    elif solver == "diffpath":
        steps = int(opts.get("steps", 64))
        if steps < 1:
            raise ConfigError("field 'steps' must be positive")
        outcome = run_diffpath(pb, q, x0, steps)
    else:
        raise ConfigError(f"field 'solver': unknown solver {solver!r}")
    fmt = opts.get("format", "jsonl")
    lines = trace_lines(outcome, pb) if fmt == "jsonl" else text_lines(outcome, pb)
    _emit(lines, opts, stdout)
    return EXIT_CODES[outcome.status]


def cmd_list(filter_text, stdout) -> int:
    for spec in problems.list_problems(filter_text or ""):
        schema = ", ".join(f"{k}: {p.kind} = {p.default}" for k, p in spec.params.items())
        stdout.write(f"{spec.name}\t{spec.kind}\t{schema}\t{spec.description}\n")
    return 0


def cmd_check(opts, stdout) -> int:
    pb, params, spec = build_problem(opts)
    x0 = start_point(opts, pb, params, spec)
    q, transport = connection_and_transport(opts, pb)
    rng = np.random.default_rng(int(opts.get("seed", 0)))
    results = run_checks(pb, q, x0, transport, rng)
    for r in results:
        stdout.write(r.line() + "\n")
    ok = all(r.passed for r in results)
    stdout.write(f"{'all checks passed' if ok else 'some checks failed'} "
                 f"(connection={q.kind}, transport={transport.value})\n")
    return 0 if ok else EXIT_CHECK


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        if args.command == "list":
            return cmd_list(args.filter, stdout)
        opts = merged_options(args)
        if args.command == "solve":
            return cmd_solve(opts, stdout)
        return cmd_check(opts, stdout)
    except ConfigError as exc:
        stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
