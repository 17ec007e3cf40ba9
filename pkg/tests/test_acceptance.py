"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line."""

import io
import json
import math
import subprocess
import sys

import numpy as np

from conftest import ACCEPTANCE_LINES
from vbnewton import problems
from vbnewton.bundle import NewtonProblem, newton_operator, residual_norm
from vbnewton.checks import connection_consistency, tangency_defect
from vbnewton.cli import main
from vbnewton.geometry import ConnectionMap, Euclidean, Sphere
from vbnewton.solver import (
    CONVERGED,
    SolverConfig,
    damped_newton,
    integrate_differential_newton_path,
    local_newton,
    newton_direction,
    newton_path_residual,
)

E = np.eye(3)


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_symmetric(n, rng):
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


def sphere_dist(x, y):
    return 2.0 * math.asin(min(1.0, float(np.linalg.norm(x - y)) / 2.0))


# -- 1 ------------------------------------------------------------------------------


def test_criterion_01_connection_transport_consistency():
    rng = np.random.default_rng(101)
    worst = 0.0
    for builder in (problems.rayleigh_vector_field, problems.rayleigh_functional):
        for _ in range(100):
            pb = builder(random_symmetric(10, rng))
            q = pb.default_connection()
            x = pb.domain.random_point(rng)
            dx = pb.domain.random_tangent(x, rng)
            worst = max(worst, connection_consistency(pb, q, x, dx, q.transport, h=1e-5))
    report(1, "connection matches FD of back-transported section on S^9", worst <= 1e-5,
           f"max defect {worst:.2e}, tol 1e-5")


# -- 2 ------------------------------------------------------------------------------


def test_criterion_02_tangency_of_damped_step():
    rng = np.random.default_rng(202)
    consistent = 0.0
    for pb_builder, kinds in ((problems.rayleigh_vector_field, ("tangential", "retraction")),
                              (problems.rayleigh_functional, ("dual_tangential", "dual_retraction"))):
        for retraction in ("projection", "skew"):
            for _ in range(25):
                pb = pb_builder(random_symmetric(4, rng), retraction=retraction)
                x = pb.domain.random_point(rng)
                lam = float(rng.uniform(0.01, 1.0))
                q = ConnectionMap(kinds[int(rng.integers(2))])
                consistent = max(consistent, tangency_defect(pb, q, x, lam, q.transport))
    pb = problems.rayleigh_vector_field(np.diag([3.0, 2.0, 1.0]), retraction="skew")
    contrast = min(
        tangency_defect(pb, ConnectionMap("retraction"), pb.domain.random_point(rng),
                        float(rng.uniform(0.05, 1.0)), "projection")
        for _ in range(100)
    )
    report(2, "lam dx equals the Newton path direction", consistent <= 1e-10 and contrast >= 1e-4,
           f"consistent max {consistent:.2e} <= 1e-10, inconsistent min {contrast:.2e} >= 1e-4")


# -- 3 ------------------------------------------------------------------------------


def test_criterion_03_sqp_equivalence():
    A = np.diag([3.0, 2.0, 1.0])
    pb = problems.rayleigh_functional(A)
    m = pb.domain
    rng = np.random.default_rng(303)
    f = lambda z: 0.5 * z @ A @ z  # noqa: E731
    h = 1e-4
    worst = 0.0
    for _ in range(50):
        x = m.random_point(rng)
        op = newton_operator(pb, ConnectionMap("dual_tangential"), x)
        U = op.tangent.columns
        k = U.shape[1]
        H = np.empty((k, k))
        for i in range(k):
            for j in range(k):
                ui, uj = h * U[:, i], h * U[:, j]
                H[i, j] = (f(m.retract(x, ui + uj)) - f(m.retract(x, ui - uj))
                           - f(m.retract(x, uj - ui)) + f(m.retract(x, -ui - uj))) / (4 * h * h)
        action = op.fibre.columns.T @ op.fibre.vector(op.matrix)
        worst = max(worst, float(np.abs(action - H).max()))
    report(3, "dual-connection operator equals FD Hessian of f o R_x", worst <= 1e-5,
           f"max entry defect {worst:.2e}, tol 1e-5")


# -- 4 ------------------------------------------------------------------------------


def test_criterion_04_local_superlinear_convergence():
    A = np.diag([3.0, 2.0, 1.0])
    pb = problems.rayleigh_vector_field(A)
    m = pb.domain
    rng = np.random.default_rng(404)
    ok = True
    notes = []
    for i in range(3):
        for sign in (1.0, -1.0):
            z = sign * E[i]
            x0 = m.retract(z, m.random_tangent(z, rng, 1e-2))
            out = local_newton(pb, None, x0, tol=1e-15, max_iter=8)
            iterates = [x0] + [r.x_snapshot for r in out.trace]
            d = [sphere_dist(x, z) for x in iterates]
            ratios = []
            for a, b in zip(d, d[1:]):
                if a <= 1e-14:
                    break
                ratios.append(b / a)
            decreasing = all(r2 < r1 for r1, r2 in zip(ratios, ratios[1:]))
            thetas = [r.theta for r in out.trace if r.inner_trials > 0]
            theta_tail = all(t2 < t1 or t2 == 0.0 for t1, t2 in zip(thetas[1:], thetas[2:]))
            good = (len(iterates) - 1 <= 8 and decreasing and ratios[-1] < 1e-3
                    and theta_tail and thetas[-1] < 1e-6)
            ok &= good
            notes.append(f"{'+' if sign > 0 else '-'}e{i + 1}: ratios "
                         + "/".join(f"{r:.0e}" for r in ratios))
    report(4, "superlinear local convergence from 1e-2 perturbations", ok, "; ".join(notes))


# -- 5 ------------------------------------------------------------------------------


def test_criterion_05_damped_globalization():
    pb, params, spec = problems.build("closest_point")
    x0 = spec.default_start(**params)
    cfg = SolverConfig()
    out = damped_newton(pb, None, x0, cfg)
    trials = [t for r in out.trace for t in r.trials]
    reductions = sum(1 for t in trials if t.next_lambda < t.lam)
    min_lam = min((t.lam for t in trials), default=1.0)
    accepted_ok = all(r.theta <= cfg.theta_acc for r in out.trace)
    bound = cfg.inner_trial_bound()
    bound_ok = all(r.inner_trials <= bound for r in out.trace)
    ok = (out.status == CONVERGED and reductions >= 1 and min_lam >= cfg.lambda_fail
          and accepted_ok and bound_ok)
    report(5, "damped Newton from the perturbed antipode of closest_point", ok,
           f"status {out.status}, lambda reductions {reductions}, min lambda {min_lam:.2g}, "
           f"accepted theta ok {accepted_ok}, inner bound {bound} ok {bound_ok}")


# -- 6 ------------------------------------------------------------------------------


def _arctan_problem():
    def value(x):
        return np.array([np.arctan(x[0]) + 0.1 * x[1], x[1] - 0.5 + 0.1 * x[0] ** 2])

    def deriv(x, dx):
        return np.array([[1 / (1 + x[0] ** 2), 0.1], [0.2 * x[0], 1.0]]) @ dx

    return NewtonProblem(Euclidean(2), "trivial", value, deriv, fibre_dim=2)


def test_criterion_06_lambda_update_law():
    cfg = SolverConfig()
    runs = []
    B = np.random.default_rng(1).standard_normal((20, 20))
    ray20 = problems.rayleigh_vector_field(B + B.T)
    runs.append((ray20, ray20.domain.random_point(np.random.default_rng(0))))
    arctan = _arctan_problem()
    runs += [(arctan, np.array(x0)) for x0 in ([3.0, -1.0], [5.0, 0.0], [2.0, 1.0], [-5.0, 3.0])]
    pb, params, spec = problems.build("closest_point")
    runs.append((pb, spec.default_start(**params)))
    rng = np.random.default_rng(606)
    for name in ("rayleigh_vf", "rayleigh_fn", "semismooth_vf"):
        pb, _, _ = problems.build(name, retraction="skew")
        runs += [(pb, pb.domain.random_point(rng)) for _ in range(20)]
    rejected = violations = 0
    for pb, x0 in runs:
        for r in damped_newton(pb, None, x0, cfg).trace:
            for t in r.trials:
                if not t.accepted:
                    rejected += 1
                    violations += t.next_lambda != min(1.0, t.lam * cfg.theta_des / t.theta)
    report(6, "rejected trials follow lam_next = min(1, lam theta_des / theta) exactly",
           rejected > 0 and violations == 0, f"{rejected} rejected trials, {violations} violations")


# -- 7 ------------------------------------------------------------------------------


def test_criterion_07_affine_covariance():
    pb = problems.affine_trivial()
    scaled = pb.scaled(np.diag([10.0, 0.1, 1.0]))
    rng = np.random.default_rng(707)
    worst = 0.0
    same_lambda = True
    for _ in range(20):
        x0 = 10 * rng.standard_normal(3)
        a, b = damped_newton(pb, None, x0), damped_newton(scaled, None, x0)
        same_lambda &= [r.lam for r in a.trace] == [r.lam for r in b.trace]
        for ra, rb in zip(a.trace, b.trace):
            worst = max(worst, float(np.linalg.norm(ra.x_snapshot - rb.x_snapshot)))
    report(7, "left scaling by diag(10, 0.1, 1) leaves iterates and lambdas", worst <= 1e-10 and same_lambda,
           f"max iterate change {worst:.2e}, identical lambdas {same_lambda}")


# -- 8 ------------------------------------------------------------------------------


def test_criterion_08_metric_sandwich():
    m = Sphere(3)
    rng = np.random.default_rng(808)

    def near(z):
        u = m.random_tangent(z, rng)
        u /= np.linalg.norm(u)
        t = rng.uniform(0.0, 0.1)
        return math.cos(t) * z + math.sin(t) * u

    lo, hi = math.inf, -math.inf
    for _ in range(1000):
        z = m.random_point(rng)
        x, y = near(z), near(z)
        d = sphere_dist(x, y)
        if d == 0.0:
            continue
        ratio = float(np.linalg.norm(m.inverse_retract(z, x) - m.inverse_retract(z, y))) / d
        lo, hi = min(lo, ratio), max(hi, ratio)
    report(8, "inverse retraction is bi-Lipschitz near 1 on S^2", 0.95 <= lo and hi <= 1.05,
           f"ratio range [{lo:.4f}, {hi:.4f}] within [0.95, 1.05]")


# -- 9 ------------------------------------------------------------------------------


def test_criterion_09_newton_path_order():
    A = np.diag([3.0, 2.0, 1.0])
    pb = problems.rayleigh_vector_field(A)
    m = pb.domain
    rng = np.random.default_rng(909)
    lams = np.array([0.05, 0.025, 0.0125])
    orders = []
    for _ in range(10):
        x0 = m.random_point(rng)
        dx = newton_direction(pb, None, x0)
        res = [newton_path_residual(pb, x0, m.retract(x0, lam * dx), lam) for lam in lams]
        orders.append(float(np.polyfit(np.log(lams), np.log(res), 1)[0]))
    report(9, "Newton path residual after one damped step is O(lam^2)", min(orders) >= 1.9,
           f"empirical orders {min(orders):.3f}..{max(orders):.3f}, need >= 1.9")


# -- 10 -----------------------------------------------------------------------------


def test_criterion_10_differential_path():
    A = np.diag([3.0, 2.0, 1.0])
    pb = problems.rayleigh_vector_field(A)
    rng = np.random.default_rng(1010)
    worst_res, worst_gain = 0.0, math.inf
    for _ in range(3):
        x0 = pb.domain.retract(E[0], pb.domain.random_tangent(E[0], rng, 0.4))
        ref = integrate_differential_newton_path(pb, None, x0, 256)[-1]
        end64 = integrate_differential_newton_path(pb, None, x0, 64)[-1]
        end32 = integrate_differential_newton_path(pb, None, x0, 32)[-1]
        worst_res = max(worst_res, residual_norm(pb, end64))
        gain = np.linalg.norm(end32 - ref) / np.linalg.norm(end64 - ref)
        worst_gain = min(worst_gain, float(gain))
    report(10, "RK4 differential Newton path", worst_res <= 1e-4 and worst_gain >= 8,
           f"max endpoint residual {worst_res:.2e} <= 1e-4, min error gain {worst_gain:.1f} >= 8")


# -- 11 -----------------------------------------------------------------------------


def _cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    return main(list(argv), stdout=out, stderr=err), out.getvalue(), err.getvalue()


def test_criterion_11_cli_contract(tmp_path):
    fields = {"k", "lambda", "newton_norm", "theta", "residual", "inner_trials"}
    checks = []
    code, out, _ = _cli("solve", "--problem", "rayleigh_vf", "--A", "diag:3,2,1",
                        "--start", "perturb:e1:0.01", "--solver", "local")
    recs = [json.loads(s) for s in out.splitlines()]
    checks.append(code == 0 and recs[-1]["iterations"] <= 8
                  and all(set(r) == fields for r in recs[:-1]))
    code, out, _ = _cli("solve", "--problem", "affine", "--solver", "damped")
    recs = [json.loads(s) for s in out.splitlines()]
    checks.append(code == 0 and recs[-1]["iterations"] == 1 and recs[0]["lambda"] == 1.0
                  and all(set(r) == fields for r in recs[:-1]))
    code, out, err = _cli("solve", "--problem", "affine", "--theta-des", "0.6", "--theta-acc", "0.5")
    checks.append(code == 1 and "theta_des" in err and "theta_acc" in err)
    # replay through the installed entry point, twice, into files
    outputs = []
    for i in range(2):
        path = tmp_path / f"run{i}.jsonl"
        proc = subprocess.run([sys.executable, "-m", "vbnewton.cli", "solve", "--problem", "rayleigh_fn",
                               "--start", "perturb:e2:0.3", "--seed", "5", "--output", str(path)],
                              capture_output=True, check=False)
        checks.append(proc.returncode == 0)
        outputs.append(path.read_bytes())
    checks.append(outputs[0] == outputs[1])
    report(11, "CLI examples, exit codes, trace fields and replay determinism", all(checks),
           f"{sum(checks)}/{len(checks)} sub-checks passed")
