import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbnewton import problems
from vbnewton.bundle import evaluate, lagrange_data, residual_norm
from vbnewton.checks import connection_consistency
from vbnewton.geometry import ConnectionMap
from vbnewton.solver import CONVERGED, SolverConfig, damped_newton, local_newton

A321 = np.diag([3.0, 2.0, 1.0])
E1, E2, E3 = np.eye(3)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# -- oracles ------------------------------------------------------------------


def test_eigen_oracle_for_diagonal_matrix():
    zeros = problems.eigen_zeros(A321)
    assert len(zeros) == 6
    for e in (E1, E2, E3):
        assert min(np.linalg.norm(z - e) for z in zeros) == 0.0
        assert min(np.linalg.norm(z + e) for z in zeros) == 0.0


@pytest.mark.parametrize("name", list(problems.REGISTRY))
def test_oracle_zeros_have_zero_residual(name):
    pb, params, spec = problems.build(name)
    zeros = spec.oracle(**params)
    assert zeros
    for z in zeros:
        assert residual_norm(pb, z) <= 1e-10


def brute_force_sphere_zeros(field, n_grid=200):
    """Local minima of |field| over a latitude-longitude grid on S^2."""
    th = np.linspace(0, np.pi, n_grid)
    ph = np.linspace(0, 2 * np.pi, 2 * n_grid, endpoint=False)
    T, F = np.meshgrid(th, ph, indexing="ij")
    X = np.stack([np.sin(T) * np.cos(F), np.sin(T) * np.sin(F), np.cos(T)], axis=-1)
    R = np.linalg.norm(np.apply_along_axis(field, -1, X), axis=-1)
    out = []
    for i, j in itertools.product(range(1, n_grid - 1), range(2 * n_grid)):
        nb = R[i - 1:i + 2, [(j - 1) % (2 * n_grid), j, (j + 1) % (2 * n_grid)]]
        if R[i, j] == nb.min() and R[i, j] < 0.05:
            out.append(X[i, j])
    return out


def test_semismooth_oracle_against_grid_search():
    A, shift = A321, 0.5

    def field(x):
        g = A @ x + np.maximum(0.0, x - shift)
        return g - (x @ g) * x

    oracle = problems.semismooth_zeros(A, shift)
    for x in brute_force_sphere_zeros(field):
        assert min(np.linalg.norm(x - z) for z in oracle) <= 0.05


def test_semismooth_oracle_large_shift_is_eigen_oracle():
    zs = problems.semismooth_zeros(A321, 5.0)
    ez = problems.eigen_zeros(A321)
    assert len(zs) == len(ez)
    for z in zs:
        assert min(np.linalg.norm(z - e) for e in ez) <= 1e-12


def test_semismooth_oracle_degenerate_direction():
    # r has no component along e3 for the inactive set: e3-type zeros must still be found
    zs = problems.semismooth_zeros(A321, 0.5)
    assert min(np.linalg.norm(z + E3) for z in zs) <= 1e-12


@pytest.mark.parametrize("name", list(problems.REGISTRY))
def test_solver_limits_match_oracle(name):
    pb, params, spec = problems.build(name)
    zeros = spec.oracle(**params)
    rng = np.random.default_rng(17)
    hits = 0
    for _ in range(20):
        x0 = pb.domain.random_point(rng)
        out = damped_newton(pb, None, x0)
        if out.status == CONVERGED:
            hits += 1
            assert problems.nearest_zero(zeros, out.final)[0] <= 1e-8
    assert hits >= 15


# -- FD consistency of evaluate/derivative -------------------------------------


def away_from_kinks(x, shift, margin=1e-3):
    return np.all(np.abs(x - shift) > margin)


@pytest.mark.parametrize("name", list(problems.REGISTRY))
def test_derivative_consistency_on_50_points(name):
    pb, params, _ = problems.build(name)
    q = pb.default_connection()
    rng = np.random.default_rng(50)
    count = 0
    while count < 50:
        x = pb.domain.random_point(rng)
        if name == "semismooth_vf" and not away_from_kinks(x, params["shift"]):
            continue
        dx = pb.domain.random_tangent(x, rng)
        assert connection_consistency(pb, q, x, dx, q.transport) <= 1e-5
        count += 1


# -- rayleigh -----------------------------------------------------------------


def test_rayleigh_local_newton_near_e3():
    pb = problems.rayleigh_vector_field(A321)
    out = local_newton(pb, None, unit(E3 + 0.05 * E1))
    assert out.status == CONVERGED
    assert min(np.linalg.norm(out.final - E3), np.linalg.norm(out.final + E3)) <= 1e-8


def test_rayleigh_functional_stationary_at_e1():
    pb = problems.rayleigh_functional(A321)
    assert np.all(evaluate(pb, E1).value == 0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_rayleigh_functional_is_fd_gradient(seed):
    rng = np.random.default_rng(seed)
    pb = problems.rayleigh_functional(A321)
    m = pb.domain
    x = m.random_point(rng)
    v = m.random_tangent(x, rng)
    f = lambda z: 0.5 * z @ A321 @ z  # noqa: E731
    h = 1e-5
    fd = (f(m.retract(x, h * v)) - f(m.retract(x, -h * v))) / (2 * h)
    assert abs(fd - evaluate(pb, x).value @ v) <= 1e-6


def test_rayleigh_rejects_bad_matrix():
    with pytest.raises(ValueError):
        problems.rayleigh_vector_field(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        problems.rayleigh_vector_field(np.ones(3))


# -- closest point -------------------------------------------------------------


def test_closest_point_multiplier():
    pb = problems.closest_point_constrained((2.0, 0.0, 0.0))
    ld = lagrange_data(pb, E1)
    # (x - b) + mu * 2x = 0 at x = e1 gives mu = 1/2
    assert ld.multiplier[0] == pytest.approx(0.5, abs=1e-14)
    assert ld.normal_defect <= 1e-14
    assert residual_norm(pb, E1) == 0.0


def test_closest_point_on_sphere_target():
    b = unit([1.0, 2.0, 2.0])
    pb = problems.closest_point_constrained(b)
    rng = np.random.default_rng(4)
    x0 = pb.domain.retract(b, pb.domain.random_tangent(b, rng, 1e-3))
    out = local_newton(pb, None, x0)
    assert out.status == CONVERGED
    assert sum(r.inner_trials for r in out.trace) <= 2
    assert np.linalg.norm(out.final - b) <= 1e-12


def test_closest_point_damped_from_antipode():
    pb, params, spec = problems.build("closest_point")
    x0 = spec.default_start(**params)
    assert np.linalg.norm(x0 + E1) == pytest.approx(0.2, abs=2e-2)
    out = damped_newton(pb, None, x0)
    assert out.status == CONVERGED
    assert problems.nearest_zero(problems.closest_point_zeros(params["b"]), out.final)[0] <= 1e-8


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_closest_point_full_step_is_exact(seed):
    # dx = P(x) b / <b, x>, so x + dx = b / <b, x> and the projection retraction
    # lands on sign(<b, x>) b / |b| in one step from any start
    from vbnewton.solver import newton_direction

    rng = np.random.default_rng(seed)
    b = rng.standard_normal(3) * rng.uniform(0.5, 3.0)
    pb = problems.closest_point_constrained(b)
    x = pb.domain.random_point(rng)
    bx = float(b @ x)
    if abs(bx) < 0.2:
        return
    dx = newton_direction(pb, None, x)
    np.testing.assert_allclose(dx, (b - bx * x) / bx, atol=1e-9)
    x_new = pb.domain.retract(x, dx)
    np.testing.assert_allclose(x_new, np.sign(bx) * b / np.linalg.norm(b), atol=1e-9)


def test_closest_point_rejects_zero_target():
    with pytest.raises(ValueError):
        problems.closest_point_constrained((0.0, 0.0, 0.0))


# -- affine --------------------------------------------------------------------


def test_affine_data_is_seeded():
    M1, b1 = problems.affine_data()
    M2, b2 = problems.affine_data()
    np.testing.assert_array_equal(M1, M2)
    np.testing.assert_array_equal(b1, b2)
    assert np.linalg.cond(M1) < 1e3


@pytest.mark.parametrize("x0", [np.zeros(3), np.array([5.0, -3.0, 1e3])])
def test_affine_one_step_and_zero_theta(x0):
    pb = problems.affine_trivial()
    out = local_newton(pb, None, x0)
    sol = np.linalg.solve(pb.meta["M"], pb.meta["b"])
    np.testing.assert_allclose(out.trace[0].x_snapshot, sol, rtol=1e-12, atol=1e-12)
    assert out.trace[0].theta <= 1e-12


def test_affine_left_scaling_leaves_iterates():
    pb = problems.affine_trivial()
    scaled = pb.scaled(np.diag([10.0, 0.1, 1.0]))
    x0 = np.array([1.0, 1.0, 1.0])
    a, b = damped_newton(pb, None, x0), damped_newton(scaled, None, x0)
    assert [r.lam for r in a.trace] == [r.lam for r in b.trace]
    for ra, rb in zip(a.trace, b.trace):
        assert np.linalg.norm(ra.x_snapshot - rb.x_snapshot) <= 1e-10


# -- semismooth ----------------------------------------------------------------


def test_semismooth_large_shift_matches_rayleigh():
    ss = problems.semismooth_sphere_field(A321, shift=2.0)
    ray = problems.rayleigh_vector_field(A321)
    x0 = unit(E1 + 0.01 * E2)
    a, b = local_newton(ss, None, x0), local_newton(ray, None, x0)
    assert len(a.trace) == len(b.trace)
    for ra, rb in zip(a.trace, b.trace):
        np.testing.assert_allclose(ra.x_snapshot, rb.x_snapshot, atol=1e-15)


def test_semismooth_superlinear_at_inactive_zero():
    pb = problems.semismooth_sphere_field(A321, shift=0.5)
    # -e1 is a zero with every component below the kink
    z = -E1
    assert residual_norm(pb, z) == 0.0
    out = local_newton(pb, None, unit(z + 0.01 * E2))
    assert out.status == CONVERGED
    thetas = [r.theta for r in out.trace if r.inner_trials > 0]
    assert thetas[0] < 0.05
    assert all(b < a * 0.1 for a, b in zip(thetas, thetas[1:]) if a > 1e-14)


def kink_points(n_points=60, seed=0):
    """Points of S^2 with one component exactly at the kink 0.5."""
    rng = np.random.default_rng(seed)
    for i in range(n_points):
        k = i % 3
        v = rng.standard_normal(3)
        v[k] = 0.0
        v *= np.sqrt(0.75) / np.linalg.norm(v)
        v[k] = 0.5
        yield v


def test_semismooth_boundary_starts_damped():
    pb = problems.semismooth_sphere_field(A321, shift=0.5)
    zeros = problems.semismooth_zeros(A321, 0.5)
    for x0 in kink_points():
        assert abs(np.linalg.norm(x0) - 1) <= 1e-15
        out = damped_newton(pb, None, x0)
        assert out.status == CONVERGED
        assert problems.nearest_zero(zeros, out.final)[0] <= 1e-8


def test_semismooth_theta_floor_just_inside_active_set():
    # one ulp above the kink the active-side derivative points into the inactive
    # region; the contraction estimate then stays above theta_acc for every lam
    from vbnewton.solver import newton_step, simplified_newton_direction, theta_estimate

    pb = problems.semismooth_sphere_field(A321, shift=0.5)
    x0 = unit([0.5, np.sqrt(0.75), 0.0])
    assert x0[0] > 0.5
    dx, fac, fx = newton_step(pb, None, x0)
    for lam in (1.0, 1e-2, 1e-5):
        xp = pb.domain.retract(x0, lam * dx)
        theta = theta_estimate(dx, simplified_newton_direction(pb, None, x0, xp, lam, fac, fx), lam)
        assert theta > 0.55
    assert damped_newton(pb, None, x0).status == "NewtonFailed"


# -- registry -----------------------------------------------------------------


def test_registry_contents_and_order():
    assert list(problems.REGISTRY) == ["rayleigh_vf", "rayleigh_fn", "closest_point", "affine",
                                       "semismooth_vf"]
    assert [s.name for s in problems.list_problems("")] == list(problems.REGISTRY)
    assert problems.list_problems("no_such_problem") == []
    assert [s.name for s in problems.list_problems("rayleigh")] == ["rayleigh_vf", "rayleigh_fn"]


def test_registry_parameters():
    pb, params, _ = problems.build("rayleigh_vf", A="diag:4,1")
    np.testing.assert_array_equal(params["A"], np.diag([4.0, 1.0]))
    assert pb.domain.ambient_dim == 2
    with pytest.raises(ValueError):
        problems.build("rayleigh_vf", B="diag:1")
    with pytest.raises(KeyError):
        problems.build("nope")
    with pytest.raises(ValueError):
        problems.parse_matrix("eye:3")


def test_parse_matrix_from_file(tmp_path):
    p = tmp_path / "A.txt"
    p.write_text("2 1\n1 3\n")
    np.testing.assert_array_equal(problems.parse_matrix(f"file:{p}"), [[2.0, 1.0], [1.0, 3.0]])


def test_default_connections_per_kind():
    assert problems.rayleigh_vector_field().default_connection() == ConnectionMap("tangential")
    assert problems.rayleigh_functional().default_connection() == ConnectionMap("dual_tangential")
