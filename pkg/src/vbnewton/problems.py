"""Built-in problem instances with independent oracles for their zero sets.

Every builder returns a :class:`~vbnewton.bundle.NewtonProblem`. The registry
(:data:`REGISTRY`) lists them in a fixed order together with their parameter
schema, an oracle for the zeros and a default start point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .bundle import NewtonProblem
from .geometry.manifolds import ConstraintManifold, Euclidean, SkewSphere, Sphere

DEFAULT_A = np.diag([3.0, 2.0, 1.0])
AFFINE_SEED = 20240607


def _sym(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("A must be symmetric")
    return 0.5 * (A + A.T)


def _opnorm(A) -> float:
    return float(np.linalg.norm(A, 2))


def sphere(n: int, retraction: str = "projection", skew=None):
    if retraction == "projection":
        return Sphere(n)
    if retraction == "skew":
        return SkewSphere(n, skew)
    raise ValueError(f"unknown retraction {retraction!r}; expected 'projection' or 'skew'")


# -- tangent bundle ------------------------------------------------------------


def rayleigh_vector_field(A=DEFAULT_A, retraction: str = "projection", connection=None) -> NewtonProblem:
    """nu(x) = P(x) A x on the unit sphere; zeros are the unit eigenvectors of A."""
    A = _sym(A)
    n = A.shape[0]

    def value(x):
        Ax = A @ x
        return Ax - (x @ Ax) * x

    def derivative(x, dx):
        Ax = A @ x
        return A @ dx - 2.0 * (x @ (A @ dx)) * x - (x @ Ax) * dx

    return NewtonProblem(sphere(n, retraction), "tangent", value, derivative,
                         connection=connection or "tangential", name="rayleigh_vf",
                         meta={"A": A, "operator_scale": _opnorm(A)})


def semismooth_sphere_field(A=DEFAULT_A, shift: float = 0.5, retraction: str = "projection",
                            connection=None) -> NewtonProblem:
    """nu(x) = P(x)(A x + max(0, x - shift)) with the a.e. derivative of max as Newton derivative."""
    A = _sym(A)
    n = A.shape[0]
    shift = float(shift)

    def g(x):
        return A @ x + np.maximum(0.0, x - shift)

    def value(x):
        gx = g(x)
        return gx - (x @ gx) * x

    def derivative(x, dx):
        gx = g(x)
        dg = A @ dx + (x > shift) * dx
        return dg - (dx @ gx + x @ dg) * x - (x @ gx) * dx

    return NewtonProblem(sphere(n, retraction), "tangent", value, derivative,
                         connection=connection or "tangential", name="semismooth_vf",
                         meta={"A": A, "shift": shift, "operator_scale": _opnorm(A) + 1.0})


# -- cotangent bundle ----------------------------------------------------------


def rayleigh_functional(A=DEFAULT_A, retraction: str = "projection", connection=None) -> NewtonProblem:
    """Derivative covector of f(x) = x'Ax / 2 on the sphere; extension l_H(x) = A x."""
    A = _sym(A)
    n = A.shape[0]
    return NewtonProblem(sphere(n, retraction), "cotangent",
                         lambda x: A @ x, lambda x, dx: A @ dx,
                         connection=connection or "dual_tangential", name="rayleigh_fn",
                         meta={"A": A, "operator_scale": _opnorm(A)})


def unit_sphere_constraint(n: int) -> ConstraintManifold:
    def sampler(rng):
        x = rng.standard_normal(n)
        return x / np.linalg.norm(x)

    return ConstraintManifold(
        constraint=lambda x: np.array([x @ x - 1.0]),
        jacobian=lambda x: 2.0 * np.asarray(x, dtype=float)[None, :],
        hessian_action=lambda x, u, v: np.array([2.0 * float(np.dot(u, v))]),
        ambient_dim=n,
        n_constraints=1,
        sampler=sampler,
    )


def closest_point_constrained(b=(2.0, 0.0, 0.0), connection=None) -> NewtonProblem:
    """Stationary points of |x - b|^2 / 2 subject to |x|^2 = 1, in Lagrange-Newton form.

    The sphere is handled as a generic constraint manifold, so the dual
    connection uses the multiplier term mu c''(x) instead of P'(x).
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or not np.any(b):
        raise ValueError("b must be a nonzero vector")
    n = b.size
    return NewtonProblem(unit_sphere_constraint(n), "cotangent",
                         lambda x: x - b, lambda x, dx: np.array(dx, dtype=float),
                         connection=connection or "dual_tangential", name="closest_point",
                         meta={"b": b})


# -- trivial bundle ------------------------------------------------------------


def affine_data(n: int = 3, seed: int = AFFINE_SEED):
    rng = np.random.default_rng(seed)
    M = np.eye(n) * 2.0 + 0.5 * rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    return M, b


def affine_trivial(M=None, b=None, n: int = 3, seed: int = AFFINE_SEED) -> NewtonProblem:
    """F(x) = M x - b on R^n with values in a fixed fibre."""
    if M is None or b is None:
        M0, b0 = affine_data(n, seed)
        M = M0 if M is None else M
        b = b0 if b is None else b
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.shape != (b.size, b.size):
        raise ValueError(f"M has shape {M.shape} but b has length {b.size}")
    if np.linalg.cond(M) > 1e12:
        raise ValueError("M must be invertible")
    return NewtonProblem(Euclidean(b.size), "trivial",
                         lambda x: M @ x - b, lambda x, dx: M @ dx,
                         fibre_dim=b.size, name="affine", meta={"M": M, "b": b})


# -- oracles -------------------------------------------------------------------


def eigen_zeros(A) -> List[np.ndarray]:
    """Unit eigenvectors (both signs) of a symmetric matrix with simple spectrum."""
    w, V = np.linalg.eigh(_sym(A))
    out = []
    for j in range(V.shape[1]):
        out += [V[:, j].copy(), -V[:, j]]
    return out


def closest_point_zeros(b) -> List[np.ndarray]:
    u = np.asarray(b, dtype=float) / np.linalg.norm(b)
    return [u, -u]


def affine_zeros(M, b) -> List[np.ndarray]:
    return [np.linalg.solve(M, b)]


def _secular_roots(d, c, lo, hi):
    """Roots of sum_k c_k^2 / (d_k - mu)^2 - 1 on the open interval (lo, hi)."""
    f = lambda mu: float(np.sum(c**2 / (d - mu) ** 2) - 1.0)  # noqa: E731

    def bracket(a, z):
        if f(a) * f(z) < 0:
            return [brentq(f, a, z, xtol=1e-15, rtol=1e-15, maxiter=500)]
        return []

    if np.isinf(lo) or np.isinf(hi):
        # outer interval: f decreases to -1 away from the finite edge
        edge = hi if np.isinf(lo) else lo
        far = edge - 1e6 if np.isinf(lo) else edge + 1e6
        near = edge - 1e-12 if np.isinf(lo) else edge + 1e-12
        return bracket(*sorted((far, near)))
    eps = 1e-12 * (1.0 + abs(hi - lo))
    res = minimize_scalar(f, bounds=(lo + eps, hi - eps), method="bounded",
                          options={"xatol": 1e-14})
    mid = res.x
    if f(mid) >= 0:
        return []
    return bracket(lo + eps, mid) + bracket(mid, hi - eps)


def _secular_candidates(D, r):
    """Unit solutions x of (D - mu I) x = r over all real mu."""
    w, V = np.linalg.eigh(D)
    c = V.T @ r
    live = np.abs(c) > 1e-14
    cands = []
    poles = np.unique(np.round(w[live], 14))
    edges = np.concatenate([[-np.inf], poles, [np.inf]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        for mu in _secular_roots(w[live], c[live], lo, hi):
            cands.append(V[:, live] @ (c[live] / (w[live] - mu)))
    # mu at an eigenvalue whose eigenvector is orthogonal to r: free component along it
    for k in np.flatnonzero(~live):
        rest = live & (np.abs(w - w[k]) > 1e-12)
        part = V[:, rest] @ (c[rest] / (w[rest] - w[k]))
        slack = 1.0 - part @ part
        if slack >= 0:
            t = np.sqrt(slack)
            cands += [part + t * V[:, k], part - t * V[:, k]]
    return cands


def semismooth_zeros(A, shift: float) -> List[np.ndarray]:
    """Zeros of the semismooth field by enumerating the active sets of max(0, x - shift).

    For a fixed active set S the zero condition reads (A + D_S - mu I) x = shift 1_S
    with |x| = 1, a secular equation in mu. Candidates whose own active set differs
    from S are discarded.
    """
    A = _sym(A)
    n = A.shape[0]
    found: List[np.ndarray] = []
    for mask in itertools.product([False, True], repeat=n):
        S = np.array(mask)
        D = A + np.diag(S.astype(float))
        cands = _secular_candidates(D, shift * S.astype(float))
        for x in cands:
            x = x / np.linalg.norm(x)
            active = x > shift
            if np.any(np.abs(x - shift) < 1e-12):
                continue
            if not np.array_equal(active, S):
                continue
            g = A @ x + np.maximum(0.0, x - shift)
            if np.linalg.norm(g - (x @ g) * x) > 1e-10:
                continue
            if not any(np.linalg.norm(x - z) < 1e-9 for z in found):
                found.append(x)
    return found


def nearest_zero(zeros, x) -> tuple:
    """(distance, zero) of the oracle zero closest to x."""
    dists = [float(np.linalg.norm(np.asarray(x) - z)) for z in zeros]
    i = int(np.argmin(dists))
    return dists[i], zeros[i]


# -- registry ------------------------------------------------------------------


@dataclass(frozen=True)
class Param:
    kind: str
    default: object
    help: str


@dataclass(frozen=True)
class ProblemSpec:
    """Registry entry: builder, parameter schema, zero oracle and default start."""

    name: str
    kind: str
    description: str
    params: Dict[str, Param]
    build: Callable
    oracle: Callable
    default_start: Callable
    seeds: Dict[str, int] = field(default_factory=dict)

    def resolve(self, **overrides) -> dict:
        unknown = set(overrides) - set(self.params)
        if unknown:
            raise ValueError(f"problem {self.name!r} has no parameter(s) {sorted(unknown)}")
        out = {k: p.default for k, p in self.params.items()}
        out.update({k: v for k, v in overrides.items() if v is not None})
        return out


def _antipode_start(b, magnitude=0.2):
    """-b/|b| moved by ``magnitude`` along the first tangent basis direction."""
    from .linalg import tangent_basis

    m = Sphere(len(b))
    u = -np.asarray(b, dtype=float) / np.linalg.norm(b)
    return m.retract(u, magnitude * tangent_basis(m, u).columns[:, 0])


REGISTRY: Dict[str, ProblemSpec] = {}


def _register(spec: ProblemSpec):
    REGISTRY[spec.name] = spec


_A_PARAM = Param("matrix", "diag:3,2,1", "symmetric matrix A (diag:a,b,c or file:<path>)")
_RETR_PARAM = Param("choice", "projection", "sphere retraction: projection | skew")

_register(ProblemSpec(
    name="rayleigh_vf",
    kind="tangent",
    description="vector field P(x)Ax on the sphere; zeros are eigenvectors of A",
    params={"A": _A_PARAM, "retraction": _RETR_PARAM},
    build=lambda A, retraction: rayleigh_vector_field(A, retraction),
    oracle=lambda A, retraction: eigen_zeros(A),
    default_start=lambda A, retraction: _normalize(np.eye(len(A))[0] + 0.01 * np.eye(len(A))[1]),
))
_register(ProblemSpec(
    name="rayleigh_fn",
    kind="cotangent",
    description="derivative covector of x'Ax/2 on the sphere (dual connection)",
    params={"A": _A_PARAM, "retraction": _RETR_PARAM},
    build=lambda A, retraction: rayleigh_functional(A, retraction),
    oracle=lambda A, retraction: eigen_zeros(A),
    default_start=lambda A, retraction: _normalize(np.eye(len(A))[0] + 0.01 * np.eye(len(A))[1]),
))
_register(ProblemSpec(
    name="closest_point",
    kind="cotangent",
    description="stationary points of |x-b|^2/2 on |x|^2=1 (Lagrange-Newton form)",
    params={"b": Param("vector", "2,0,0", "target point b (comma separated)")},
    build=lambda b: closest_point_constrained(b),
    oracle=lambda b: closest_point_zeros(b),
    default_start=lambda b: _antipode_start(b),
))
_register(ProblemSpec(
    name="affine",
    kind="trivial",
    description="F(x) = Mx - b on R^n with seeded M, b",
    params={
        "n": Param("int", 3, "dimension"),
        "seed": Param("int", AFFINE_SEED, "seed for M and b"),
    },
    build=lambda n, seed: affine_trivial(n=n, seed=seed),
    oracle=lambda n, seed: affine_zeros(*affine_data(n, seed)),
    default_start=lambda n, seed: np.zeros(n),
    seeds={"affine_data": AFFINE_SEED},
))
_register(ProblemSpec(
    name="semismooth_vf",
    kind="tangent",
    description="P(x)(Ax + max(0, x - shift)) on the sphere with a Newton derivative",
    params={
        "A": _A_PARAM,
        "shift": Param("float", 0.5, "kink location of max(0, x - shift)"),
        "retraction": _RETR_PARAM,
    },
    build=lambda A, shift, retraction: semismooth_sphere_field(A, shift, retraction),
    oracle=lambda A, shift, retraction: semismooth_zeros(A, shift),
    default_start=lambda A, shift, retraction: _normalize(np.eye(len(A))[2] + 0.01 * np.eye(len(A))[0]),
))


def _normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def parse_matrix(text: str) -> np.ndarray:
    """Parse ``diag:a,b,c`` or ``file:<path>`` (whitespace separated rows)."""
    if isinstance(text, np.ndarray):
        return text
    text = str(text).strip()
    if text.startswith("diag:"):
        vals = [float(t) for t in text[5:].split(",") if t.strip()]
        if not vals:
            raise ValueError("diag: needs at least one entry")
        return np.diag(vals)
    if text.startswith("file:"):
        M = np.loadtxt(text[5:], ndmin=2)
        return np.asarray(M, dtype=float)
    raise ValueError(f"matrix literal {text!r} must start with 'diag:' or 'file:'")


def parse_vector(text) -> np.ndarray:
    if isinstance(text, (list, tuple, np.ndarray)):
        return np.asarray(text, dtype=float)
    vals = [float(t) for t in str(text).split(",") if t.strip()]
    if not vals:
        raise ValueError("empty vector literal")
    return np.array(vals)


_PARSERS = {
    "matrix": parse_matrix,
    "vector": parse_vector,
    "int": int,
    "float": float,
    "choice": str,
}


def build(name: str, **overrides):
    """Build a registered problem; returns (problem, parsed parameters, spec)."""
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(REGISTRY)}")
    spec = REGISTRY[name]
    raw = spec.resolve(**overrides)
    params = {k: _PARSERS[spec.params[k].kind](v) for k, v in raw.items()}
    return spec.build(**params), params, spec


def list_problems(filter_text: str = "") -> List[ProblemSpec]:
    return [s for name, s in REGISTRY.items() if filter_text in name]
