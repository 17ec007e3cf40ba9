"""Sections of vector bundles: the problem abstraction consumed by the solvers.

A :class:`NewtonProblem` describes F: X -> E through an *ambient extension*:
``value(x)`` returns an ambient vector whose canonical representative (tangent
projection for tangent and cotangent bundles, nothing for a trivial bundle) is
F(x), and ``derivative(x, dx)`` returns the ambient directional derivative of
that extension. For tangent bundles the extension must itself be tangent at
points of X (e.g. ``Ax - (x'Ax) x`` on the sphere); cotangent extensions may
carry an arbitrary normal part, which the dual connection accounts for.

The derivative may be any generalized (Newton) derivative; the solver never
differentiates ``value`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, EvaluationFailure, UnsupportedKind
from .geometry.connection import ConnectionMap, consistent_transport, default_connection
from .geometry.manifolds import ConstraintManifold, Manifold
from .linalg import NewtonFactorization, TangentBasis, assemble_matrix, fibre_basis, tangent_basis

BUNDLE_KINDS = ("tangent", "cotangent", "trivial")


@dataclass(frozen=True)
class FibreElement:
    """A value of F in the fibre over ``base_y``."""

    base_y: np.ndarray
    value: np.ndarray
    kind: str

    def norm(self) -> float:
        return float(np.linalg.norm(self.value))

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol


def _call(fn, *args):
    try:
        out = fn(*args)
    except Exception as exc:  # user code
        raise EvaluationFailure(f"problem callback failed: {exc!r}") from exc
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class NewtonProblem:
    """A section F of a vector bundle over ``domain``.

    Parameters
    ----------
    domain : Manifold
    kind : {'tangent', 'cotangent', 'trivial'}
    value : callable
        ``value(x)`` -> ambient extension of F(x).
    derivative : callable
        ``derivative(x, dx)`` -> ambient directional derivative of ``value``.
    base : Manifold, optional
        Base manifold M of the bundle; defaults to ``domain``.
    base_map, base_map_derivative : callable, optional
        y(x) and y'(x)dx; default to the identity.
    fibre_dim : int, optional
        Dimension of the fixed fibre for trivial bundles.
    connection : str, optional
        Default connection kind used when the caller passes none.
    meta : dict, optional
        Free-form problem data. The key ``"operator_scale"`` (float) is an upper
        size estimate of the derivative terms; the singularity test measures the
        smallest singular value of the Newton matrix against it, which catches
        operators that vanish through cancellation inside ``derivative``.
    """

    domain: Manifold
    kind: str
    value: Callable
    derivative: Callable
    base: Optional[Manifold] = None
    base_map: Optional[Callable] = None
    base_map_derivative: Optional[Callable] = None
    fibre_dim: Optional[int] = None
    connection: Optional[str] = None
    name: str = "problem"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in BUNDLE_KINDS:
            raise UnsupportedKind(f"bundle kind must be one of {BUNDLE_KINDS}, got {self.kind!r}")
        if self.base is None:
            object.__setattr__(self, "base", self.domain)
        if self.kind == "trivial":
            if self.fibre_dim is None:
                object.__setattr__(self, "fibre_dim", self.domain.intrinsic_dim)
        elif self.base_map is None and self.base is not self.domain:
            raise DimensionMismatch("a separate base manifold needs a base_map")

    # -- plumbing -------------------------------------------------------------

    @property
    def identity_base(self) -> bool:
        return self.base_map is None

    def base_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.base_map is None:
            return x
        return _call(self.base_map, x)

    def base_direction(self, x, dx) -> np.ndarray:
        dx = np.asarray(dx, dtype=float)
        if self.base_map is None:
            return dx
        if self.base_map_derivative is None:
            raise UnsupportedKind("base_map given without base_map_derivative")
        return _call(self.base_map_derivative, np.asarray(x, dtype=float), dx)

    def ambient_value(self, x) -> np.ndarray:
        out = _call(self.value, np.asarray(x, dtype=float))
        self._check_fibre_shape(out)
        return out

    def ambient_derivative(self, x, dx) -> np.ndarray:
        out = _call(self.derivative, np.asarray(x, dtype=float), np.asarray(dx, dtype=float))
        self._check_fibre_shape(out)
        return out

    def _check_fibre_shape(self, v):
        n = self.fibre_dim if self.kind == "trivial" else self.base.ambient_dim
        if v.shape != (n,):
            raise DimensionMismatch(f"fibre value has shape {v.shape}, expected ({n},)")

    def default_connection(self) -> ConnectionMap:
        if self.connection is not None:
            return ConnectionMap(self.connection)
        return default_connection(self.kind)

    def default_transport(self):
        return consistent_transport(self.default_connection().kind)

    def scaled(self, S) -> "NewtonProblem":
        """Same problem with the residual left-multiplied by a fixed matrix (trivial kind only)."""
        if self.kind != "trivial":
            raise UnsupportedKind("fibre rescaling is only defined for trivial bundles")
        S = np.asarray(S, dtype=float)
        value, deriv = self.value, self.derivative
        return NewtonProblem(
            domain=self.domain,
            kind="trivial",
            value=lambda x: S @ np.asarray(value(x), dtype=float),
            derivative=lambda x, dx: S @ np.asarray(deriv(x, dx), dtype=float),
            fibre_dim=self.fibre_dim,
            connection=self.connection,
            name=self.name,
            meta=_scaled_meta(self.meta, S),
        )


def _scaled_meta(meta: dict, S) -> dict:
    out = dict(meta)
    if "operator_scale" in out:
        out["operator_scale"] = float(out["operator_scale"]) * float(np.linalg.norm(S, 2))
    return out


def canonicalize(pb: NewtonProblem, y, value) -> np.ndarray:
    if pb.kind == "trivial":
        return np.asarray(value, dtype=float)
    return pb.base.projector(y) @ value


def evaluate(pb: NewtonProblem, x) -> FibreElement:
    """F(x) as a canonical fibre element over y(x)."""
    x = pb.domain.check_vector(x, "point")
    y = pb.base_point(x)
    return FibreElement(y, canonicalize(pb, y, pb.ambient_value(x)), pb.kind)


def residual_norm(pb: NewtonProblem, x) -> float:
    """||F(x)|| in the ambient Euclidean norm of the fibre."""
    return evaluate(pb, x).norm()


@dataclass
class NewtonOperator:
    """Q_{F(x)} o F'(x) at a fixed x, materialized on tangent and fibre bases."""

    problem: NewtonProblem
    connection: ConnectionMap
    x: np.ndarray
    tangent: TangentBasis
    fibre: TangentBasis
    matrix: np.ndarray
    scale: float = 0.0

    def apply(self, dx) -> np.ndarray:
        """Action through the connection (no basis round trip)."""
        return self.connection.apply(self.problem, self.x, dx).value

    def matvec(self, dx) -> np.ndarray:
        """Action through the assembled matrix."""
        return self.fibre.vector(self.matrix @ self.tangent.coords(dx))

    def factorize(self, basis: TangentBasis | None = None) -> NewtonFactorization:
        if basis is None or basis is self.tangent:
            return NewtonFactorization(self.matrix, self.tangent, self.fibre, self.scale)
        matrix = assemble_matrix(self.apply, basis, self.fibre)
        return NewtonFactorization(matrix, basis, self.fibre, self.scale)


def newton_operator(pb: NewtonProblem, q: ConnectionMap | None, x) -> NewtonOperator:
    """Assemble the covariant derivative Q_{F(x)} o F'(x) as a dense matrix."""
    q = pb.default_connection() if q is None else q
    q.check_compatible(pb)
    x = pb.domain.check_vector(x, "point")
    value = pb.ambient_value(x)
    tb = tangent_basis(pb.domain, x)
    fb = fibre_basis(pb, x)

    # size of the uncancelled terms, so an operator that is zero up to rounding
    # is recognized as singular
    scale = float(pb.meta.get("operator_scale", 0.0))

    def act(t):
        nonlocal scale
        d = pb.ambient_derivative(x, t)
        c = q.christoffel_action(pb, x, value, t)
        scale = max(scale, float(np.linalg.norm(d) + np.linalg.norm(c)))
        return q.apply(pb, x, t, derivative=d, value=value).value

    matrix = assemble_matrix(act, tb, fb)
    return NewtonOperator(pb, q, x, tb, fb, matrix, scale)


@dataclass(frozen=True)
class LagrangeData:
    """Multiplier of a cotangent problem on a constraint manifold.

    ``normal_defect`` is the size of the normal-space part of
    f_H'(x) + mu c'(x); it vanishes after the least-squares multiplier solve.
    """

    multiplier: np.ndarray
    normal_defect: float
    hessian_action: Callable

    def curvature_term(self, x, u, v) -> float:
        return float(self.multiplier @ np.atleast_1d(self.hessian_action(x, u, v)))


def lagrange_data(pb: NewtonProblem, x) -> LagrangeData:
    m = pb.domain
    if pb.kind != "cotangent" or not isinstance(m, ConstraintManifold):
        raise UnsupportedKind("Lagrange data needs a cotangent problem on a constraint manifold")
    x = np.asarray(x, dtype=float)
    row = pb.ambient_value(x)
    mu = m.multiplier(x, row)
    J = m.constraint_jacobian(x)
    total = row + J.T @ mu
    normal = total - m.projector(x) @ total
    return LagrangeData(mu, float(np.linalg.norm(normal)), m.hessian_action)
