"""Embedded manifolds in ambient coordinates.

Points, tangent vectors and covectors are plain 1-d numpy arrays of the
ambient dimension. Tangent vectors at ``x`` satisfy ``P(x) v = v``; covectors
act by the Euclidean pairing and are stored with their normal component
removed.

Subclasses provide the membership residual, the tangent projector and a
retraction. Everything else (projector derivative, retraction derivatives,
inverse retraction) has a generic finite-difference / Newton fallback that a
subclass may override with a closed form.
"""

from __future__ import annotations

import numpy as np

from ..errors import (
    DegenerateRetraction,
    DimensionMismatch,
    OutOfInjectivityRegion,
)

MEMBERSHIP_TOL = 1e-10
TANGENCY_TOL = 1e-10


class Manifold:
    """Base class for embedded submanifolds of R^n."""

    name = "manifold"

    def __init__(self, ambient_dim: int, intrinsic_dim: int, membership_tol: float = MEMBERSHIP_TOL):
        if intrinsic_dim > ambient_dim or intrinsic_dim < 0:
            raise ValueError("intrinsic_dim must lie in [0, ambient_dim]")
        self.ambient_dim = int(ambient_dim)
        self.intrinsic_dim = int(intrinsic_dim)
        self.membership_tol = float(membership_tol)

    def __repr__(self):
        return f"{type(self).__name__}(ambient_dim={self.ambient_dim}, intrinsic_dim={self.intrinsic_dim})"

    # -- to be provided by subclasses ---------------------------------------

    def residual(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def projector(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def retract(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- helpers --------------------------------------------------------------

    def check_vector(self, v, what="vector") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.ambient_dim,):
            raise DimensionMismatch(
                f"{what} has shape {v.shape}, expected ({self.ambient_dim},)"
            )
        return v

    def _fixed_point(self, x, v):
        """True when v = 0 at a point of the manifold, so R_x(0) = x can be returned exactly."""
        return not np.any(v) and self.residual(x) <= self.membership_tol

    def contains(self, x) -> bool:
        x = self.check_vector(x, "point")
        return self.residual(x) <= self.membership_tol

    def project_tangent(self, x, v) -> np.ndarray:
        x = self.check_vector(x, "point")
        v = self.check_vector(v)
        return self.projector(x) @ v

    def canonical_covector(self, x, row) -> np.ndarray:
        """Drop the normal component of an ambient row; P is symmetric so this is P(x) row."""
        return self.project_tangent(x, row)

    def is_tangent(self, x, v, tol: float = TANGENCY_TOL) -> bool:
        v = np.asarray(v, dtype=float)
        return np.linalg.norm(self.projector(x) @ v - v) <= tol * max(1.0, np.linalg.norm(v))

    # -- generic fallbacks ----------------------------------------------------

    def projector_derivative(self, x, dx) -> np.ndarray:
        """Directional derivative P'(x)[dx] by central differences along the retraction curve."""
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        ndx = np.linalg.norm(dx)
        if ndx == 0.0:
            return np.zeros((self.ambient_dim, self.ambient_dim))
        h = 1e-5 * (1.0 + np.linalg.norm(x))
        t = h / ndx
        plus = self.projector(self.retract(x, t * dx))
        minus = self.projector(self.retract(x, -t * dx))
        return (plus - minus) / (2.0 * t)

    def retract_derivative(self, x, v, w) -> np.ndarray:
        """R_x'(v) w for tangent v, w at x (central differences)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return np.zeros(self.ambient_dim)
        t = 1e-6 * (1.0 + np.linalg.norm(x) + np.linalg.norm(v)) / nw
        return (self.retract(x, v + t * w) - self.retract(x, v - t * w)) / (2.0 * t)

    def retract_second(self, x, dx, w) -> np.ndarray:
        """Symmetric bilinear R_x''(0_x)(dx, w), by a mixed second difference."""
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        w = np.asarray(w, dtype=float)
        na, nb = np.linalg.norm(dx), np.linalg.norm(w)
        if na == 0.0 or nb == 0.0:
            return np.zeros(self.ambient_dim)
        h = 1e-4 * (1.0 + np.linalg.norm(x))
        a, b = dx * (h / na), w * (h / nb)
        r = self.retract
        mixed = r(x, a + b) - r(x, a - b) - r(x, -a + b) + r(x, -a - b)
        return mixed / (4.0 * h * h) * (na * nb)

    def inverse_retract(self, x, z) -> np.ndarray:
        """Solve retract(x, v) = z for tangent v by Gauss-Newton in tangent coordinates."""
        from ..linalg import tangent_basis

        x = self.check_vector(x, "point")
        z = self.check_vector(z, "point")
        basis = tangent_basis(self, x).columns
        s = basis.T @ (z - x)
        scale = 1.0 + np.linalg.norm(z)
        for _ in range(50):
            v = basis @ s
            try:
                r = self.retract(x, v) - z
            except DegenerateRetraction as exc:
                raise OutOfInjectivityRegion(str(exc)) from exc
            if np.linalg.norm(r) <= 1e-14 * scale:
                return v
            jac = np.column_stack([self.retract_derivative(x, v, b) for b in basis.T])
            step, *_ = np.linalg.lstsq(jac, -r, rcond=None)
            s = s + step
            if not np.all(np.isfinite(s)):
                break
        v = basis @ s
        if np.linalg.norm(self.retract(x, v) - z) <= 1e-10 * scale:
            return v
        raise OutOfInjectivityRegion("inverse retraction did not converge")

    # -- sampling (tests, CLI presets) ----------------------------------------

    def random_tangent(self, x, rng, scale: float = 1.0) -> np.ndarray:
        v = self.projector(x) @ rng.standard_normal(self.ambient_dim)
        n = np.linalg.norm(v)
        return v * (scale / n) if n > 0 else v

    def random_point(self, rng) -> np.ndarray:
        raise NotImplementedError


class Euclidean(Manifold):
    """R^n as a (flat) manifold; retraction is addition."""

    name = "euclidean"

    def __init__(self, n: int):
        super().__init__(n, n)

    def residual(self, x):
        return 0.0

    def projector(self, x):
        return np.eye(self.ambient_dim)

    def projector_derivative(self, x, dx):
        return np.zeros((self.ambient_dim, self.ambient_dim))

    def retract(self, x, v):
        return np.asarray(x, dtype=float) + np.asarray(v, dtype=float)

    def retract_derivative(self, x, v, w):
        return np.asarray(w, dtype=float).copy()

    def retract_second(self, x, dx, w):
        return np.zeros(self.ambient_dim)

    def inverse_retract(self, x, z):
        return np.asarray(z, dtype=float) - np.asarray(x, dtype=float)

    def random_point(self, rng):
        return rng.standard_normal(self.ambient_dim)


class Sphere(Manifold):
    """Unit sphere S^{n-1} in R^n with the metric-projection retraction (x+v)/|x+v|."""

    name = "sphere"
    # inverse retraction is restricted to <x, z> > this value
    injectivity_margin = 0.1

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("sphere needs ambient dimension >= 2")
        super().__init__(n, n - 1)

    def residual(self, x):
        x = np.asarray(x, dtype=float)
        return abs(float(x @ x) - 1.0)

    def projector(self, x):
        x = np.asarray(x, dtype=float)
        return np.eye(self.ambient_dim) - np.outer(x, x)

    def projector_derivative(self, x, dx):
        x = np.asarray(x, dtype=float)
        dx = np.asarray(dx, dtype=float)
        return -(np.outer(dx, x) + np.outer(x, dx))

    def retract(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self._fixed_point(x, v):
            return x.copy()
        y = x + v
        n = np.linalg.norm(y)
        if n < 1e-12:
            raise DegenerateRetraction("x + v vanishes; cannot normalize")
        return y / n

    def retract_derivative(self, x, v, w):
        y = np.asarray(x, dtype=float) + np.asarray(v, dtype=float)
        n = np.linalg.norm(y)
        if n < 1e-12:
            raise DegenerateRetraction("x + v vanishes; cannot normalize")
        u = y / n
        w = np.asarray(w, dtype=float)
        return (w - u * (u @ w)) / n

    def retract_second(self, x, dx, w):
        # tangent dx, w at unit x: only the normal part -x<dx, w> survives
        return -np.asarray(x, dtype=float) * float(np.dot(dx, w))

    def _check_region(self, x, z):
        c = float(np.dot(x, z))
        if c <= self.injectivity_margin:
            raise OutOfInjectivityRegion(
                f"<x, z> = {c:.3g} is not above {self.injectivity_margin}"
            )
        return c

    def inverse_retract(self, x, z):
        x = self.check_vector(x, "point")
        z = self.check_vector(z, "point")
        c = self._check_region(x, z)
        return z / c - x

    def random_point(self, rng):
        x = rng.standard_normal(self.ambient_dim)
        return x / np.linalg.norm(x)


class SkewSphere(Sphere):
    """Unit sphere with a retraction that is *not* second order.

    R_x(v) = normalize(x + v + <P(x) a, v> v) for a fixed ambient vector ``a``.
    The quadratic term is tangent, so the connection induced by differentiating
    this retraction differs from the Levi-Civita (tangential) connection,
    which makes it useful for exhibiting inconsistent transport/connection pairs.
    """

    name = "skew_sphere"

    def __init__(self, n: int, skew=None):
        super().__init__(n)
        if skew is None:
            skew = np.ones(n) / np.sqrt(n)
        self.skew = self.check_vector(skew, "skew vector")

    def _alpha(self, x):
        x = np.asarray(x, dtype=float)
        return self.skew - x * (x @ self.skew)

    def _lift(self, x, v):
        v = np.asarray(v, dtype=float)
        return np.asarray(x, dtype=float) + v + (self._alpha(x) @ v) * v

    def retract(self, x, v):
        x = np.asarray(x, dtype=float)
        if self._fixed_point(x, v):
            return x.copy()
        y = self._lift(x, v)
        n = np.linalg.norm(y)
        if n < 1e-12:
            raise DegenerateRetraction("lifted point vanishes; cannot normalize")
        return y / n

    def retract_derivative(self, x, v, w):
        v = np.asarray(v, dtype=float)
        w = np.asarray(w, dtype=float)
        alpha = self._alpha(x)
        y = self._lift(x, v)
        n = np.linalg.norm(y)
        if n < 1e-12:
            raise DegenerateRetraction("lifted point vanishes; cannot normalize")
        u = y / n
        dy = w + (alpha @ w) * v + (alpha @ v) * w
        return (dy - u * (u @ dy)) / n

    def retract_second(self, x, dx, w):
        alpha = self._alpha(x)
        dx = np.asarray(dx, dtype=float)
        w = np.asarray(w, dtype=float)
        return -np.asarray(x, dtype=float) * float(dx @ w) + (alpha @ dx) * w + (alpha @ w) * dx

    def inverse_retract(self, x, z):
        x = self.check_vector(x, "point")
        z = self.check_vector(z, "point")
        self._check_region(x, z)
        return Manifold.inverse_retract(self, x, z)


class ProductManifold(Manifold):
    """Cartesian product; every operation acts blockwise on the factors."""

    name = "product"

    def __init__(self, *factors: Manifold):
        if not factors:
            raise ValueError("need at least one factor")
        self.factors = tuple(factors)
        super().__init__(
            sum(f.ambient_dim for f in factors),
            sum(f.intrinsic_dim for f in factors),
            min(f.membership_tol for f in factors),
        )
        edges = np.cumsum([0] + [f.ambient_dim for f in factors])
        self._slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def _split(self, v):
        v = np.asarray(v, dtype=float)
        return [v[s] for s in self._slices]

    def _blockdiag(self, blocks):
        out = np.zeros((self.ambient_dim, self.ambient_dim))
        for s, b in zip(self._slices, blocks):
            out[s, s] = b
        return out

    def residual(self, x):
        return max(f.residual(p) for f, p in zip(self.factors, self._split(x)))

    def projector(self, x):
        return self._blockdiag([f.projector(p) for f, p in zip(self.factors, self._split(x))])

    def projector_derivative(self, x, dx):
        return self._blockdiag([
            f.projector_derivative(p, d)
            for f, p, d in zip(self.factors, self._split(x), self._split(dx))
        ])

    def retract(self, x, v):
        return np.concatenate([
            f.retract(p, w) for f, p, w in zip(self.factors, self._split(x), self._split(v))
        ])

    def retract_derivative(self, x, v, w):
        return np.concatenate([
            f.retract_derivative(p, a, b)
            for f, p, a, b in zip(self.factors, self._split(x), self._split(v), self._split(w))
        ])

    def retract_second(self, x, dx, w):
        return np.concatenate([
            f.retract_second(p, a, b)
            for f, p, a, b in zip(self.factors, self._split(x), self._split(dx), self._split(w))
        ])

    def inverse_retract(self, x, z):
        return np.concatenate([
            f.inverse_retract(p, q) for f, p, q in zip(self.factors, self._split(x), self._split(z))
        ])

    def random_point(self, rng):
        return np.concatenate([f.random_point(rng) for f in self.factors])


class ConstraintManifold(Manifold):
    """Level set {x : c(x) = 0} of a submersion c: R^n -> R^k.

    Parameters
    ----------
    constraint : callable
        ``c(x)`` returning a length-k array.
    jacobian : callable
        ``c'(x)`` returning a (k, n) array.
    hessian_action : callable
        ``c''(x)(u, v)`` returning a length-k array (symmetric bilinear in u, v).
    ambient_dim, n_constraints : int

    The retraction restores feasibility of ``x + v`` by damped Gauss-Newton
    (minimum-norm) corrections.
    """

    name = "constraint"
    restoration_max_iter = 20
    restoration_tol = 1e-12

    def __init__(self, constraint, jacobian, hessian_action, ambient_dim, n_constraints,
                 membership_tol=MEMBERSHIP_TOL, sampler=None):
        super().__init__(ambient_dim, ambient_dim - n_constraints, membership_tol)
        self.constraint = constraint
        self.jacobian = jacobian
        self.hessian_action = hessian_action
        self.n_constraints = int(n_constraints)
        self._sampler = sampler

    def _c(self, x):
        return np.atleast_1d(np.asarray(self.constraint(x), dtype=float))

    def _jac(self, x):
        return np.atleast_2d(np.asarray(self.jacobian(x), dtype=float))

    def constraint_jacobian(self, x):
        return self._jac(x)

    def residual(self, x):
        return float(np.linalg.norm(self._c(x)))

    def projector(self, x):
        J = self._jac(x)
        return np.eye(self.ambient_dim) - np.linalg.pinv(J) @ J

    def multiplier(self, x, row):
        """Least-squares lambda with lambda c'(x) ~ -row, i.e. the normal-space balance."""
        J = self._jac(x)
        lam, *_ = np.linalg.lstsq(J.T, -np.asarray(row, dtype=float), rcond=None)
        return lam

    def retract(self, x, v):
        x = np.asarray(x, dtype=float)
        if self._fixed_point(x, v):
            return x.copy()
        z = x + np.asarray(v, dtype=float)
        c = self._c(z)
        res = np.linalg.norm(c)
        for _ in range(self.restoration_max_iter):
            if res <= self.restoration_tol:
                break
            J = self._jac(z)
            step = -np.linalg.pinv(J) @ c
            t = 1.0
            while True:
                trial = z + t * step
                c_trial = self._c(trial)
                r_trial = np.linalg.norm(c_trial)
                if r_trial < res or t < 1e-4:
                    break
                t *= 0.5
            z, c, res = trial, c_trial, r_trial
        else:
            if res > self.restoration_tol:
                raise DegenerateRetraction(
                    f"feasibility restoration stalled at |c| = {res:.3g}"
                )
        # one polishing step so the result is a smooth function of v to machine precision
        J = self._jac(z)
        return z - np.linalg.pinv(J) @ c

    def random_point(self, rng):
        if self._sampler is not None:
            return np.asarray(self._sampler(rng), dtype=float)
        return self.retract(np.zeros(self.ambient_dim), rng.standard_normal(self.ambient_dim))


def sphere_constraint(n: int) -> ConstraintManifold:
    """The unit sphere written as {|x|^2 - 1 = 0}, handled by the generic constraint code."""

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
