"""Local and affine covariant damped Newton methods on vector bundles.

Notation: ``dx`` is the Newton direction at x, ``dxbar`` the simplified Newton
direction for the Newton path problem at damping ``lam`` and trial point
``x_plus = R_x(lam dx)``, and ``theta = |dxbar| / |lam dx|`` the contraction
estimate that drives acceptance and the damping update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .bundle import NewtonProblem, evaluate, newton_operator, residual_norm
from .errors import (
    DegenerateRetraction,
    SingularNewtonOperator,
    TransportError,
    ZeroNewtonDirection,
)
from .geometry.connection import ConnectionMap
from .geometry.transport import TransportKind, fibre_back_transport, back_transport_tangent
from .linalg import NewtonFactorization

CONVERGED = "Converged"
NEWTON_FAILED = "NewtonFailed"
SINGULAR = "SingularOperator"
MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the damped method (defaults follow common NLEQ-ERR practice)."""

    theta_des: float = 0.5
    theta_acc: float = 0.55
    lambda_fail: float = 1e-8
    tol: float = 1e-10
    max_outer: int = 100
    max_inner: int = 30
    initial_lambda: float = 1.0
    zero_step_tol: float = 1e-13

    def __post_init__(self):
        errors = []
        if not 0.0 < self.theta_des < 1.0:
            errors.append(f"theta_des must lie in (0, 1), got {self.theta_des}")
        if not self.theta_acc > self.theta_des:
            errors.append(
                f"theta_acc ({self.theta_acc}) must be greater than theta_des ({self.theta_des})"
            )
        if not 0.0 < self.lambda_fail < 1.0:
            errors.append(f"lambda_fail must lie in (0, 1), got {self.lambda_fail}")
        if not self.tol > 0.0:
            errors.append(f"tol must be positive, got {self.tol}")
        if not 0.0 < self.initial_lambda <= 1.0:
            errors.append(f"initial_lambda must lie in (0, 1], got {self.initial_lambda}")
        if self.max_outer < 1 or self.max_inner < 1:
            errors.append("max_outer and max_inner must be at least 1")
        if errors:
            raise ValueError("; ".join(errors))

    def inner_trial_bound(self) -> int:
        """Worst-case inner trials from lambda = 1 before lambda drops below lambda_fail."""
        return math.ceil(math.log(self.lambda_fail) / math.log(self.theta_des / self.theta_acc))


@dataclass(frozen=True)
class TrialRecord:
    lam: float
    theta: float
    next_lambda: float
    accepted: bool
    transport_failed: bool = False


@dataclass
class IterationRecord:
    """One outer iteration.

    ``lam`` is the damping factor of the accepted step, ``newton_norm`` is
    |dx| at the iterate before the step, and ``residual`` and ``x_snapshot``
    refer to the iterate after the step.
    """

    k: int
    lam: float
    newton_norm: float
    theta: float
    residual: float
    inner_trials: int
    x_snapshot: np.ndarray
    trials: List[TrialRecord] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda": self.lam,
            "newton_norm": self.newton_norm,
            "theta": self.theta,
            "residual": self.residual,
            "inner_trials": self.inner_trials,
        }


@dataclass
class SolveOutcome:
    status: str
    final: np.ndarray
    trace: List[IterationRecord]
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def iterations(self) -> int:
        """Outer iterations that ran the theta test; a lone terminal record counts as one."""
        n = sum(1 for r in self.trace if r.inner_trials > 0)
        return n if n or not self.trace else len(self.trace)


def _resolve(pb, q, transport):
    q = pb.default_connection() if q is None else q
    q.check_compatible(pb)
    transport = q.transport if transport is None else TransportKind(transport)
    return q, transport


def newton_step(pb: NewtonProblem, q: ConnectionMap | None, x):
    """Factorize the Newton operator at x and solve for the Newton direction.

    Returns
    -------
    (dx, factorization, Fx) where Fx is the canonical fibre value F(x).
    """
    op = newton_operator(pb, q, x)
    fac = op.factorize()
    fx = evaluate(pb, x).value
    return fac.solve(fx), fac, fx


def newton_direction(pb: NewtonProblem, q: ConnectionMap | None, x) -> np.ndarray:
    """Solve Q_{F(x)} F'(x) dx + F(x) = 0."""
    return newton_step(pb, q, x)[0]


def theta_estimate(dx, dxbar, lam: float = 1.0) -> float:
    """|dxbar| / |lam dx|."""
    denom = lam * float(np.linalg.norm(dx))
    if denom == 0.0:
        raise ZeroNewtonDirection("theta is undefined for a zero Newton step")
    return float(np.linalg.norm(dxbar)) / denom


def _pullback_hint(pb, x, step):
    # R_x(step) is the trial point, so step is its chart vector when y is the identity
    return step if pb.identity_base else None


def simplified_newton_direction(pb: NewtonProblem, q: ConnectionMap | None, x, x_plus, lam,
                                factorization: NewtonFactorization, fx=None,
                                transport=None, hint=None) -> np.ndarray:
    """Simplified Newton direction for the Newton path problem at damping ``lam``.

    Solves Q F'(x) dxbar + V_{y(x)}^{-1}(y(x_plus)) F(x_plus) - (1 - lam) F(x) = 0
    reusing ``factorization`` from x.
    """
    q, transport = _resolve(pb, q, transport)
    if fx is None:
        fx = evaluate(pb, x).value
    y = pb.base_point(x)
    f_plus = evaluate(pb, x_plus)
    back = fibre_back_transport(pb, transport, y, f_plus.base_y, f_plus.value, hint)
    return factorization.solve(back - (1.0 - lam) * fx)


def local_newton(pb: NewtonProblem, q: ConnectionMap | None, x0, tol: float = 1e-10,
                 max_iter: int = 50, transport=None) -> SolveOutcome:
    """Undamped Newton iteration x <- R_x(dx), stopped once |dx| <= tol.

    Each record carries the theta monitor of the full step, computed from the
    simplified Newton direction at the new point.
    """
    q, transport = _resolve(pb, q, transport)
    x = pb.domain.check_vector(x0, "point").copy()
    trace: List[IterationRecord] = []
    for k in range(max_iter):
        try:
            dx, fac, fx = newton_step(pb, q, x)
        except SingularNewtonOperator as exc:
            return SolveOutcome(SINGULAR, x, trace, str(exc))
        norm = float(np.linalg.norm(dx))
        try:
            x_new = pb.domain.retract(x, dx)
        except DegenerateRetraction as exc:
            return SolveOutcome(NEWTON_FAILED, x, trace, str(exc))
        if norm <= tol:
            trace.append(IterationRecord(k, 1.0, norm, 0.0, residual_norm(pb, x_new), 0, x_new))
            return SolveOutcome(CONVERGED, x_new, trace)
        try:
            dxbar = simplified_newton_direction(
                pb, q, x, x_new, 1.0, fac, fx, transport, _pullback_hint(pb, x, dx)
            )
            theta = theta_estimate(dx, dxbar)
        except TransportError:
            theta = math.inf
        trace.append(IterationRecord(k, 1.0, norm, theta, residual_norm(pb, x_new), 1, x_new))
        x = x_new
    return SolveOutcome(MAX_ITERATIONS, x, trace, f"no convergence in {max_iter} iterations")


def next_lambda(lam: float, theta: float, theta_des: float) -> float:
    """The damping update min(1, lam theta_des / theta)."""
    if theta == 0.0:
        return 1.0
    return min(1.0, lam * theta_des / theta)


def damped_newton(pb: NewtonProblem, q: ConnectionMap | None, x0,
                  cfg: Optional[SolverConfig] = None, transport=None) -> SolveOutcome:
    """Affine covariant damped Newton method along the Newton path.

    Outer loop: compute the Newton direction at x. Inner loop: try
    x_plus = R_x(lam dx), estimate theta from the simplified Newton direction,
    update lam <- min(1, lam theta_des / theta), fail if lam < lambda_fail, and
    accept once theta <= theta_acc. The run stops with ``Converged`` when an
    accepted step has lam = 1, theta <= 1/4 and |dx| <= tol, or when the
    Newton direction itself vanishes.

    Never raises for numerical breakdowns; they are reported as the status.
    """
    cfg = SolverConfig() if cfg is None else cfg
    q, transport = _resolve(pb, q, transport)
    m = pb.domain
    x = m.check_vector(x0, "point").copy()
    lam = cfg.initial_lambda
    trace: List[IterationRecord] = []
    failure_theta = max(2.0 * cfg.theta_acc, 2.0)

    for k in range(cfg.max_outer):
        try:
            dx, fac, fx = newton_step(pb, q, x)
        except SingularNewtonOperator as exc:
            return SolveOutcome(SINGULAR, x, trace, str(exc))
        norm = float(np.linalg.norm(dx))

        if norm <= cfg.zero_step_tol * (1.0 + float(np.linalg.norm(x))):
            # theta is undefined here; F(x) = 0 up to roundoff
            x_new = m.retract(x, dx)
            trace.append(IterationRecord(k, 1.0, norm, 0.0, residual_norm(pb, x_new), 0, x_new))
            return SolveOutcome(CONVERGED, x_new, trace)

        trials: List[TrialRecord] = []
        accepted = None
        while accepted is None:
            if len(trials) >= cfg.max_inner:
                return SolveOutcome(NEWTON_FAILED, x, trace,
                                    f"inner loop exhausted {cfg.max_inner} trials")
            step = lam * dx
            failed = False
            try:
                x_plus = m.retract(x, step)
                dxbar = simplified_newton_direction(
                    pb, q, x, x_plus, lam, fac, fx, transport, _pullback_hint(pb, x, step)
                )
                theta = theta_estimate(dx, dxbar, lam)
            except (TransportError, DegenerateRetraction):
                x_plus, theta, failed = None, failure_theta, True
            if not math.isfinite(theta):
                theta, failed = failure_theta, True
            lam_next = next_lambda(lam, theta, cfg.theta_des)
            ok = theta <= cfg.theta_acc and not failed
            trials.append(TrialRecord(lam, theta, lam_next, ok, failed))
            if lam_next < cfg.lambda_fail:
                return SolveOutcome(NEWTON_FAILED, x, trace,
                                    f"damping factor {lam_next:.3g} fell below lambda_fail")
            if ok:
                accepted = (lam, theta, x_plus)
            lam = lam_next

        step_lam, theta, x = accepted
        trace.append(IterationRecord(k, step_lam, norm, theta, residual_norm(pb, x),
                                     len(trials), x, trials))
        if step_lam == 1.0 and theta <= 0.25 and norm <= cfg.tol:
            return SolveOutcome(CONVERGED, x, trace)
        lam = min(1.0, max(cfg.lambda_fail, lam))

    return SolveOutcome(MAX_ITERATIONS, x, trace, f"no convergence in {cfg.max_outer} iterations")


# -- Newton path diagnostics ---------------------------------------------------


def newton_path_residual(pb: NewtonProblem, x0, x, lam: float, transport=None, hint=None) -> float:
    """|V_{y(x0)}^{-1}(y(x)) F(x) - (1 - lam) F(x0)|."""
    transport = pb.default_transport() if transport is None else TransportKind(transport)
    f0 = evaluate(pb, x0)
    f = evaluate(pb, x)
    back = fibre_back_transport(pb, transport, f0.base_y, f.base_y, f.value, hint)
    return float(np.linalg.norm(back - (1.0 - lam) * f0.value))


def _fibre_projector(pb, x):
    if pb.kind == "trivial":
        return None
    return pb.base.projector(pb.base_point(x))


def _path_velocity(pb, q, x, T):
    """Velocity (x', T') of the differential Newton path in the normalized form.

    x' = -(Q F'(x))^{-1} T and T is carried along by the connection (Q T' = 0),
    so that F(x(lam)) = (1 - lam) T(lam) holds along the exact trajectory.
    """
    P = _fibre_projector(pb, x)
    if P is not None:
        T = P @ T
    fac = newton_operator(pb, q, x).factorize()
    xdot = fac.solve(T)
    if pb.kind == "trivial":
        return xdot, np.zeros_like(T)
    y = pb.base_point(x)
    dy = pb.base_direction(x, xdot)
    dP = pb.base.projector_derivative(y, dy)
    Tdot = dP @ T + P @ q.christoffel_action(pb, x, T, xdot)
    return xdot, Tdot


def integrate_differential_newton_path(pb: NewtonProblem, q: ConnectionMap | None, x0,
                                       steps: int = 64) -> List[np.ndarray]:
    """Classical RK4 on the differential Newton path over lam in [0, 1].

    The right-hand side -(Q F')^{-1} F(x) of the autonomous path equation is
    integrated in the normalized form -(Q F')^{-1} T with T = F / (1 - lam)
    parallel along the path, which is the same curve reparametrized so that it
    reaches the zero at lam = 1. Each step runs in the retraction chart of its
    starting point, so every stage point lies on the manifold.
    """
    q = pb.default_connection() if q is None else q
    q.check_compatible(pb)
    m = pb.domain
    x = m.check_vector(x0, "point").copy()
    T = evaluate(pb, x).value
    path = [x.copy()]
    h = 1.0 / steps
    for _ in range(steps):
        base = x

        def rhs(u, T_):
            xu = m.retract(base, u)
            xdot, Tdot = _path_velocity(pb, q, xu, T_)
            if np.array_equal(xu, base):
                udot = m.projector(base) @ xdot
            else:
                udot = back_transport_tangent(m, base, xu, xdot, TransportKind.RETRACTION, hint=u)
            return udot, Tdot

        u0 = np.zeros_like(x)
        k1u, k1T = rhs(u0, T)
        k2u, k2T = rhs(u0 + 0.5 * h * k1u, T + 0.5 * h * k1T)
        k3u, k3T = rhs(u0 + 0.5 * h * k2u, T + 0.5 * h * k2T)
        k4u, k4T = rhs(u0 + h * k3u, T + h * k3T)
        u = h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        T = T + h / 6.0 * (k1T + 2 * k2T + 2 * k3T + k4T)
        x = m.retract(base, u)
        P = _fibre_projector(pb, x)
        if P is not None:
            T = P @ T
        path.append(x.copy())
    return path
