"""Numerical property checks for a configured problem at a given point.

These back the ``check`` CLI subcommand and are reused by the test-suite.
Each check returns a :class:`CheckResult` with the measured defect and the
tolerance it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .bundle import evaluate, newton_operator
from .geometry.connection import induced_connection
from .geometry.transport import (
    TransportKind,
    back_transport_covector,
    back_transport_tangent,
    fibre_back_transport,
    forward_tangent,
)
from .linalg import tangent_basis

FD_STEP = 1e-5
FD_TOL = 1e-5
RETRACTION_TOL = 1e-6
PROJECTOR_TOL = 1e-10
PAIRING_TOL = 1e-12
TANGENCY_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    defect: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.defect <= self.tol)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: defect={self.defect:.3e} tol={self.tol:.0e}"


def retraction_axioms(m, x, v) -> float:
    """max(|R_x(0) - x|, |d/dt R_x(tv)|_{t=0} - v|) with a central difference."""
    v = m.projector(x) @ np.asarray(v, dtype=float)
    h = 1e-6
    at_zero = float(np.linalg.norm(m.retract(x, np.zeros_like(x)) - x))
    fd = (m.retract(x, h * v) - m.retract(x, -h * v)) / (2.0 * h)
    return max(at_zero, float(np.linalg.norm(fd - v)))


def projector_laws(m, x) -> float:
    """max of idempotence, symmetry and trace defects of P(x)."""
    P = m.projector(x)
    return max(
        float(np.abs(P @ P - P).max()),
        float(np.abs(P - P.T).max()),
        abs(float(np.trace(P)) - m.intrinsic_dim),
    )


def covector_pairing(m, x, xi, ell, v, kind) -> float:
    """|<back(ell), v> - <ell, forward(v)>| for tangent v at x."""
    v = m.projector(x) @ v
    ell = m.projector(xi) @ ell
    back = back_transport_covector(m, x, xi, ell, kind)
    return abs(float(back @ v) - float(ell @ forward_tangent(m, x, xi, v, kind)))


def transported_section_derivative(pb, x, dx, transport, h: float = FD_STEP) -> np.ndarray:
    """Central difference of t -> V_{y(x)}^{-1}(y(g(t))) F(g(t)) with g(t) = R_x(t dx)."""
    m = pb.domain
    y = pb.base_point(x)

    def transported(t):
        z = m.retract(x, t * dx)
        f = evaluate(pb, z)
        hint = t * dx if pb.identity_base else None
        return fibre_back_transport(pb, transport, y, f.base_y, f.value, hint)

    return (transported(h) - transported(-h)) / (2.0 * h)


def connection_consistency(pb, q, x, dx, transport, h: float = FD_STEP) -> float:
    """|FD derivative of the back-transported section - Q F'(x) dx|."""
    fd = transported_section_derivative(pb, x, dx, transport, h)
    return float(np.linalg.norm(fd - q.apply(pb, x, dx).value))


def operator_consistency(pb, q, x, dx, transport, h: float = FD_STEP) -> float:
    """Same as :func:`connection_consistency` but through the assembled matrix."""
    fd = transported_section_derivative(pb, x, dx, transport, h)
    return float(np.linalg.norm(fd - newton_operator(pb, q, x).matvec(dx)))


def tangency_defect(pb, q, x, lam: float, transport) -> float:
    """Relative gap between the first Newton direction of the Newton path problem and lam dx.

    The Newton path problem at damping ``lam`` has residual
    G(z) = V_{y(x)}^{-1}(y(z)) F(z) - (1 - lam) F(x) in the fixed fibre over y(x);
    its derivative at z = x is the connection induced by ``transport``. The
    undamped direction dx is computed with the connection ``q``. Both agree
    exactly when ``q`` and ``transport`` are consistent.
    """
    f = evaluate(pb, x)
    g = fibre_back_transport(pb, transport, f.base_y, f.base_y, f.value) - (1.0 - lam) * f.value
    path_op = newton_operator(pb, induced_connection(transport, pb.kind), x).factorize()
    dx_path = path_op.solve(g)
    dx = newton_operator(pb, q, x).factorize().solve(f.value)
    ref = float(np.linalg.norm(lam * dx))
    gap = float(np.linalg.norm(dx_path - lam * dx))
    if ref == 0.0:
        return gap
    return gap / ref


def run_checks(pb, q, x, transport, rng=None, n_dirs: int = 3,
               lambdas=(0.25, 0.5, 1.0)) -> List[CheckResult]:
    """The full property suite at x, as used by the ``check`` CLI subcommand."""
    rng = np.random.default_rng(0) if rng is None else rng
    m = pb.domain
    transport = TransportKind(transport)
    results = [CheckResult("projector_laws", projector_laws(m, x), PROJECTOR_TOL)]
    dirs = [m.random_tangent(x, rng) for _ in range(n_dirs)]
    results.append(CheckResult(
        "retraction_axioms", max(retraction_axioms(m, x, v) for v in dirs), RETRACTION_TOL
    ))
    basis = tangent_basis(m, x)
    results.append(CheckResult(
        "tangent_basis", float(np.abs(m.projector(x) @ basis.columns - basis.columns).max()),
        PROJECTOR_TOL,
    ))
    if pb.kind != "trivial":
        w = m.random_tangent(x, rng)
        ident = back_transport_tangent(m, x, x, w, transport)
        results.append(CheckResult("transport_identity", float(np.linalg.norm(ident - w)), 0.0))
    if pb.kind == "cotangent":
        # covectors come back as canonical representatives, so only up to rounding
        ell = m.random_tangent(x, rng)
        ident = back_transport_covector(m, x, x, ell, transport)
        results.append(CheckResult("covector_identity", float(np.linalg.norm(ident - ell)),
                                   PROJECTOR_TOL))
        xi = m.retract(x, 0.1 * dirs[0])
        worst = max(
            covector_pairing(m, x, xi, rng.standard_normal(m.ambient_dim), v, transport)
            for v in dirs
        )
        results.append(CheckResult("covector_pairing", worst, PAIRING_TOL))
    results.append(CheckResult(
        "connection_consistency",
        max(connection_consistency(pb, q, x, v, transport) for v in dirs), FD_TOL,
    ))
    results.append(CheckResult(
        "operator_consistency",
        max(operator_consistency(pb, q, x, v, transport) for v in dirs), FD_TOL,
    ))
    results.append(CheckResult(
        "tangency", max(tangency_defect(pb, q, x, lam, transport) for lam in lambdas), TANGENCY_TOL
    ))
    return results
