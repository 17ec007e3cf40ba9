"""Connection maps derived from back-transports.

A connection turns the ambient directional derivative of a section into an
element of the fibre. In ambient coordinates every kind here has the form

    Q(dx) = P_E(y) (D - B(value, dy)),

where D is the ambient derivative of the extended fibre value, dy the base
direction and B the ``christoffel_action`` of the kind:

==================  =============================================  ==================
kind                B(value, dy)                                   consistent with
==================  =============================================  ==================
tangential          0                                              projection
retraction          R_y''(0)(dy, value)                            retraction
dual_tangential     -P'(y)[dy] value                               projection
dual_retraction     -sum_j <value, R_y''(0)(dy, w_j)> w_j          retraction
==================  =============================================  ==================

On a trivial bundle every kind reduces to the plain derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnsupportedKind
from ..linalg import tangent_basis
from .manifolds import ConstraintManifold
from .transport import TransportKind

CONNECTION_KINDS = ("tangential", "retraction", "dual_tangential", "dual_retraction")
TANGENT_KINDS = ("tangential", "retraction")
COTANGENT_KINDS = ("dual_tangential", "dual_retraction")


def consistent_transport(kind: str) -> TransportKind:
    """The back-transport whose derivative generates connection ``kind``."""
    if kind in ("tangential", "dual_tangential"):
        return TransportKind.PROJECTION
    if kind in ("retraction", "dual_retraction"):
        return TransportKind.RETRACTION
    raise UnsupportedKind(f"unknown connection kind {kind!r}")


def induced_connection(transport, bundle_kind: str) -> "ConnectionMap":
    """The connection obtained by differentiating ``transport`` on a bundle of ``bundle_kind``."""
    transport = TransportKind(transport)
    if bundle_kind == "cotangent":
        kind = "dual_tangential" if transport is TransportKind.PROJECTION else "dual_retraction"
    else:
        kind = "tangential" if transport is TransportKind.PROJECTION else "retraction"
    return ConnectionMap(kind)


def default_connection(bundle_kind: str) -> "ConnectionMap":
    return ConnectionMap("dual_tangential" if bundle_kind == "cotangent" else "tangential")


@dataclass(frozen=True)
class ConnectionMap:
    """Connection of a given kind; stateless, so instances may be shared freely."""

    kind: str

    def __post_init__(self):
        if self.kind not in CONNECTION_KINDS:
            raise UnsupportedKind(
                f"unknown connection kind {self.kind!r}; expected one of {CONNECTION_KINDS}"
            )

    @property
    def transport(self) -> TransportKind:
        return consistent_transport(self.kind)

    def check_compatible(self, pb) -> None:
        if pb.kind == "trivial":
            return
        allowed = TANGENT_KINDS if pb.kind == "tangent" else COTANGENT_KINDS
        if self.kind not in allowed:
            raise UnsupportedKind(
                f"connection kind {self.kind!r} does not act on a {pb.kind} bundle "
                f"(use one of {allowed})"
            )

    def christoffel_action(self, pb, x, value, direction) -> np.ndarray:
        """Bilinear correction B(value, dy) in ambient coordinates."""
        self.check_compatible(pb)
        value = np.asarray(value, dtype=float)
        if pb.kind == "trivial":
            return np.zeros_like(value)
        m = pb.base
        y = pb.base_point(x)
        dy = pb.base_direction(x, direction)
        if self.kind == "tangential":
            return np.zeros_like(value)
        if self.kind == "retraction":
            return m.retract_second(y, dy, m.projector(y) @ value)
        if self.kind == "dual_tangential":
            if isinstance(m, ConstraintManifold):
                # closed form through the multiplier: P P'[dy] l = sum_j mu.c''(dy, w_j) w_j
                mu = m.multiplier(y, value)
                basis = tangent_basis(m, y).columns
                coeff = [float(mu @ np.atleast_1d(m.hessian_action(y, dy, w))) for w in basis.T]
                return -basis @ np.asarray(coeff)
            return -m.projector_derivative(y, dy) @ value
        # dual_retraction
        basis = tangent_basis(m, y).columns
        coeff = [float(value @ m.retract_second(y, dy, w)) for w in basis.T]
        return -basis @ np.asarray(coeff)

    def apply(self, pb, x, direction, derivative=None, value=None):
        """Q_{F(x)} applied to the derivative of F in ``direction``.

        Parameters
        ----------
        pb : NewtonProblem
        x : array
            Point on the domain.
        direction : array
            Tangent vector at x.
        derivative : array, optional
            Ambient directional derivative of the extended fibre value; computed
            from ``pb`` if omitted.
        value : array, optional
            Extended fibre value at x; computed from ``pb`` if omitted.

        Returns
        -------
        FibreElement
        """
        from ..bundle import FibreElement

        self.check_compatible(pb)
        direction = np.asarray(direction, dtype=float)
        if derivative is None:
            derivative = pb.ambient_derivative(x, direction)
        if value is None:
            value = pb.ambient_value(x)
        derivative = np.asarray(derivative, dtype=float)
        y = pb.base_point(x)
        out = derivative - self.christoffel_action(pb, x, value, direction)
        if pb.kind != "trivial":
            out = pb.base.projector(y) @ out
        return FibreElement(y, out, pb.kind)
