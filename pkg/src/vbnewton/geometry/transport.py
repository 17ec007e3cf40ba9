"""Vector and covector back-transports on embedded manifolds.

Two families are provided:

``projection``
    V_x^{-1}(xi) w = P(x) w for tangent vectors and P(x) P(xi) l for covectors.
``retraction``
    V_x^{-1}(xi) = R_x'(v)^{-1} with v = R_x^{-1}(xi) for tangent vectors and the
    adjoint R_x'(v)^* for covectors.

Each back-transport also has a forward partner (``forward_tangent``) against
which the covector version satisfies the pairing identity.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from ..errors import SingularTransport
from ..linalg import tangent_basis


class TransportKind(str, Enum):
    PROJECTION = "projection"
    RETRACTION = "retraction"


def _kind(kind) -> TransportKind:
    return TransportKind(kind)


def _chart_vector(m, x, xi, hint):
    if hint is not None:
        return np.asarray(hint, dtype=float)
    return m.inverse_retract(x, xi)


def _forward_columns(m, x, v, basis):
    return np.column_stack([m.retract_derivative(x, v, t) for t in basis.columns.T])


def back_transport_tangent(m, x, xi, w, kind=TransportKind.PROJECTION, hint=None) -> np.ndarray:
    """Carry a tangent vector ``w`` at ``xi`` back to T_x m.

    Parameters
    ----------
    hint : array, optional
        Known chart vector v with retract(x, v) = xi; skips the inverse retraction.
    """
    kind = _kind(kind)
    x = m.check_vector(x, "point")
    xi = m.check_vector(xi, "point")
    w = m.check_vector(w)
    if np.array_equal(x, xi):
        return w.copy()
    if kind is TransportKind.PROJECTION:
        return m.projector(x) @ w
    v = _chart_vector(m, x, xi, hint)
    basis = tangent_basis(m, x)
    J = _forward_columns(m, x, v, basis)
    sv = np.linalg.svd(J, compute_uv=False)
    if sv.size and sv[-1] <= 1e-12 * max(1.0, sv[0]):
        raise SingularTransport("retraction derivative is not invertible on the tangent space")
    s, *_ = np.linalg.lstsq(J, m.projector(xi) @ w, rcond=None)
    return basis.vector(s)


def back_transport_covector(m, x, xi, ell, kind=TransportKind.PROJECTION, hint=None) -> np.ndarray:
    """Carry a covector ``ell`` at ``xi`` back to T*_x m (canonical representative)."""
    kind = _kind(kind)
    x = m.check_vector(x, "point")
    xi = m.check_vector(xi, "point")
    ell = m.check_vector(ell, "covector")
    if np.array_equal(x, xi):
        return m.projector(x) @ ell
    if kind is TransportKind.PROJECTION:
        return m.projector(x) @ (m.projector(xi) @ ell)
    v = _chart_vector(m, x, xi, hint)
    basis = tangent_basis(m, x)
    J = _forward_columns(m, x, v, basis)
    return basis.vector(J.T @ ell)


def forward_tangent(m, x, xi, v_tan, kind=TransportKind.PROJECTION, hint=None) -> np.ndarray:
    """The forward transport T_x m -> T_xi m whose adjoint is the covector back-transport."""
    kind = _kind(kind)
    v_tan = m.check_vector(v_tan)
    if np.array_equal(np.asarray(x), np.asarray(xi)):
        return m.projector(xi) @ v_tan
    if kind is TransportKind.PROJECTION:
        return m.projector(xi) @ v_tan
    v = _chart_vector(m, x, xi, hint)
    return m.retract_derivative(x, v, v_tan)


def fibre_back_transport(pb, kind, y, eta, value, hint=None) -> np.ndarray:
    """Back-transport a fibre value over ``eta`` into the fibre over ``y`` for a problem's bundle."""
    value = np.asarray(value, dtype=float)
    if pb.kind == "trivial":
        return value.copy()
    if pb.kind == "tangent":
        return back_transport_tangent(pb.base, y, eta, value, kind, hint)
    return back_transport_covector(pb.base, y, eta, value, kind, hint)
