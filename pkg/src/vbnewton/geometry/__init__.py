"""Embedded manifolds, back-transports and connection maps."""

from .connection import (
    CONNECTION_KINDS,
    ConnectionMap,
    consistent_transport,
    default_connection,
    induced_connection,
)
from .manifolds import (
    ConstraintManifold,
    Euclidean,
    Manifold,
    ProductManifold,
    SkewSphere,
    Sphere,
    sphere_constraint,
)
from .transport import (
    TransportKind,
    back_transport_covector,
    back_transport_tangent,
    fibre_back_transport,
    forward_tangent,
)


def project_tangent(m, x, v):
    """P(x) v for an ambient vector v."""
    return m.project_tangent(x, v)


def retract(m, x, v):
    return m.retract(m.check_vector(x, "point"), m.check_vector(v))


def inverse_retract(m, x, z):
    return m.inverse_retract(x, z)


def connection_apply(q, pb, x, direction, fibre_derivative=None):
    """Q_{F(x)} applied to F'(x)[direction]; see :meth:`ConnectionMap.apply`."""
    return q.apply(pb, x, direction, derivative=fibre_derivative)


__all__ = [
    "CONNECTION_KINDS",
    "ConnectionMap",
    "ConstraintManifold",
    "Euclidean",
    "Manifold",
    "ProductManifold",
    "SkewSphere",
    "Sphere",
    "TransportKind",
    "back_transport_covector",
    "back_transport_tangent",
    "connection_apply",
    "consistent_transport",
    "default_connection",
    "fibre_back_transport",
    "forward_tangent",
    "induced_connection",
    "inverse_retract",
    "project_tangent",
    "retract",
    "sphere_constraint",
]
