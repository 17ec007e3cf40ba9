"""Tangent bases and the reduced dense Newton solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import DimensionMismatch, RankDeficiency, SingularNewtonOperator

CONDITION_LIMIT = 1e12
RANK_TOL = 1e-8


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal columns spanning a tangent space (or a fibre)."""

    base: np.ndarray
    columns: np.ndarray

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def coords(self, v) -> np.ndarray:
        return self.columns.T @ np.asarray(v, dtype=float)

    def vector(self, s) -> np.ndarray:
        return self.columns @ np.asarray(s, dtype=float)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    U = U.copy()
    for j in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, j]) > 1e-14)
        if nz.size and U[nz[0], j] < 0:
            U[:, j] = -U[:, j]
    return U


def basis_from_projector(P: np.ndarray, dim: int, base=None) -> TangentBasis:
    """Deterministic orthonormal basis of range(P) via SVD.

    Columns follow descending singular value; each column is signed so that
    its first nonzero entry is positive.
    """
    P = np.asarray(P, dtype=float)
    U, s, _ = np.linalg.svd(P)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    rank = int(np.sum(s > RANK_TOL * scale)) if s.size and s[0] > 0 else 0
    if rank != dim:
        raise RankDeficiency(f"projector has numerical rank {rank}, expected {dim}")
    base = np.zeros(P.shape[0]) if base is None else np.asarray(base, dtype=float)
    return TangentBasis(base, _fix_signs(U[:, :dim]))


def tangent_basis(m, x) -> TangentBasis:
    """Orthonormal basis of T_x m built from the SVD of the projector P(x)."""
    x = m.check_vector(x, "point")
    return basis_from_projector(m.projector(x), m.intrinsic_dim, base=x)


def fibre_basis(pb, x) -> TangentBasis:
    """Orthonormal basis of the fibre E_{y(x)} of a problem."""
    y = pb.base_point(x)
    if pb.kind == "trivial":
        return TangentBasis(y, np.eye(pb.fibre_dim))
    return tangent_basis(pb.base, y)


@dataclass(frozen=True)
class ReducedSystem:
    """Newton matrix and right-hand side in basis coordinates."""

    matrix: np.ndarray
    rhs: np.ndarray
    condition_estimate: float


def assemble_matrix(apply, tangent: TangentBasis, fibre: TangentBasis) -> np.ndarray:
    """matrix[i, j] = <fibre_i, apply(tangent_j)>."""
    if tangent.dim != fibre.dim:
        raise DimensionMismatch(
            f"tangent dimension {tangent.dim} differs from fibre dimension {fibre.dim}"
        )
    cols = [fibre.coords(apply(t)) for t in tangent.columns.T]
    if not cols:
        return np.zeros((0, 0))
    return np.column_stack(cols)


class NewtonFactorization:
    """LU factors of the reduced Newton matrix, kept for the simplified Newton solves.

    ``solve(b)`` returns the ambient tangent vector dx with ``op(dx) + b = 0``.
    """

    def __init__(self, matrix, tangent: TangentBasis, fibre: TangentBasis, scale: float = 0.0):
        matrix = np.asarray(matrix, dtype=float)
        self.matrix = matrix
        self.tangent = tangent
        self.fibre = fibre
        if matrix.size == 0:
            self.condition = 1.0
            self._lu = None
            return
        if not np.all(np.isfinite(matrix)):
            raise SingularNewtonOperator("Newton matrix has non-finite entries")
        sv = np.linalg.svd(matrix, compute_uv=False)
        # relative to the larger of the matrix norm and the size of the terms it
        # was assembled from, so rounding noise left by cancellation is singular
        top = max(sv[0], scale)
        cond = float(top / sv[-1]) if sv[-1] > 0 else np.inf
        if not np.isfinite(cond) or cond > CONDITION_LIMIT:
            raise SingularNewtonOperator(
                f"Newton matrix condition number {cond:.3g} exceeds {CONDITION_LIMIT:.0e}",
                condition=cond,
            )
        self.condition = cond
        self._lu = lu_factor(matrix)

    def reduced(self, b) -> ReducedSystem:
        return ReducedSystem(self.matrix, self.fibre.coords(b), self.condition)

    def solve_coords(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros(0)
        return -lu_solve(self._lu, rhs)

    def solve(self, b) -> np.ndarray:
        return self.tangent.vector(self.solve_coords(self.fibre.coords(b)))


def solve_newton_system(op, b, basis: TangentBasis | None = None) -> np.ndarray:
    """Solve op(dx) + b = 0 for a tangent vector dx.

    Parameters
    ----------
    op : NewtonOperator or NewtonFactorization
        Operator assembled at x (see :func:`vbnewton.bundle.newton_operator`).
    b : FibreElement or array
        Right-hand side in the fibre over y(x).
    basis : TangentBasis, optional
        Tangent basis to use instead of the operator's own.
    """
    value = getattr(b, "value", b)
    if isinstance(op, NewtonFactorization):
        fac = op
    else:
        fac = op.factorize(basis)
    return fac.solve(value)
