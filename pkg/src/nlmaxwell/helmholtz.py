"""Weighted Helmholtz splitting of edge fields into V-divergence-free and gradient parts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .linalg import SPDSolver
from .mesh import BoxGrid, edge_mass

__all__ = ["HelmholtzSplit", "HelmholtzProjector", "decompose", "project_V", "project_W"]


@dataclass
class HelmholtzSplit:
    """Result of :func:`decompose`: ``u = v + w`` with ``w = grad(potential)``."""

    v: np.ndarray
    w: np.ndarray
    potential: np.ndarray
    solver_residual: float
    residual_history: list[float]


def _mass(grid: BoxGrid, V):
    if sp.issparse(V):
        return sp.csr_matrix(V)
    return edge_mass(grid, V)


class HelmholtzProjector:
    """Reusable splitter for one grid and one weight ``V``.

    The weighted Poisson operator ``L = G^T M_V G`` is set up once; each split
    costs one solve.  Inputs may be single fields or ``(n_edges, m)`` blocks.

    Args:
        grid: The box grid.
        V: Material tensors, a tensor field, or an assembled edge mass matrix.
        tol: Relative residual target of the potential solve.
    """

    def __init__(self, grid: BoxGrid, V, tol: float = 1e-12):
        if not tol > 0:
            raise InvalidInputError("tol must be positive")
        self.grid = grid
        self.M = _mass(grid, V)
        self.tol = float(tol)
        self.L = (grid.G.T @ self.M @ grid.G).tocsr()
        self.solver = SPDSolver(self.L, tol=tol)

    def potential(self, u: np.ndarray) -> np.ndarray:
        return self.solver.solve(self.grid.G.T @ (self.M @ u))

    def decompose(self, u) -> HelmholtzSplit:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.grid.n_edges:
            raise InvalidInputError(f"edge field has {u.shape[0]} rows, expected {self.grid.n_edges}")
        phi = self.potential(u)
        hist = list(self.solver.last_history)
        w = self.grid.G @ phi
        return HelmholtzSplit(u - w, w, phi, hist[-1] if hist else 0.0, hist)

    def project_V(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u - self.grid.G @ self.potential(u)

    def project_W(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.grid.G @ self.potential(u)

    __call__ = project_V


def decompose(grid: BoxGrid, V, u, tol: float = 1e-12) -> HelmholtzSplit:
    """Split ``u = v + w`` with ``div(V v) = 0`` and ``w`` a discrete gradient.

    Solves ``div(V grad phi) = div(V u)`` for ``phi`` vanishing on the
    boundary, then sets ``w = grad phi`` and ``v = u - w``.  The split is
    orthogonal in the ``V``-weighted product.  On domains with enclosed
    cut-outs, curl-free fields that are not gradients stay in ``v``.

    Raises:
        SolverError: the potential solve missed ``tol`` within the iteration cap.
    """
    return HelmholtzProjector(grid, V, tol).decompose(grid.check_edge_field(u))


def project_V(grid: BoxGrid, V, u, tol: float = 1e-12) -> np.ndarray:
    return decompose(grid, V, u, tol).v


def project_W(grid: BoxGrid, V, u, tol: float = 1e-12) -> np.ndarray:
    return decompose(grid, V, u, tol).w
