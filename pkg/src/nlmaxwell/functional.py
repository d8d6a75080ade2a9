"""Energy functional, its derivatives, and the splitting used by the reduction.

``J(u) = 1/2 <mu^-1 curl u, curl u> - 1/2 <V u, u> - sum_cells vol F(x_c, (A u)_c)``

where ``A`` averages edge values to cell-centre vectors (midpoint rule).
The quadratic part is ``Q = K - M_V``.  With respect to the spectral split
``X = X+ (+) X~``, ``X~ = V~ (+) W``, the energy reads
``J(u) = 1/2 Q(u+) - I(u)`` with
``I(u) = -1/2 Q(v~) + 1/2 ||w||_V^2 + Phi(u)``.
"""

from __future__ import annotations

import json
import math
import warnings

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, NumericError
from .linalg import SPDSolver
from .material import MaterialTensors, NonlinearityModel, certify_convex
from .mesh import BoxGrid
from .spectrum import MaxwellOperators, SpectralSplit, spectral_split

__all__ = ["EnergyContext", "quadrature_nonlinear"]


def quadrature_nonlinear(model: NonlinearityModel, A: sp.csr_matrix, vol, u: np.ndarray,
                         hessian: bool = False, delta: float | None = None):
    """``Phi(u) = sum_c vol_c F((A u)_c)`` with its gradient and Hessian.

    Args:
        model: Nonlinearity.
        A: Averaging operator to ``3 * n_cells`` cell components.
        vol: Cell volume (scalar or per-cell array).
        u: Coefficient vector.
        hessian: Also return the sparse Hessian ``A^T diag(vol H) A``.
        delta: Regularization for ``p < 4`` pure powers; default ``1e-8``
            times the field scale.

    Returns:
        ``(Phi, grad)`` or ``(Phi, grad, H)`` with ``grad`` a dual vector.
    """
    C = A.shape[0] // 3
    U = (A @ u).reshape(C, 3)
    if delta is None:
        delta = 1e-8 * float(np.max(np.abs(U))) if U.size else 0.0
    out = model.evaluate(U, n_cells=C, hessian=hessian, delta=delta)
    F, f = out[0], out[1]
    volv = np.broadcast_to(np.asarray(vol, dtype=float), (C,))
    Phi = float(np.dot(volv, F))
    if not math.isfinite(Phi):
        bad = int(np.flatnonzero(~np.isfinite(F))[0]) if np.any(~np.isfinite(F)) else -1
        raise NumericError(f"non-finite energy density in cell {bad}")
    grad = A.T @ (volv[:, None] * f).ravel()
    if not hessian:
        return Phi, grad
    Hb = volv[:, None, None] * out[2]
    D = sp.bsr_matrix((Hb, np.arange(C), np.arange(C + 1)), shape=(3 * C, 3 * C)).tocsr()
    H = (A.T @ D @ A).tocsr()
    return Phi, grad, H


class EnergyContext:
    """Discrete energy for one grid, material set and nonlinearity.

    The context exposes the small interface used by the reduction module:
    ``Q``, ``M`` (metric), ``nonlinear``, ``tilde_basis``/``theta`` for the
    finite-dimensional negative part, ``G``/``L`` for the gradient part, and
    ``riesz`` for gradients in the energy metric.

    Args:
        grid: Box grid.
        materials: Material tensors.
        model: Nonlinearity model.
        split: Precomputed spectral split (computed lazily otherwise).
        threshold: Splitting level (1 for the energy functional).
        ops: Preassembled operators.
    """

    has_gradients = True

    def __init__(self, grid: BoxGrid, materials: MaterialTensors, model: NonlinearityModel,
                 split: SpectralSplit | None = None, threshold: float = 1.0,
                 ops: MaxwellOperators | None = None, eig_tol: float = 1e-9):
        self.grid = grid
        self.materials = materials
        self.model = model
        self.threshold = float(threshold)
        self.eig_tol = eig_tol
        self.ops = ops or MaxwellOperators(grid, materials)
        self.M = self.ops.M
        self.K = self.ops.K
        self.Q = (self.K - self.M).tocsr()
        self.A = grid.A
        self.vol = grid.vol
        self.G = grid.G
        self.L = self.ops.helmholtz.L
        self.Minv = self.ops.Minv
        self._split = split
        self._riesz = None
        self._convex = None
        self._L_solver = self.ops.helmholtz.solver

    # -- spectral data ----------------------------------------------------------

    @property
    def split(self) -> SpectralSplit:
        if self._split is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._split = spectral_split(self.grid, self.ops.materials, threshold=self.threshold,
                                             tol=self.eig_tol, ops=self.ops)
            self.check_plus_norm()
        return self._split

    def check_plus_norm(self, samples: int = 3, rng_seed: int = 0) -> float:
        """Verify ``Q(v) >= (lam+ - 1)/lam+ * curl energy`` on random ``v`` in X+.

        Returns the smallest observed ratio margin.

        Raises:
            NumericError: the X+ norm fails to dominate the curl energy.
        """
        sp_ = self._split
        lam = sp_.lambda_plus_min
        if lam is None or not np.isfinite(lam):
            return float("inf")
        rng = np.random.default_rng(rng_seed)
        worst = float("inf")
        for _ in range(samples):
            v = self.project_plus(rng.standard_normal(self.n))
            kv = float(v @ (self.K @ v))
            if kv <= 0:
                continue
            margin = (self.quad(v) - (lam - 1.0) / lam * kv) / kv
            worst = min(worst, margin)
            if margin < -1e-8:
                raise NumericError(f"X+ norm check failed (margin {margin:.3e})")
        return worst

    @property
    def tilde_basis(self) -> np.ndarray:
        return self.split.tilde_basis

    @property
    def plus_modes(self) -> tuple[np.ndarray, np.ndarray]:
        """Computed eigenfields above the threshold and their eigenvalues."""
        sp_ = self.split
        sel = sp_.eigenvalues > self.threshold
        return sp_.eigenfields[:, sel], sp_.eigenvalues[sel]

    @property
    def theta(self) -> np.ndarray:
        """``Q(b) = lam - 1`` on the M-orthonormal tilde basis (all ``<= 0``)."""
        return self.split.tilde_eigenvalues - 1.0

    @property
    def L_solver(self) -> SPDSolver:
        return self._L_solver

    @property
    def n(self) -> int:
        return self.grid.n_edges

    # -- projections --------------------------------------------------------------

    def project_W(self, u):
        return self.ops.helmholtz.project_W(u)

    def project_tilde_V(self, u):
        B = self.tilde_basis
        return B @ (B.T @ (self.M @ u))

    def project_plus(self, u):
        u = np.asarray(u, dtype=float)
        return self.ops.helmholtz.project_V(u) - self.project_tilde_V(u)

    def project_tilde(self, u):
        return np.asarray(u, dtype=float) - self.project_plus(u)

    # -- energy and derivatives ----------------------------------------------------

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n,):
            raise InvalidInputError(f"field has shape {u.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(u)):
            raise NumericError("field has non-finite entries")
        return u

    def nonlinear(self, u, hessian: bool = False, delta: float | None = None):
        return quadrature_nonlinear(self.model, self.A, self.vol, u, hessian, delta)

    def quad(self, u, v=None) -> float:
        v = u if v is None else v
        return float(u @ (self.Q @ v))

    def energy(self, u) -> float:
        """``J(u)``."""
        u = self._check(u)
        Phi, _ = self.nonlinear(u)
        return 0.5 * self.quad(u) - Phi

    def dual_gradient(self, u) -> np.ndarray:
        """``J'(u)`` as a dual vector: ``(J'(u)[phi] = r . phi)``."""
        u = self._check(u)
        _, g = self.nonlinear(u)
        return self.Q @ u - g

    def gradient(self, u) -> np.ndarray:
        """Riesz representative in the V-weighted product."""
        return self.Minv(self.dual_gradient(u))

    def residual_norm(self, u) -> float:
        """``||J'(u)||`` in the dual of the V-weighted norm."""
        return float(self.Minv.norm(self.dual_gradient(u)))

    def norm_V(self, u) -> float:
        return float(math.sqrt(max(u @ (self.M @ u), 0.0)))

    def certified(self, u, tol: float = 1e-7) -> bool:
        """Weak-solution certificate ``residual <= tol (1 + ||u||_V)``."""
        return self.residual_norm(u) <= tol * (1.0 + self.norm_V(u))

    def hessian(self, u, delta: float | None = None) -> sp.csr_matrix:
        """Sparse ``J''(u) = Q - Phi''(u)``."""
        _, _, H = self.nonlinear(self._check(u), hessian=True, delta=delta)
        return (self.Q - H).tocsr()

    def second_directional(self, u, psi, phi=None, delta: float | None = None) -> float:
        """``J''(u)[psi, phi]`` (``phi`` defaults to ``psi``)."""
        phi = psi if phi is None else phi
        H = self.hessian(u, delta)
        return float(np.asarray(psi) @ (H @ np.asarray(phi)))

    # -- splitting -------------------------------------------------------------------

    def norm_plus(self, u) -> float:
        """``||u+|| = sqrt(Q(u+))``."""
        up = self.project_plus(u)
        return math.sqrt(max(self.quad(up), 0.0))

    def I_split(self, u) -> float:
        """``I(u) = -1/2 Q(v~) + 1/2 ||w||_V^2 + Phi(u)`` from the projections."""
        u = self._check(u)
        w = self.project_W(u)
        vt = self.project_tilde_V(u)
        Phi, _ = self.nonlinear(u)
        return -0.5 * self.quad(vt) + 0.5 * float(w @ (self.M @ w)) + Phi

    def energy_split(self, u) -> float:
        """``1/2 ||u+||^2 - I(u)``, an independent assembly of ``J``."""
        up = self.project_plus(u)
        return 0.5 * self.quad(up) - self.I_split(u)

    def riesz(self, r) -> np.ndarray:
        """Solve ``(K + M) g = r``: gradients in the energy metric."""
        if self._riesz is None:
            self._riesz = SPDSolver((self.K + self.M).tocsr(), tol=1e-10)
        return self._riesz.solve(r)

    def convexity_certificate(self):
        if self._convex is None:
            self._convex = certify_convex(self.model)
        return self._convex

    def diagnostics(self, u, tol: float = 1e-7) -> dict:
        """JSON-ready record of energies, residual and certificates."""
        u = self._check(u)
        Phi, _ = self.nonlinear(u)
        up = self.project_plus(u)
        w = self.project_W(u)
        vt = self.project_tilde_V(u)
        res = self.residual_norm(u)
        nu = self.norm_V(u)
        nplus = math.sqrt(max(self.quad(up), 0.0))
        return {
            "J": self.energy(u),
            "residual_norm": res,
            "norm_V": nu,
            "Q_plus": self.quad(up),
            "Q_tilde": self.quad(vt),
            "W_norm_sq": float(w @ (self.M @ w)),
            "F_integral": Phi,
            "certificates": {
                "weak_solution": bool(res <= tol * (1.0 + nu)),
                "v_plus_nonzero": bool(self.norm_V(up) > 1e-6 * nu) if nu > 0 else False,
                "convex_model": bool(self.convexity_certificate().passed),
            },
            "plus_norm": nplus,
        }

    def diagnostics_json(self, u, tol: float = 1e-7) -> str:
        return json.dumps(self.diagnostics(u, tol), indent=2, sort_keys=True)

