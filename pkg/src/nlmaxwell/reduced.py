"""Azimuthal reduction for fields ``u = alpha(r, x3) (-x2, x1, 0)``.

For such fields ``curl mu^-1 curl u = (L alpha) (-x2, x1, 0)`` with

``L alpha = -mu^-1 (alpha_rr + (3/r) alpha_r + alpha_zz)``,

and the energy per unit ``2 pi`` reads
``int int [1/2 mu^-1 r^3 |grad alpha|^2 - 1/2 V r^3 alpha^2 - F(r alpha e_theta) r] dr dz``.

The ``(r, x3)`` grid has radial nodes ``r_i = (i + 1/2) h_r`` (``i = 0..nr``,
``r_nr = R``) and axial nodes ``z_j = j h_z``.  The radial part is a finite
volume scheme with exact ``r^3`` cell measures, so it is exact for
``alpha`` linear in ``r^2``; the axial part is the standard second
difference, exact for cubics.  Dirichlet values sit at ``r = R`` and
``z in {0, L}``; no ghost value is needed at the axis because the face
weight ``r^3`` vanishes there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, SymmetryError
from .functional import quadrature_nonlinear
from .linalg import SPDSolver
from .material import NonlinearityModel, certify_convex
from .mesh import BoxGrid

__all__ = [
    "CylGrid",
    "CylField",
    "ReducedContext",
    "ReducedSolution",
    "reduced_apply",
    "reduced_matrices",
    "interpolate",
    "lift",
    "cylinder_grid",
    "reduced_tau_solver",
    "lift_residual",
]

DENSE_LIMIT = 2500


@dataclass(frozen=True)
class CylGrid:
    """Half-plane grid ``0 <= r <= R``, ``0 <= x3 <= L``.

    Args:
        R: Cylinder radius.
        L: Cylinder height.
        nr: Number of radial unknowns (nodes ``r_0..r_{nr-1}``).
        nz: Number of axial intervals.
    """

    R: float
    L: float
    nr: int
    nz: int

    def __post_init__(self):
        if not (self.R > 0 and self.L > 0):
            raise InvalidInputError("R and L must be positive")
        if self.nr < 2 or self.nz < 4:
            raise InvalidInputError("need nr >= 2 and nz >= 4")

    @property
    def h_r(self) -> float:
        return self.R / (self.nr + 0.5)

    @property
    def h_z(self) -> float:
        return self.L / self.nz

    @property
    def r(self) -> np.ndarray:
        """Radial nodes ``r_0..r_nr`` (the last one is the wall)."""
        return (np.arange(self.nr + 1) + 0.5) * self.h_r

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.nz + 1) * self.h_z

    @property
    def faces(self) -> np.ndarray:
        """Radial cell faces ``rho_0..rho_nr`` (``rho_0 = 0``)."""
        return np.arange(self.nr + 1) * self.h_r

    @property
    def w3(self) -> np.ndarray:
        """``int r^3 dr`` over each radial cell."""
        f = self.faces
        return (f[1:] ** 4 - f[:-1] ** 4) / 4.0

    @property
    def w1(self) -> np.ndarray:
        """``int r dr`` over each radial cell."""
        f = self.faces
        return (f[1:] ** 2 - f[:-1] ** 2) / 2.0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nr, self.nz - 1)

    @property
    def n(self) -> int:
        return self.nr * (self.nz - 1)

    def interior(self, full: np.ndarray) -> np.ndarray:
        full = np.asarray(full, dtype=float)
        if full.shape != (self.nr + 1, self.nz + 1):
            raise InvalidInputError(f"expected shape {(self.nr + 1, self.nz + 1)}, got {full.shape}")
        return full[: self.nr, 1 : self.nz].ravel()

    def full(self, vec: np.ndarray) -> np.ndarray:
        """Pad an interior vector with zero Dirichlet values."""
        out = np.zeros((self.nr + 1, self.nz + 1))
        out[: self.nr, 1 : self.nz] = np.asarray(vec, dtype=float).reshape(self.shape)
        return out

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(r, z)`` on all nodes (shape ``(nr+1, nz+1)``)."""
        rr, zz = np.meshgrid(self.r, self.z, indexing="ij")
        return np.asarray(func(rr, zz), dtype=float) * np.ones_like(rr)


@dataclass
class CylField:
    """Coefficients of ``alpha tau + beta rho + gamma zeta`` on a :class:`CylGrid`.

    Arrays have shape ``(nr + 1, nz + 1)`` and include the boundary nodes.
    """

    grid: CylGrid
    alpha: np.ndarray
    beta: np.ndarray | None = None
    gamma: np.ndarray | None = None

    def __post_init__(self):
        shp = (self.grid.nr + 1, self.grid.nz + 1)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != shp:
            raise InvalidInputError(f"alpha must have shape {shp}")
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            setattr(self, name, np.zeros(shp) if v is None else np.asarray(v, dtype=float))
            if getattr(self, name).shape != shp:
                raise InvalidInputError(f"{name} must have shape {shp}")


# -- operators -----------------------------------------------------------------------


def _diff(n_int: int, with_left_boundary: bool) -> sp.csr_matrix:
    """Differences from interior unknowns to faces (Dirichlet ends)."""
    if with_left_boundary:
        # faces between (j-1, j) for j = 1..n_int+1 ; values at both ends are 0
        D = sp.diags([np.ones(n_int), -np.ones(n_int)], [0, -1], shape=(n_int + 1, n_int))
    else:
        # faces between (i, i+1) for i = 0..n_int-1 ; right end is 0, no left face
        D = sp.diags([-np.ones(n_int), np.ones(n_int - 1)], [0, 1], shape=(n_int, n_int))
    return D.tocsr()


def _profile(cyl: CylGrid, V) -> np.ndarray:
    """Interior node values of a scalar profile (number, callable or full array)."""
    if callable(V):
        return cyl.interior(cyl.sample(V))
    arr = np.asarray(V, dtype=float)
    if arr.ndim == 0:
        return np.full(cyl.n, float(arr))
    if arr.shape == (cyl.nr + 1, cyl.nz + 1):
        return cyl.interior(arr)
    if arr.shape == cyl.shape or arr.shape == (cyl.n,):
        return arr.ravel().copy()
    raise InvalidInputError(f"profile shape {arr.shape} does not match the grid")


def reduced_matrices(cyl: CylGrid, mu_inv: float = 1.0):
    """``(K, M1)``: stiffness and unit ``r^3`` mass on interior unknowns (with ``2 pi``)."""
    nr, nzi = cyl.shape
    hr, hz = cyl.h_r, cyl.h_z
    Dr = _diff(nr, False)
    rho = cyl.faces[1:]
    Kr = Dr.T @ sp.diags(rho**3 / hr) @ Dr
    Dz = _diff(nzi, True)
    Kz = Dz.T @ Dz / hz
    K = 2.0 * math.pi * mu_inv * (sp.kron(Kr, hz * sp.eye(nzi)) + sp.kron(sp.diags(cyl.w3), Kz))
    M1 = 2.0 * math.pi * sp.kron(sp.diags(cyl.w3), hz * sp.eye(nzi))
    return K.tocsr(), M1.tocsr()


def reduced_apply(cyl: CylGrid, alpha_full, mu_inv: float = 1.0) -> np.ndarray:
    """Strong form ``L alpha`` at interior nodes from a full node array.

    Boundary entries of ``alpha_full`` are used as given, so smooth test
    functions need not vanish on the boundary.

    Returns:
        Array of shape ``(nr, nz - 1)``.
    """
    a = np.asarray(alpha_full, dtype=float)
    if a.shape != (cyl.nr + 1, cyl.nz + 1):
        raise InvalidInputError("alpha_full must include boundary nodes")
    hr, hz = cyl.h_r, cyl.h_z
    f = cyl.faces
    flux = (f[1:, None] ** 3) * (a[1:, :] - a[:-1, :]) / hr  # at faces rho_1..rho_nr
    left = np.vstack([np.zeros((1, a.shape[1])), flux[:-1]])
    Lr = (flux - left) / cyl.w3[:, None]
    Lz = (a[: cyl.nr, 2:] - 2.0 * a[: cyl.nr, 1:-1] + a[: cyl.nr, :-2]) / hz**2
    return -mu_inv * (Lr[:, 1:-1] + Lz)


# -- interpolation and lifting ----------------------------------------------------------


def _interp_weights_z(cyl: CylGrid, z: np.ndarray):
    nz = cyl.nz
    j0 = np.clip(np.floor(z / cyl.h_z).astype(int) - 1, 0, nz - 3)
    nodes = j0[:, None] + np.arange(4)[None, :]
    zn = nodes * cyl.h_z
    w = np.ones((z.size, 4))
    for a in range(4):
        for b in range(4):
            if a != b:
                w[:, a] *= (z - zn[:, b]) / (zn[:, a] - zn[:, b])
    return nodes, w


def interpolate(cyl: CylGrid, values: np.ndarray, r, z) -> np.ndarray:
    """Interpolate node values: linear in ``r^2``, cubic Lagrange in ``z``.

    Points beyond ``R`` or outside ``[0, L]`` give 0.  The scheme is exact
    for functions linear in ``r^2`` and cubic in ``z``.
    """
    r = np.asarray(r, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    s_nodes = cyl.r**2
    s = r**2
    i = np.clip(np.searchsorted(s_nodes, s) - 1, 0, cyl.nr - 1)
    t = (s - s_nodes[i]) / (s_nodes[i + 1] - s_nodes[i])
    nodes, w = _interp_weights_z(cyl, z)
    v0 = np.einsum("pk,pk->p", values[i[:, None], nodes], w)
    v1 = np.einsum("pk,pk->p", values[i[:, None] + 1, nodes], w)
    out = (1.0 - t) * v0 + t * v1
    outside = (r > cyl.R * (1 + 1e-12)) | (z < -1e-12 * cyl.L) | (z > cyl.L * (1 + 1e-12))
    out[outside] = 0.0
    return out


def lift(cyl: CylGrid, fld: CylField | np.ndarray, grid: BoxGrid, center=None,
         free_only: bool = True) -> np.ndarray:
    """Sample ``alpha tau + beta rho + gamma zeta`` on the edges of a box grid.

    The cylinder axis runs through ``center`` (default: the box centre in
    ``x1, x2``) with ``x3`` measured from the bottom face.
    """
    if not isinstance(fld, CylField):
        fld = CylField(cyl, fld)
    c = _center(grid, center)
    pts, axes = grid.edge_points(free_only=free_only)
    x = pts[:, 0] - c[0]
    y = pts[:, 1] - c[1]
    r = np.hypot(x, y)
    z = pts[:, 2]
    out = np.zeros(len(axes))
    a = interpolate(cyl, fld.alpha, r, z)
    b = interpolate(cyl, fld.beta, r, z) if np.any(fld.beta) else np.zeros_like(a)
    g = interpolate(cyl, fld.gamma, r, z) if np.any(fld.gamma) else np.zeros_like(a)
    m0, m1, m2 = axes == 0, axes == 1, axes == 2
    out[m0] = -y[m0] * a[m0] + x[m0] * b[m0]
    out[m1] = x[m1] * a[m1] + y[m1] * b[m1]
    out[m2] = g[m2]
    return out


def _center(grid: BoxGrid, center):
    if center is None:
        return (0.5 * grid.extents[0], 0.5 * grid.extents[1])
    return (float(center[0]), float(center[1]))


def cylinder_grid(R: float, L: float, n: int, nz: int | None = None) -> BoxGrid:
    """Box ``[0, 2R]^2 x [0, L]`` masked to the cells whose centre lies in ``r < R``."""
    nz = nz or n
    g = BoxGrid((2 * R, 2 * R, L), (n, n, nz))
    cc = g.cell_centers().reshape(n, n, nz, 3)
    mask = np.hypot(cc[..., 0] - R, cc[..., 1] - R) < R
    return BoxGrid((2 * R, 2 * R, L), (n, n, nz), mask=mask)


# -- energy context -------------------------------------------------------------------------


def _check_model(model: NonlinearityModel) -> None:
    if not model.is_even:
        raise SymmetryError("the S1 reduction needs a nonlinearity that is even in u")
    if np.ndim(model.chi3) or np.ndim(model.chi5) or np.ndim(model.gamma):
        raise SymmetryError("the reduced solver needs spatially constant coefficients")
    if model.kind in ("double_power_piecewise", "double_power_smooth"):
        M = np.asarray(model.M, dtype=float)
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        c, s = math.cos(0.7), math.sin(0.7)
        R2 = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        for Rot in (R, R2):
            if not np.allclose(M.T @ M @ Rot, Rot @ M.T @ M, atol=1e-12):
                raise SymmetryError("matrix M does not commute with rotations about x3")


class ReducedContext:
    """Energy context for the azimuthal problem (duck-types ``EnergyContext``).

    ``Q = K - M_V`` is split with respect to the pencil ``(Q, M1)``, where
    ``M1`` is the unit ``r^3`` mass.  Eigenvectors with ``Q``-eigenvalue
    ``<= 0`` span the finite-dimensional negative part; there is no gradient
    part because azimuthal fields are divergence free.

    Args:
        cyl: Half-plane grid.
        model: Even nonlinearity.
        V: Scalar, callable ``V(r, z)`` or node array.
        mu_inv: Scalar inverse permeability.
        n_modes: Initial number of eigenpairs.
    """

    has_gradients = False
    G = None
    L = None
    L_solver = None

    def __init__(self, cyl: CylGrid, model: NonlinearityModel, V=0.0, mu_inv: float = 1.0,
                 n_modes: int = 8):
        _check_model(model)
        if not mu_inv > 0:
            raise InvalidInputError("mu_inv must be positive")
        self.cyl = cyl
        self.model = model
        self.mu_inv = float(mu_inv)
        self.V = _profile(cyl, V)
        self.K, self.M = reduced_matrices(cyl, mu_inv)
        self.MV = (self.M @ sp.diags(self.V)).tocsr()
        self.Q = (self.K - self.MV).tocsr()
        self._Mdiag = self.M.diagonal()
        r = np.repeat(cyl.r[: cyl.nr], cyl.nz - 1)
        self._r = r
        nl_w = 2.0 * math.pi * np.repeat(cyl.w1, cyl.nz - 1) * cyl.h_z
        # alpha -> (0, r alpha, 0) per node, quadrature weight r dr dz
        n = cyl.n
        self.A = sp.csr_matrix((r, (3 * np.arange(n) + 1, np.arange(n))), shape=(3 * n, n))
        self.vol = nl_w
        self._convex = None
        self._riesz = None
        self._spectrum(n_modes)

    @property
    def n(self) -> int:
        return self.cyl.n

    def _spectrum(self, k: int) -> None:
        n = self.n
        if n <= DENSE_LIMIT:
            lam, X = sla.eigh(self.Q.toarray(), self.M.toarray())
        else:
            shift = -float(np.max(self.V)) - 1.0
            while True:
                kk = min(k, n - 2)
                lam, X = spla.eigsh(self.Q, k=kk, M=self.M, sigma=shift, which="LM")
                o = np.argsort(lam)
                lam, X = lam[o], X[:, o]
                if np.any(lam > 0) or kk == n - 2:
                    break
                k *= 2
        neg = lam <= 0
        self.theta = lam[neg]
        self.tilde_basis = X[:, neg]
        pos = ~neg
        self._plus = (X[:, pos][:, :k], lam[pos][:k])
        self.eigenvalues = lam[:k] if lam.size > k else lam

    @property
    def plus_modes(self):
        return self._plus

    # -- same interface as EnergyContext ----------------------------------------------

    def nonlinear(self, u, hessian: bool = False, delta: float | None = None):
        return quadrature_nonlinear(self.model, self.A, self.vol, u, hessian, delta)

    def quad(self, u, v=None) -> float:
        v = u if v is None else v
        return float(u @ (self.Q @ v))

    def energy(self, u) -> float:
        Phi, _ = self.nonlinear(u)
        return 0.5 * self.quad(u) - Phi

    def dual_gradient(self, u) -> np.ndarray:
        _, g = self.nonlinear(u)
        return self.Q @ u - g

    def gradient(self, u) -> np.ndarray:
        return self.dual_gradient(u) / self._Mdiag

    def residual_norm(self, u) -> float:
        r = self.dual_gradient(u)
        return float(math.sqrt(max(float(r @ (r / self._Mdiag)), 0.0)))

    def norm_V(self, u) -> float:
        return float(math.sqrt(max(float(u @ (self.M @ u)), 0.0)))

    def hessian(self, u, delta: float | None = None) -> sp.csr_matrix:
        _, _, H = self.nonlinear(u, hessian=True, delta=delta)
        return (self.Q - H).tocsr()

    def project_plus(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        B = self.tilde_basis
        if B.shape[1] == 0:
            return u.copy()
        return u - B @ (B.T @ (self.M @ u))

    def riesz(self, r) -> np.ndarray:
        if self._riesz is None:
            self._riesz = SPDSolver((self.K + self.M).tocsr(), tol=1e-12)
        return self._riesz.solve(r)

    def convexity_certificate(self):
        if self._convex is None:
            self._convex = certify_convex(self.model)
        return self._convex

    def field(self, u) -> CylField:
        return CylField(self.cyl, self.cyl.full(u))


@dataclass
class ReducedSolution:
    """Result of :func:`reduced_tau_solver`."""

    field: CylField
    c_N: float
    residual_norm: float
    converged: bool
    report: object
    lift_residual: float | None = None
    certificates: dict = field(default_factory=dict)


def lift_residual(cyl: CylGrid, fld: CylField, grid: BoxGrid, model: NonlinearityModel,
                  V: float = 0.0, mu_inv: float = 1.0) -> float:
    """3D residual of a lifted reduced solution relative to the curl-curl term.

    Measures discretization mismatch between the two grids (it decreases
    under refinement of both), not solver accuracy.

    ``V`` is a constant; its sign is unrestricted, so the residual is measured
    in the unit-mass dual norm.
    """
    from .mesh import edge_mass, face_mass

    u = lift(cyl, fld, grid)
    M1 = edge_mass(grid, 1.0)
    K = (grid.C.T @ face_mass(grid, mu_inv) @ grid.C).tocsr()
    _, g = quadrature_nonlinear(model, grid.A, grid.vol, u)
    r = K @ u - V * (M1 @ u) - g
    d = M1.diagonal()
    Ku = K @ u
    ref = math.sqrt(float(Ku @ (Ku / d)))
    return math.sqrt(float(r @ (r / d))) / ref if ref > 0 else 0.0


def reduced_tau_solver(cyl: CylGrid, model: NonlinearityModel, V=0.0, mu_inv: float = 1.0,
                       starts: int = 4, tol: float = 1e-7, rng_seed: int = 0,
                       certify_grid: BoxGrid | None = None, **kwargs) -> ReducedSolution:
    """Ground state of the azimuthal problem by the Nehari reduction.

    Args:
        cyl: Half-plane grid.
        model: Even nonlinearity.
        V: Potential profile (scalar, callable or node array).
        mu_inv: Scalar inverse permeability.
        starts: Number of start directions.
        tol: Residual tolerance.
        rng_seed: Seed of the start directions.
        certify_grid: Optional 3D grid for a lifted residual report
            (constant ``V`` only).
        kwargs: Passed on to :func:`nlmaxwell.nehari.ground_state`.
    """
    from .nehari import ground_state

    ctx = ReducedContext(cyl, model, V, mu_inv)
    rep = ground_state(ctx, starts=starts, tol=tol, rng_seed=rng_seed, **kwargs)
    if rep.best is None:
        return ReducedSolution(CylField(cyl, np.zeros((cyl.nr + 1, cyl.nz + 1))), math.nan,
                               math.nan, False, rep)
    best = rep.best
    fld = ctx.field(best.u)
    lr = None
    if certify_grid is not None and np.ndim(V) == 0 and not callable(V):
        lr = lift_residual(cyl, fld, certify_grid, model, float(V), mu_inv)
    return ReducedSolution(fld, best.c_N, best.residual_norm, best.converged, rep, lr,
                           dict(best.certificates))
