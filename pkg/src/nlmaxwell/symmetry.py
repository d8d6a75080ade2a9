"""Cylindrical symmetry toolkit and the exact radial oracle.

Fields equivariant under rotations about the ``x3`` axis decompose as
``u = alpha tau + beta rho + gamma zeta`` with ``tau = (-x2, x1, 0)``,
``rho = (x1, x2, 0)`` and ``zeta = (0, 0, 1)`` (coordinates relative to the
axis through the centre of the square cross-section).

On the grid, the profiles are piecewise linear in ``r`` (hat functions on
nodes ``r_m = m h``) and independent per ``x3`` plane.  The ``tau`` part is
generated from the stream function ``psi = -int_0^r s alpha(s) ds`` by the
discrete dual curl, so it is exactly divergence free; ``rho`` and ``zeta``
parts are sampled.  ``group_average`` is the least-squares projection onto
this span, hence exactly idempotent.

The involution ``S1`` flips the sign of the ``rho`` and ``zeta`` parts and
``S2 = -S1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidInputError, OracleInapplicableError, SymmetryError
from .mesh import BoxGrid
from .reduced import (
    CylField,
    CylGrid,
    ReducedContext,
    ReducedSolution,
    lift,
    reduced_apply,
    reduced_tau_solver,
)

__all__ = [
    "EquivariantCoefficients",
    "group_average",
    "rotation_average",
    "split_tau_rho_zeta",
    "reconstruct",
    "equivariance_defect",
    "s1_apply",
    "s2_apply",
    "project_S1",
    "project_S2",
    "mirror_x3",
    "symmetry_report",
    "RadialOracle",
    "RadialReport",
    "radial_oracle",
    "verify_radial",
    "CylGrid",
    "CylField",
    "ReducedContext",
    "ReducedSolution",
    "lift",
    "reduced_apply",
    "reduced_tau_solver",
]

SVD_RTOL = 1e-10


# -- equivariant basis ------------------------------------------------------------------


def _axis(grid: BoxGrid) -> tuple[float, float]:
    (Lx, Ly, _), (nx, ny, _) = grid.extents, grid.resolution
    if abs(Lx - Ly) > 1e-12 * max(Lx, Ly) or nx != ny:
        raise SymmetryError(
            f"rotations about x3 need a square cross-section, got {Lx} x {Ly} with {nx} x {ny} cells")
    return 0.5 * Lx, 0.5 * Ly


def _hat(r: np.ndarray, nodes: np.ndarray, m: int) -> np.ndarray:
    d = nodes[1] - nodes[0]
    return np.clip(1.0 - np.abs(r - nodes[m]) / d, 0.0, None)


def _hat_moment(r: np.ndarray, nodes: np.ndarray, m: int) -> np.ndarray:
    """``int_0^r s phi_m(s) ds`` in closed form."""
    d = nodes[1] - nodes[0]
    rm = nodes[m]
    out = np.zeros_like(r)
    pieces = []
    if m > 0:
        pieces.append((rm - d, rm, 1.0 / d, -(rm - d) / d))  # rising: (s - r_{m-1}) / d
    pieces.append((rm, rm + d, -1.0 / d, (rm + d) / d))  # falling: (r_{m+1} - s) / d
    for lo, hi, a, b in pieces:
        top = np.clip(r, lo, hi)

        def prim(s, a=a, b=b):
            return a * s**3 / 3.0 + b * s**2 / 2.0

        out += np.where(r > lo, prim(top) - prim(lo), 0.0)
    return out


@dataclass
class _Plane:
    rows: np.ndarray  # indices into the free-edge vector
    U: np.ndarray  # orthonormal basis of the column space
    pinv: np.ndarray  # coefficient map


class _Basis:
    def __init__(self, grid: BoxGrid):
        cx, cy = _axis(grid)
        self.grid = grid
        self.center = (cx, cy)
        hx, hy, hz = grid.h
        self.dr = hx
        self.nodes = np.arange(int(math.floor(cx / hx + 1e-9)) + 1) * hx
        nm = self.nodes.size
        self.nm = nm
        pts, axes = grid.edge_points(free_only=True)
        x = pts[:, 0] - cx
        y = pts[:, 1] - cy
        r = np.hypot(x, y)
        nz = grid.resolution[2]
        horiz = axes != 2
        k_node = np.rint(pts[:, 2] / hz).astype(int)
        k_half = np.floor(pts[:, 2] / hz).astype(int)
        self.n = len(axes)
        self.planes_h: dict[int, _Plane] = {}
        self.planes_z: dict[int, _Plane] = {}
        # horizontal edges: tau (stream function) and rho columns
        for k in range(nz + 1):
            rows = np.flatnonzero(horiz & (k_node == k))
            if rows.size == 0:
                continue
            A = np.zeros((rows.size, 2 * nm))
            ax = axes[rows]
            xr, yr = x[rows], y[rows]
            rr = r[rows]
            isx = ax == 0
            for m in range(nm):
                psi = lambda px, py, m=m: -_hat_moment(np.hypot(px, py), self.nodes, m)
                tau = np.where(
                    isx,
                    (psi(xr, yr + 0.5 * hy) - psi(xr, yr - 0.5 * hy)) / hy,
                    -(psi(xr + 0.5 * hx, yr) - psi(xr - 0.5 * hx, yr)) / hx,
                )
                A[:, m] = tau
                A[:, nm + m] = np.where(isx, xr, yr) * _hat(rr, self.nodes, m)
            self.planes_h[k] = self._factor(rows, A)
        for k in range(nz):
            rows = np.flatnonzero((axes == 2) & (k_half == k))
            if rows.size == 0:
                continue
            A = np.column_stack([_hat(r[rows], self.nodes, m) for m in range(nm)])
            self.planes_z[k] = self._factor(rows, A)

    @staticmethod
    def _factor(rows, A) -> _Plane:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        keep = s > SVD_RTOL * (s[0] if s.size else 1.0)
        U, s, Vt = U[:, keep], s[keep], Vt[keep]
        return _Plane(rows, U, (Vt.T / s) @ U.T)

    def columns(self, k: int, horizontal: bool) -> np.ndarray:
        pl = self.planes_h[k] if horizontal else self.planes_z[k]
        # pinv = A^+, so A = pinv^+ ; recover A from U and pinv
        return np.linalg.pinv(pl.pinv)

    def project(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for pl in list(self.planes_h.values()) + list(self.planes_z.values()):
            v = u[pl.rows]
            out[pl.rows] = pl.U @ (pl.U.T @ v)
        return out


def _basis(grid: BoxGrid) -> _Basis:
    b = grid.__dict__.get("_equivariant_basis")
    if b is None:
        b = _Basis(grid)
        grid.__dict__["_equivariant_basis"] = b
    return b


@dataclass
class EquivariantCoefficients:
    """Hat-function profiles of an equivariant field.

    Attributes:
        alpha, beta: ``(nz + 1, n_r)`` profiles on the node planes.
        gamma: ``(nz, n_r)`` profiles on the half planes.
        r_nodes: Radial hat nodes.
        defect: Relative distance of the input from the equivariant span.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    r_nodes: np.ndarray
    defect: float = 0.0

    def scaled(self, a: float = 1.0, b: float = 1.0, c: float = 1.0) -> EquivariantCoefficients:
        return EquivariantCoefficients(a * self.alpha, b * self.beta, c * self.gamma,
                                       self.r_nodes, self.defect)


def _check_field(grid: BoxGrid, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n_edges,):
        raise InvalidInputError(f"edge field has shape {u.shape}, expected ({grid.n_edges},)")
    return u


def equivariance_defect(grid: BoxGrid, u) -> float:
    """``||u - P u|| / ||u||`` for the projection ``P`` onto equivariant fields."""
    u = _check_field(grid, u)
    nu = float(np.linalg.norm(u))
    if nu == 0:
        return 0.0
    return float(np.linalg.norm(u - _basis(grid).project(u)) / nu)


def group_average(grid: BoxGrid, u, n_angles: int | None = None) -> np.ndarray:
    """Equivariant part of ``u``.

    With ``n_angles=None`` (default) this is the least-squares projection
    onto the discrete equivariant span (idempotent).  With an integer it
    falls back to :func:`rotation_average`.
    """
    u = _check_field(grid, u)
    if n_angles is not None:
        return rotation_average(grid, u, n_angles)
    return _basis(grid).project(u)


def rotation_average(grid: BoxGrid, u, n_angles: int = 16) -> np.ndarray:
    """Average ``g . u(g^-1 x)`` over ``n_angles`` rotations about the axis.

    Each Cartesian component is interpolated trilinearly on its staggered
    lattice; points leaving the box read zero.  Not idempotent (the
    interpolation error is ``O(h^2)``).
    """
    u = _check_field(grid, u)
    if n_angles < 1:
        raise InvalidInputError("n_angles must be positive")
    cx, cy = _axis(grid)
    full = grid.expand(u)
    offs = grid._edge_offsets
    h = np.asarray(grid.h)
    interps = []
    for a in range(3):
        shp = grid.edge_shape(a)
        vals = full[offs[a] : offs[a + 1]].reshape(shp)
        coords = []
        for b in range(3):
            c = np.arange(shp[b]) * h[b]
            if b == a:
                c = c + 0.5 * h[b]
            coords.append(c)
        interps.append(RegularGridInterpolator(coords, vals, bounds_error=False, fill_value=0.0))
    pts, axes = grid.edge_points(free_only=True)
    out = np.zeros(len(axes))
    for k in range(n_angles):
        th = 2.0 * math.pi * k / n_angles
        c, s = math.cos(th), math.sin(th)
        # source point g^-1 x
        x = pts[:, 0] - cx
        y = pts[:, 1] - cy
        src = np.column_stack([c * x + s * y + cx, -s * x + c * y + cy, pts[:, 2]])
        U = np.column_stack([f(src) for f in interps])
        gU = np.column_stack([c * U[:, 0] - s * U[:, 1], s * U[:, 0] + c * U[:, 1], U[:, 2]])
        out += gU[np.arange(len(axes)), axes]
    return out / n_angles


def split_tau_rho_zeta(grid: BoxGrid, u, tol: float | None = 1e-8) -> EquivariantCoefficients:
    """Profiles ``(alpha, beta, gamma)`` of an equivariant edge field.

    Args:
        grid: Box grid with square cross-section.
        u: Free-edge field.
        tol: Maximum accepted equivariance defect (``None`` disables the
            check and splits the equivariant part).

    Raises:
        SymmetryError: the defect exceeds ``tol``.
    """
    u = _check_field(grid, u)
    B = _basis(grid)
    defect = equivariance_defect(grid, u)
    if tol is not None and defect > tol:
        raise SymmetryError(f"field is not equivariant: defect {defect:.3e} > {tol:.1e}")
    nz = grid.resolution[2]
    nm = B.nm
    alpha = np.zeros((nz + 1, nm))
    beta = np.zeros((nz + 1, nm))
    gamma = np.zeros((nz, nm))
    for k, pl in B.planes_h.items():
        c = pl.pinv @ u[pl.rows]
        alpha[k], beta[k] = c[:nm], c[nm:]
    for k, pl in B.planes_z.items():
        gamma[k] = pl.pinv @ u[pl.rows]
    return EquivariantCoefficients(alpha, beta, gamma, B.nodes.copy(), defect)


def reconstruct(grid: BoxGrid, coeffs, cyl: CylGrid | None = None) -> np.ndarray:
    """Inverse of :func:`split_tau_rho_zeta`.

    ``coeffs`` may also be a :class:`CylField`, which is lifted by
    interpolation (see :func:`nlmaxwell.reduced.lift`).
    """
    if isinstance(coeffs, CylField):
        return lift(coeffs.grid, coeffs, grid)
    B = _basis(grid)
    out = np.zeros(B.n)
    nm = B.nm
    for k, pl in B.planes_h.items():
        A = B.columns(k, True)
        out[pl.rows] = A @ np.concatenate([coeffs.alpha[k], coeffs.beta[k]])
    for k, pl in B.planes_z.items():
        A = B.columns(k, False)
        out[pl.rows] = A @ coeffs.gamma[k]
    return out


def _parts(grid: BoxGrid, u, tol):
    c = split_tau_rho_zeta(grid, u, tol)
    zero = np.zeros_like
    tau = reconstruct(grid, EquivariantCoefficients(c.alpha, zero(c.beta), zero(c.gamma), c.r_nodes))
    rho = reconstruct(grid, EquivariantCoefficients(zero(c.alpha), c.beta, zero(c.gamma), c.r_nodes))
    zeta = reconstruct(grid, EquivariantCoefficients(zero(c.alpha), zero(c.beta), c.gamma, c.r_nodes))
    return tau, rho, zeta


def s1_apply(grid: BoxGrid, u, tol: float | None = 1e-8) -> np.ndarray:
    """``S1 (u_tau + u_rho + u_zeta) = u_tau - u_rho - u_zeta``."""
    tau, rho, zeta = _parts(grid, u, tol)
    return tau - rho - zeta


def s2_apply(grid: BoxGrid, u, tol: float | None = 1e-8) -> np.ndarray:
    """``S2 = -S1``."""
    return -s1_apply(grid, u, tol)


def project_S1(grid: BoxGrid, u, tol: float | None = 1e-8) -> np.ndarray:
    """``(id + S1) / 2``: keeps the ``tau`` part."""
    return _parts(grid, u, tol)[0]


def project_S2(grid: BoxGrid, u, tol: float | None = 1e-8) -> np.ndarray:
    """``(id - S1) / 2``: keeps the ``rho`` and ``zeta`` parts."""
    _, rho, zeta = _parts(grid, u, tol)
    return rho + zeta


def mirror_x3(grid: BoxGrid, u) -> np.ndarray:
    """Reflection ``x3 -> L3 - x3`` acting on edge fields."""
    u = _check_field(grid, u)
    full = grid.expand(u)
    out = np.empty_like(full)
    offs = grid._edge_offsets
    for a in range(3):
        blk = full[offs[a] : offs[a + 1]].reshape(grid.edge_shape(a))[:, :, ::-1]
        out[offs[a] : offs[a + 1]] = (-blk if a == 2 else blk).ravel()
    return out[grid.free_edges]


def symmetry_report(grid: BoxGrid, u, M=None) -> dict:
    """Equivariance defect, ``tau/rho/zeta`` energy fractions and x3-mirror defect.

    Fractions refer to the equivariant part of ``u`` and use the mass
    ``M`` (Euclidean if omitted).
    """
    u = _check_field(grid, u)
    nu = float(np.linalg.norm(u))
    if nu == 0:
        return {"equivariance_defect": 0.0, "fractions": {"tau": 0.0, "rho": 0.0, "zeta": 0.0},
                "mirror_defect": 0.0}
    tau, rho, zeta = _parts(grid, u, None)

    def sq(v):
        return float(v @ (M @ v)) if M is not None else float(v @ v)

    parts = {"tau": sq(tau), "rho": sq(rho), "zeta": sq(zeta)}
    tot = sum(parts.values())
    fr = {k: (v / tot if tot > 0 else 0.0) for k, v in parts.items()}
    mirror = float(np.linalg.norm(u - mirror_x3(grid, u)) / nu)
    return {
        "equivariance_defect": equivariance_defect(grid, u),
        "fractions": fr,
        "mirror_defect": mirror,
    }


# -- radial oracle -------------------------------------------------------------------------


def _profile_fn(v):
    if callable(v):
        return v
    c = float(v)
    return lambda r: np.full(np.shape(r), c)


@dataclass
class RadialOracle:
    """Curl-free solution ``u = s (V/Gamma)^(1/(p-2)) x/|x|`` of
    ``curl curl u + V(|x|) u = Gamma(|x|) |u|^(p-2) u`` with ``s = +1``."""

    V: object
    Gamma: object
    p: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def amplitude(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        V = _profile_fn(self.V)(r)
        G = _profile_fn(self.Gamma)(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(V == 0, 0.0, V / G)
        return ratio ** (1.0 / (self.p - 2.0))

    def field(self, points) -> np.ndarray:
        x = np.atleast_2d(np.asarray(points, dtype=float)) - np.asarray(self.center)
        r = np.linalg.norm(x, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.where(r[:, None] > 0, x / r[:, None], 0.0)
        return self.amplitude(r)[:, None] * e

    def sample(self, grid: BoxGrid, free_only: bool = True) -> np.ndarray:
        return grid.sample(self.field, free_only=free_only)


def radial_oracle(V, Gamma, p: float, r_samples=None, center=(0.0, 0.0, 0.0)) -> RadialOracle:
    """Build the radial oracle after checking ``V Gamma >= 0`` on ``r_samples``.

    Raises:
        InvalidInputError: ``p <= 2``.
        OracleInapplicableError: ``V Gamma < 0`` somewhere (no radial
            solution exists there), or ``Gamma = 0`` where ``V != 0``.
    """
    if not p > 2:
        raise InvalidInputError("p must exceed 2")
    r = np.linspace(0.0, 1.0, 101) if r_samples is None else np.asarray(r_samples, dtype=float)
    Vv = _profile_fn(V)(r)
    Gv = _profile_fn(Gamma)(r)
    bad = (Vv * Gv < 0) | ((Gv == 0) & (Vv != 0))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OracleInapplicableError(
            f"V * Gamma < 0 at r = {r[i]:.6g} (V = {Vv[i]:.6g}, Gamma = {Gv[i]:.6g}); "
            "a radially symmetric solution requires V Gamma >= 0")
    return RadialOracle(V, Gamma, float(p), tuple(float(c) for c in center))


@dataclass
class RadialReport:
    identity_residual: float
    curl_max: float
    h: float
    n_faces: int

    @property
    def curl_over_h2(self) -> float:
        return self.curl_max / self.h**2


def verify_radial(oracle: RadialOracle, grid: BoxGrid | None = None, points=None,
                  exclude_factor: float = 3.0, exclude_radius: float | None = None) -> RadialReport:
    """Check the pointwise identity and the discrete curl of the sampled field.

    The identity ``V u = Gamma |u|^(p-2) u`` is evaluated at ``points`` (or
    the grid's edge midpoints), relative to ``max |V u|``.  The discrete
    curl of the field sampled on all edges is measured on faces farther than
    ``exclude_radius`` (default ``exclude_factor * h``) from the centre.  The
    curl is ``O(h^2 / r^3)``, so a fixed radius gives second-order decay.
    """
    if points is None:
        if grid is None:
            raise InvalidInputError("need points or a grid")
        points, _ = grid.edge_points(free_only=False)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(x - np.asarray(oracle.center), axis=1)
    u = oracle.field(x)
    V = _profile_fn(oracle.V)(r)[:, None]
    G = _profile_fn(oracle.Gamma)(r)[:, None]
    nu = np.linalg.norm(u, axis=1)[:, None]
    lhs = V * u
    rhs = G * nu ** (oracle.p - 2.0) * u
    scale = max(float(np.max(np.abs(lhs))), 1e-300)
    ident = float(np.max(np.abs(lhs - rhs)) / scale)
    curl_max, h, nf = 0.0, math.nan, 0
    if grid is not None:
        uf = oracle.sample(grid, free_only=False)
        c = grid.curl_full @ uf
        fp, _ = grid.face_points()
        h = max(grid.h)
        rad = exclude_factor * h if exclude_radius is None else exclude_radius
        far = np.linalg.norm(fp - np.asarray(oracle.center), axis=1) > rad
        nf = int(far.sum())
        curl_max = float(np.max(np.abs(c[far]))) if nf else 0.0
    return RadialReport(ident, curl_max, h, nf)
