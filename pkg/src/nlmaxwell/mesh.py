"""Staggered box grid with tangential edge unknowns.

Unknowns live on the edges of a uniform hexahedral grid (one tangential
component per edge), curls on faces and potentials on nodes.  Edges and
nodes lying on the boundary of the active region are removed from the
index set, which imposes the perfect-conductor condition ``n x u = 0``
exactly.  Layout of the full (unconstrained) arrays::

    nodes    (nx+1, ny+1, nz+1)
    x-edges  (nx,   ny+1, nz+1)    y-edges (nx+1, ny, nz+1)    z-edges (nx+1, ny+1, nz)
    x-faces  (nx+1, ny,   nz)      y-faces (nx, ny+1, nz)      z-faces (nx, ny, nz+1)
    cells    (nx,   ny,   nz)

Full edge/face vectors concatenate the x, y and z blocks in C order.
"""

from __future__ import annotations

import io
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import InvalidInputError, MaterialError

__all__ = [
    "BoxGrid",
    "curl",
    "grad",
    "div_weighted",
    "dot_V",
    "dot_muinv_curl",
    "edge_mass",
    "face_mass",
    "write_field",
    "read_field",
]


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    return m.tocsr()


class BoxGrid:
    """Uniform grid on ``[0, Lx] x [0, Ly] x [0, Lz]``.

    Args:
        extents: Box side lengths ``(Lx, Ly, Lz)``.
        resolution: Cell counts ``(nx, ny, nz)``, each at least 2.
        mask: Optional boolean array of shape ``resolution`` marking active
            cells.  Inactive cells behave like perfect conductor.
    """

    def __init__(self, extents, resolution, mask: np.ndarray | None = None):
        ext = tuple(float(v) for v in extents)
        res = tuple(int(v) for v in resolution)
        if len(ext) != 3 or len(res) != 3:
            raise InvalidInputError("extents and resolution need three entries")
        if not all(np.isfinite(ext)) or min(ext) <= 0:
            raise InvalidInputError(f"extents must be finite and positive, got {ext}")
        if min(res) < 2:
            raise InvalidInputError(f"need at least 2 cells per axis, got {res}")
        self.extents = ext
        self.resolution = res
        if mask is None:
            mask = np.ones(res, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != res:
            raise InvalidInputError(f"mask shape {mask.shape} != resolution {res}")
        self.mask = mask
        self.mask.setflags(write=False)

    def __repr__(self) -> str:
        masked = "" if self.mask.all() else f", masked={int((~self.mask).sum())}"
        return f"BoxGrid(extents={self.extents}, resolution={self.resolution}{masked})"

    # -- geometry ---------------------------------------------------------

    @property
    def h(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.extents, self.resolution))

    @property
    def vol(self) -> float:
        hx, hy, hz = self.h
        return hx * hy * hz

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.resolution
        return nx * ny * nz

    @property
    def node_shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.resolution
        return (nx + 1, ny + 1, nz + 1)

    def edge_shape(self, axis: int) -> tuple[int, int, int]:
        return tuple(n if a == axis else n + 1 for a, n in enumerate(self.resolution))

    def face_shape(self, axis: int) -> tuple[int, int, int]:
        return tuple(n + 1 if a == axis else n for a, n in enumerate(self.resolution))

    @cached_property
    def _edge_offsets(self) -> np.ndarray:
        sizes = [int(np.prod(self.edge_shape(a))) for a in range(3)]
        return np.concatenate([[0], np.cumsum(sizes)])

    @cached_property
    def _face_offsets(self) -> np.ndarray:
        sizes = [int(np.prod(self.face_shape(a))) for a in range(3)]
        return np.concatenate([[0], np.cumsum(sizes)])

    @property
    def n_edges_full(self) -> int:
        return int(self._edge_offsets[-1])

    @property
    def n_faces(self) -> int:
        return int(self._face_offsets[-1])

    @property
    def n_nodes_full(self) -> int:
        return int(np.prod(self.node_shape))

    def _edge_index(self, axis, i, j, k):
        return self._edge_offsets[axis] + np.ravel_multi_index((i, j, k), self.edge_shape(axis))

    def _face_index(self, axis, i, j, k):
        return self._face_offsets[axis] + np.ravel_multi_index((i, j, k), self.face_shape(axis))

    def _node_index(self, i, j, k):
        return np.ravel_multi_index((i, j, k), self.node_shape)

    # -- free index sets ----------------------------------------------------

    @cached_property
    def _padded_mask(self) -> np.ndarray:
        return np.pad(self.mask, 1, constant_values=False)

    def _edge_free_block(self, axis: int) -> np.ndarray:
        # an edge is free iff all four adjacent cells exist and are active
        pm = self._padded_mask
        nx, ny, nz = self.resolution
        shape = self.edge_shape(axis)
        ok = np.ones(shape, dtype=bool)
        others = [a for a in range(3) if a != axis]
        for s0 in (0, 1):
            for s1 in (0, 1):
                sl = [None, None, None]
                sl[axis] = slice(1, 1 + self.resolution[axis])
                sl[others[0]] = slice(s0, s0 + self.resolution[others[0]] + 1)
                sl[others[1]] = slice(s1, s1 + self.resolution[others[1]] + 1)
                ok &= pm[tuple(sl)]
        return ok

    @cached_property
    def edge_free_mask(self) -> np.ndarray:
        """Boolean over the full edge vector marking free unknowns."""
        return np.concatenate([self._edge_free_block(a).ravel() for a in range(3)])

    @cached_property
    def free_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_free_mask)

    @cached_property
    def node_free_mask(self) -> np.ndarray:
        pm = self._padded_mask
        nx, ny, nz = self.resolution
        ok = np.ones(self.node_shape, dtype=bool)
        for si in (0, 1):
            for sj in (0, 1):
                for sk in (0, 1):
                    ok &= pm[si : si + nx + 1, sj : sj + ny + 1, sk : sk + nz + 1]
        return ok.ravel()

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_free_mask)

    @property
    def n_edges(self) -> int:
        return int(self.free_edges.size)

    @property
    def n_nodes(self) -> int:
        return int(self.free_nodes.size)

    @cached_property
    def harmonic_dimension(self) -> int:
        """Dimension of curl-free fields that are not gradients of free potentials.

        Equals the number of enclosed cavities of the active region (bounded
        components of its complement); zero for plain boxes.
        """
        outside = ~self._padded_mask
        _, ncomp = ndimage.label(outside)
        return int(ncomp - 1)

    # -- coordinates ----------------------------------------------------------

    def edge_points(self, free_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints and axis id of edges.

        Returns:
            ``(points, axes)`` with ``points`` of shape ``(n, 3)``.
        """
        pts, axes = [], []
        h = self.h
        for a in range(3):
            idx = np.indices(self.edge_shape(a)).reshape(3, -1).T.astype(float)
            idx[:, a] += 0.5
            pts.append(idx * np.asarray(h))
            axes.append(np.full(idx.shape[0], a))
        pts = np.concatenate(pts)
        axes = np.concatenate(axes)
        if free_only:
            return pts[self.free_edges], axes[self.free_edges]
        return pts, axes

    def node_points(self, free_only: bool = True) -> np.ndarray:
        idx = np.indices(self.node_shape).reshape(3, -1).T.astype(float)
        pts = idx * np.asarray(self.h)
        return pts[self.free_nodes] if free_only else pts

    def face_points(self) -> tuple[np.ndarray, np.ndarray]:
        pts, axes = [], []
        for a in range(3):
            idx = np.indices(self.face_shape(a)).reshape(3, -1).T.astype(float)
            for b in range(3):
                if b != a:
                    idx[:, b] += 0.5
            pts.append(idx * np.asarray(self.h))
            axes.append(np.full(idx.shape[0], a))
        return np.concatenate(pts), np.concatenate(axes)

    def cell_centers(self) -> np.ndarray:
        idx = np.indices(self.resolution).reshape(3, -1).T.astype(float) + 0.5
        return idx * np.asarray(self.h)

    def cell_of(self, x) -> tuple[int, int, int]:
        """Index of the cell containing point ``x`` (clamped to the box)."""
        x = np.asarray(x, dtype=float)
        ijk = np.floor(x / np.asarray(self.h)).astype(int)
        ijk = np.clip(ijk, 0, np.asarray(self.resolution) - 1)
        return tuple(int(v) for v in ijk)

    def sample(self, func, free_only: bool = True) -> np.ndarray:
        """Tangential components of a vector function at edge midpoints.

        ``func`` maps an ``(n, 3)`` array of points to an ``(n, 3)`` array.
        """
        pts, axes = self.edge_points(free_only=free_only)
        vals = np.asarray(func(pts), dtype=float)
        return vals[np.arange(len(axes)), axes]

    def expand(self, u: np.ndarray) -> np.ndarray:
        """Free edge values -> full edge vector with zeros on constrained edges."""
        full = np.zeros(self.n_edges_full)
        full[self.free_edges] = u
        return full

    def check_edge_field(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_edges,):
            raise InvalidInputError(f"edge field has shape {u.shape}, expected ({self.n_edges},)")
        if not np.all(np.isfinite(u)):
            raise InvalidInputError("edge field has non-finite entries")
        return u

    def check_node_field(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_nodes,):
            raise InvalidInputError(f"node field has shape {phi.shape}, expected ({self.n_nodes},)")
        if not np.all(np.isfinite(phi)):
            raise InvalidInputError("node field has non-finite entries")
        return phi

    # -- incidence operators on the full complex -------------------------------

    @cached_property
    def grad_full(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for a in range(3):
            i, j, k = (v.ravel() for v in np.indices(self.edge_shape(a)))
            e = self._edge_index(a, i, j, k)
            step = [0, 0, 0]
            step[a] = 1
            n0 = self._node_index(i, j, k)
            n1 = self._node_index(i + step[0], j + step[1], k + step[2])
            inv = 1.0 / self.h[a]
            rows += [e, e]
            cols += [n1, n0]
            vals += [np.full(e.size, inv), np.full(e.size, -inv)]
        return _coo(rows, cols, vals, (self.n_edges_full, self.n_nodes_full))

    @cached_property
    def curl_full(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            i, j, k = (v.ravel() for v in np.indices(self.face_shape(a)))
            f = self._face_index(a, i, j, k)
            ijk = [i, j, k]
            # (curl u)_a = d_b u_c - d_c u_b on the face normal to a
            for comp, along, sign in ((c, b, 1.0), (b, c, -1.0)):
                lo = list(ijk)
                hi = list(ijk)
                hi[along] = hi[along] + 1
                inv = sign / self.h[along]
                rows += [f, f]
                cols += [self._edge_index(comp, *hi), self._edge_index(comp, *lo)]
                vals += [np.full(f.size, inv), np.full(f.size, -inv)]
        return _coo(rows, cols, vals, (self.n_faces, self.n_edges_full))

    @cached_property
    def cell_avg_full(self) -> sp.csr_matrix:
        """Edge -> cell-centre vector averages, rows ordered ``3*cell + axis``."""
        nx, ny, nz = self.resolution
        i, j, k = (v.ravel() for v in np.indices(self.resolution))
        cell = np.ravel_multi_index((i, j, k), self.resolution)
        rows, cols, vals = [], [], []
        for a in range(3):
            others = [b for b in range(3) if b != a]
            for s0 in (0, 1):
                for s1 in (0, 1):
                    ijk = [i, j, k]
                    ijk = [v.copy() for v in ijk]
                    ijk[others[0]] += s0
                    ijk[others[1]] += s1
                    rows.append(3 * cell + a)
                    cols.append(self._edge_index(a, *ijk))
                    vals.append(np.full(cell.size, 0.25))
        return _coo(rows, cols, vals, (3 * self.n_cells, self.n_edges_full))

    @cached_property
    def face_avg_full(self) -> sp.csr_matrix:
        """Face -> cell-centre vector averages, rows ordered ``3*cell + axis``."""
        i, j, k = (v.ravel() for v in np.indices(self.resolution))
        cell = np.ravel_multi_index((i, j, k), self.resolution)
        rows, cols, vals = [], [], []
        for a in range(3):
            for s in (0, 1):
                ijk = [i.copy(), j.copy(), k.copy()]
                ijk[a] += s
                rows.append(3 * cell + a)
                cols.append(self._face_index(a, *ijk))
                vals.append(np.full(cell.size, 0.5))
        return _coo(rows, cols, vals, (3 * self.n_cells, self.n_faces))

    # -- operators restricted to free unknowns ---------------------------------

    @cached_property
    def G(self) -> sp.csr_matrix:
        """Discrete gradient, free nodes -> free edges."""
        return self.grad_full[self.free_edges][:, self.free_nodes].tocsr()

    @cached_property
    def C(self) -> sp.csr_matrix:
        """Discrete curl, free edges -> all faces."""
        return self.curl_full[:, self.free_edges].tocsr()

    @cached_property
    def A(self) -> sp.csr_matrix:
        """Cell-centre averaging, free edges -> ``3 * n_cells`` components."""
        return self.cell_avg_full[:, self.free_edges].tocsr()

    @cached_property
    def AT(self) -> sp.csr_matrix:
        return self.A.T.tocsr()

    # -- coefficient helpers ---------------------------------------------------------

    def _edge_cell_mean(self, coef: np.ndarray, axis: int) -> np.ndarray:
        """Mean of a per-cell scalar over the (active) cells around each edge.

        Returns a full-length block for the given edge axis.  Edges with no
        active neighbour get 0.
        """
        c = np.where(self.mask, coef, 0.0)
        cnt = self.mask.astype(float)
        others = [b for b in range(3) if b != axis]
        pad = [(0, 0)] * 3
        for b in others:
            pad[b] = (1, 1)
        cp = np.pad(c, pad)
        npad = np.pad(cnt, pad)
        shape = self.edge_shape(axis)
        tot = np.zeros(shape)
        num = np.zeros(shape)
        for s0 in (0, 1):
            for s1 in (0, 1):
                sl = [slice(None)] * 3
                sl[others[0]] = slice(s0, s0 + shape[others[0]])
                sl[others[1]] = slice(s1, s1 + shape[others[1]])
                tot += cp[tuple(sl)]
                num += npad[tuple(sl)]
        return tot, num

    def _face_cell_sum(self, coef: np.ndarray, axis: int) -> np.ndarray:
        c = np.where(self.mask, coef, 0.0)
        pad = [(0, 0)] * 3
        pad[axis] = (1, 1)
        cp = np.pad(c, pad)
        n = self.resolution[axis]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n + 1)
        hi[axis] = slice(1, n + 2)
        return cp[tuple(lo)] + cp[tuple(hi)]


def _as_cell_tensor(grid: BoxGrid, T) -> np.ndarray:
    T = np.asarray(getattr(T, "V", T), dtype=float)
    if T.ndim == 0:
        T = T * np.eye(3)
    if T.shape == (3,):
        T = np.diag(T)
    if T.shape == (3, 3):
        T = np.broadcast_to(T, grid.resolution + (3, 3))
    if T.shape != grid.resolution + (3, 3):
        raise InvalidInputError(f"tensor field shape {T.shape} incompatible with {grid}")
    return T


def _offdiag(T: np.ndarray) -> bool:
    off = T.copy()
    off[..., [0, 1, 2], [0, 1, 2]] = 0.0
    return bool(np.any(off != 0.0))


def _assemble_mass(grid: BoxGrid, T: np.ndarray, diag_blocks, avg: sp.csr_matrix, sel) -> sp.csr_matrix:
    d = np.concatenate(diag_blocks)[sel]
    M = sp.diags(d).tocsr()
    if _offdiag(T):
        vol = grid.vol
        act = grid.mask.ravel()
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                w = vol * np.where(act, T[..., a, b].ravel(), 0.0)
                Aa = avg[a::3]
                Ab = avg[b::3]
                M = M + (Aa.T @ sp.diags(w) @ Ab)
        M = M.tocsr()
    return M


def edge_mass(grid: BoxGrid, V) -> sp.csr_matrix:
    """Gram matrix of ``sum_cells <V u1, u2> * vol`` on free edges.

    Diagonal tensor entries are lumped onto edges with the arithmetic mean of
    the adjacent cells; off-diagonal entries couple cell-centre averages.

    Raises:
        MaterialError: the assembled form is not positive definite.
    """
    T = _as_cell_tensor(grid, V)
    blocks = []
    for a in range(3):
        tot, _ = grid._edge_cell_mean(T[..., a, a], a)
        blocks.append((0.25 * grid.vol * tot).ravel())
    M = _assemble_mass(grid, T, blocks, grid.A, grid.free_edges)
    _check_pd(M, "edge mass")
    return M


def face_mass(grid: BoxGrid, mu_inv) -> sp.csr_matrix:
    """Gram matrix of ``sum_cells <mu^-1 c1, c2> * vol`` on all faces."""
    T = _as_cell_tensor(grid, mu_inv)
    blocks = []
    for a in range(3):
        blocks.append((0.5 * grid.vol * grid._face_cell_sum(T[..., a, a], a)).ravel())
    return _assemble_mass(grid, T, blocks, grid.face_avg_full, slice(None))


def _check_pd(M: sp.csr_matrix, what: str) -> None:
    d = M.diagonal()
    if np.any(~np.isfinite(d)) or np.any(d <= 0.0):
        raise MaterialError(f"{what} has non-positive diagonal entries")
    if M.nnz == M.shape[0]:
        return
    # off-diagonal coupling: test the scaled matrix for a positive minimum
    s = sp.diags(1.0 / np.sqrt(d))
    S = (s @ M @ s).tocsc()
    try:
        sp.linalg.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:  # singular
        raise MaterialError(f"{what} is singular") from exc
    from scipy.sparse.linalg import eigsh

    lam = eigsh(S, k=1, which="SA", return_eigenvectors=False, tol=1e-6)[0]
    if lam <= 0.0:
        raise MaterialError(f"{what} is not positive definite (min eigenvalue {lam:.3e})")


# -- field operations -------------------------------------------------------------


def curl(grid: BoxGrid, u) -> np.ndarray:
    """Discrete curl: free edge values -> face values (circulation per area)."""
    return grid.C @ grid.check_edge_field(u)


def grad(grid: BoxGrid, phi) -> np.ndarray:
    """Discrete gradient of a potential on free nodes (zero on the boundary)."""
    return grid.G @ grid.check_node_field(phi)


def div_weighted(grid: BoxGrid, V, u) -> np.ndarray:
    """Weighted divergence ``div(V u)`` on free nodes.

    Defined as the negative adjoint of :func:`grad` for the ``V``-weighted edge
    product and the ``vol``-weighted node product, so that
    ``dot_V(grad(phi), u) == -vol * phi @ div_weighted(V, u)``.
    """
    u = grid.check_edge_field(u)
    M = V if sp.issparse(V) else edge_mass(grid, V)
    return -(grid.G.T @ (M @ u)) / grid.vol


def dot_V(grid: BoxGrid, V, u1, u2) -> float:
    M = V if sp.issparse(V) else edge_mass(grid, V)
    return float(grid.check_edge_field(u1) @ (M @ grid.check_edge_field(u2)))


def dot_muinv_curl(grid: BoxGrid, mu_inv, u1, u2) -> float:
    Mf = mu_inv if sp.issparse(mu_inv) else face_mass(grid, mu_inv)
    return float(curl(grid, u1) @ (Mf @ curl(grid, u2)))


# -- field dump -------------------------------------------------------------------


def _header(grid: BoxGrid) -> str:
    nx, ny, nz = grid.resolution
    Lx, Ly, Lz = grid.extents
    return f"edgefield {nx} {ny} {nz} {Lx!r} {Ly!r} {Lz!r}"


def write_field(path, grid: BoxGrid, u, binary: bool = False) -> None:
    """Dump an edge field: header line then the flat value array."""
    u = grid.check_edge_field(u)
    head = _header(grid) + "\n"
    if binary:
        Path(path).write_bytes(head.encode("ascii") + u.astype("<f8").tobytes())
    else:
        buf = io.StringIO()
        buf.write(head)
        buf.write("\n".join(repr(float(v)) for v in u))
        buf.write("\n")
        Path(path).write_text(buf.getvalue())


def read_field(path, grid: BoxGrid | None = None):
    """Read a dump written by :func:`write_field`.

    Returns:
        ``(header, values)`` where header is ``(resolution, extents)``.
    """
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    parts = raw[:nl].decode("ascii").split()
    if len(parts) != 7 or parts[0] != "edgefield":
        raise InvalidInputError(f"{path}: not an edgefield dump")
    res = tuple(int(v) for v in parts[1:4])
    ext = tuple(float(v) for v in parts[4:7])
    body = raw[nl + 1 :]
    try:
        text = body.decode("ascii")
        vals = np.array([float(t) for t in text.split()], dtype=float)
    except (UnicodeDecodeError, ValueError):
        vals = np.frombuffer(body, dtype="<f8").astype(float)
    if grid is not None:
        if res != grid.resolution or not np.allclose(ext, grid.extents, rtol=0, atol=0):
            raise InvalidInputError(f"{path}: header {res} {ext} does not match {grid}")
        grid.check_edge_field(vals)
    return (res, ext), vals
