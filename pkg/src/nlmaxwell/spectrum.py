"""Maxwell eigenpairs on the V-divergence-free subspace and the induced splitting.

Eigenproblem: ``C^T M_f C v = lam M_V v`` with ``v`` restricted to the
complement of gradients.  Two treatments of the gradient kernel are
available:

``"projection"``
    every search direction is passed through the Helmholtz projector, so
    gradients never enter the Krylov/LOBPCG subspace;
``"regularization"``
    the stiffness is augmented by a grad-div term ``tau M G N^-1 G^T M``
    which lifts gradient modes above the wanted window; ``tau`` is doubled
    until no gradient mode is found among the computed pairs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import InvalidInputError, SpectralError
from .helmholtz import HelmholtzProjector
from .linalg import MassInverse, SPDSolver
from .material import MaterialTensors
from .mesh import BoxGrid, edge_mass, face_mass

__all__ = [
    "MaxwellOperators",
    "SpectralSplit",
    "QuadraticFormReport",
    "DegenerateFormWarning",
    "maxwell_eigs",
    "spectral_split",
    "quadratic_form",
    "index_count",
    "cluster_ids",
]

DENSE_LIMIT = 1500
CLUSTER_RTOL = 1e-7
DEGENERATE_RTOL = 1e-9


class DegenerateFormWarning(UserWarning):
    """An eigenvalue sits on the splitting threshold."""


def _as_materials(grid: BoxGrid, materials) -> MaterialTensors:
    if isinstance(materials, MaterialTensors):
        if materials.resolution != grid.resolution:
            raise InvalidInputError("materials resolution does not match the grid")
        return materials
    return MaterialTensors.uniform(grid.resolution, 1.0, materials)


class MaxwellOperators:
    """Assembled stiffness, mass and auxiliary operators for one problem."""

    def __init__(self, grid: BoxGrid, materials: MaterialTensors, helmholtz_tol: float = 1e-12):
        self.grid = grid
        self.materials = _as_materials(grid, materials)
        self.M = edge_mass(grid, self.materials.V)
        self.Mf = face_mass(grid, self.materials.mu_inv)
        self.K = (grid.C.T @ self.Mf @ grid.C).tocsr()
        self.helmholtz = HelmholtzProjector(grid, self.M, tol=helmholtz_tol)
        self.Minv = MassInverse(self.M)
        self._regularizer = None

    @property
    def n(self) -> int:
        return self.grid.n_edges

    @property
    def dim_divfree(self) -> int:
        return self.grid.n_edges - self.grid.n_nodes

    def node_weights(self) -> np.ndarray:
        """Node masses ``vol * v^2 / a`` balancing grad-div against curl-curl."""
        g = self.grid
        mat = self.materials
        v = np.trace(mat.V, axis1=-2, axis2=-1) / 3.0
        a = np.trace(mat.mu_inv, axis1=-2, axis2=-1) / 3.0
        pad_v = np.pad(np.where(g.mask, v, 0.0), 1)
        pad_a = np.pad(np.where(g.mask, a, 0.0), 1)
        pad_c = np.pad(g.mask.astype(float), 1)
        nx, ny, nz = g.resolution
        sv = np.zeros(g.node_shape)
        sa = np.zeros(g.node_shape)
        sc = np.zeros(g.node_shape)
        for i in (0, 1):
            for j in (0, 1):
                for k in (0, 1):
                    sl = (slice(i, i + nx + 1), slice(j, j + ny + 1), slice(k, k + nz + 1))
                    sv += pad_v[sl]
                    sa += pad_a[sl]
                    sc += pad_c[sl]
        sc = np.maximum(sc, 1.0)
        vbar = (sv / sc).ravel()[g.free_nodes]
        abar = (sa / sc).ravel()[g.free_nodes]
        return g.vol * vbar**2 / abar

    @property
    def regularizer(self) -> sp.csr_matrix:
        """Grad-div term ``M G N^-1 G^T M`` (symmetric positive semidefinite)."""
        if self._regularizer is None:
            G = self.grid.G
            Ninv = sp.diags(1.0 / self.node_weights())
            MG = (self.M @ G).tocsr()
            self._regularizer = (MG @ Ninv @ MG.T).tocsr()
        return self._regularizer

    def spectral_scale(self) -> float:
        """Rough size of the lowest cavity eigenvalue (used for shifts only)."""
        mat = self.materials
        v = float(np.mean(np.trace(mat.V, axis1=-2, axis2=-1))) / 3.0
        a = float(np.mean(np.trace(mat.mu_inv, axis1=-2, axis2=-1))) / 3.0
        L = np.array(self.grid.extents)
        return float(math.pi**2 * np.sum(1.0 / L**2) * a / v)

    def residuals(self, lam: np.ndarray, X: np.ndarray, K=None) -> np.ndarray:
        K = self.K if K is None else K
        R = K @ X - (self.M @ X) * lam
        return self.Minv.norm(R)


def cluster_ids(values: np.ndarray, rtol: float = CLUSTER_RTOL) -> np.ndarray:
    """Group sorted eigenvalues whose relative gap is at most ``rtol``."""
    ids = np.zeros(len(values), dtype=int)
    for i in range(1, len(values)):
        same = abs(values[i] - values[i - 1]) <= rtol * max(abs(values[i]), abs(values[i - 1]), 1e-300)
        ids[i] = ids[i - 1] if same else ids[i - 1] + 1
    return ids


@dataclass
class SpectralSplit:
    """Lowest Maxwell eigenpairs and the splitting ``V+ (+) V~ (+) W``.

    Attributes:
        eigenvalues: Ascending eigenvalues.
        eigenfields: ``(n_edges, k)`` V-orthonormal, V-divergence-free columns.
        residuals: Dual-norm residuals ``||K v - lam M v||_{M^-1}`` per pair.
        threshold: Splitting level; ``V~`` collects ``lam <= threshold``.
        kernel: Gradient-kernel treatment used.
        clusters: Multiplicity cluster id per eigenvalue.
        complete: True when the computed window extends beyond the threshold,
            so that ``V~`` is fully resolved.
        tau: Final grad-div weight (regularization kernel only).
    """

    eigenvalues: np.ndarray
    eigenfields: np.ndarray
    residuals: np.ndarray
    threshold: float
    kernel: str
    clusters: np.ndarray
    complete: bool
    ops: MaxwellOperators = field(repr=False)
    tau: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def grid(self) -> BoxGrid:
        return self.ops.grid

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def dim_tilde(self) -> int:
        return int(np.sum(self.eigenvalues <= self.threshold))

    @property
    def tilde_basis(self) -> np.ndarray:
        return self.eigenfields[:, self.eigenvalues <= self.threshold]

    @property
    def tilde_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues <= self.threshold]

    @property
    def degeneracy_gauge(self) -> float:
        return float(np.min(np.abs(self.eigenvalues - self.threshold))) if self.k else math.inf

    @property
    def degenerate(self) -> bool:
        return self.degeneracy_gauge <= DEGENERATE_RTOL * max(abs(self.threshold), 1.0)

    @property
    def lambda_plus_min(self) -> float:
        """Smallest computed eigenvalue above the threshold (``inf`` if none)."""
        above = self.eigenvalues[self.eigenvalues > self.threshold]
        return float(above[0]) if above.size else math.inf

    def _require_complete(self):
        if not self.complete:
            raise SpectralError(
                "eigenpair window does not reach beyond the threshold; "
                "use spectral_split to extend it"
            )

    def project_W(self, u):
        return self.ops.helmholtz.project_W(u)

    def project_V(self, u):
        return self.ops.helmholtz.project_V(u)

    def project_tilde(self, u):
        self._require_complete()
        B = self.tilde_basis
        return B @ (B.T @ (self.ops.M @ u))

    def project_plus(self, u):
        u = np.asarray(u, dtype=float)
        return self.project_V(u) - self.project_tilde(u)

    def multiplicities(self) -> list[tuple[float, int]]:
        out = []
        for c in np.unique(self.clusters):
            sel = self.clusters == c
            out.append((float(np.mean(self.eigenvalues[sel])), int(sel.sum())))
        return out

    def table(self) -> list[dict]:
        return [
            {"index": i + 1, "eigenvalue": float(lam), "residual": float(r), "cluster": int(c)}
            for i, (lam, r, c) in enumerate(zip(self.eigenvalues, self.residuals, self.clusters))
        ]


# -- eigensolvers ---------------------------------------------------------------


def _m_orthonormalize(S: np.ndarray, M, drop: float = 1e-12) -> np.ndarray:
    Gm = S.T @ (M @ S)
    Gm = 0.5 * (Gm + Gm.T)
    w, U = la.eigh(Gm)
    keep = w > drop * w.max()
    return S @ (U[:, keep] / np.sqrt(w[keep]))


def _rayleigh_ritz(S: np.ndarray, K, M, extra: np.ndarray | None = None):
    """Ritz pairs on ``span(S)`` or ``span(S, extra)``.

    ``extra`` is orthogonalized against ``S`` before its own normalization so
    that small corrections are not lost to the conditioning of a joint Gram
    matrix.
    """
    Q = _m_orthonormalize(S, M)
    if extra is not None:
        Y = extra
        for _ in range(2):
            Y = Y - Q @ (Q.T @ (M @ Y))
        Q = np.hstack([Q, _m_orthonormalize(Y, M)])
    A = Q.T @ (K @ Q)
    lam, Y = la.eigh(0.5 * (A + A.T))
    return lam, Q @ Y


def _dense_projection(ops: MaxwellOperators, k: int):
    g = ops.grid
    Kd = ops.K.toarray()
    Md = ops.M.toarray()
    if g.n_nodes:
        Z = la.null_space((g.G.T @ ops.M).toarray())
    else:
        Z = np.eye(g.n_edges)
    A = Z.T @ Kd @ Z
    B = Z.T @ Md @ Z
    lam, Y = la.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), subset_by_index=[0, k - 1])
    return lam, Z @ Y


def _dense_regularized(ops: MaxwellOperators, k: int, tau: float):
    Kd = (ops.K + tau * ops.regularizer).toarray()
    Md = ops.M.toarray()
    m = min(ops.n, k + ops.grid.n_nodes)
    lam, X = la.eigh(0.5 * (Kd + Kd.T), 0.5 * (Md + Md.T), subset_by_index=[0, m - 1])
    return lam, X


def _lobpcg(ops, K, k, m, project, shift_solver, rng, tol, maxiter, polish_sweeps=4):
    """Block eigensolve in diagonally scaled coordinates, then refinement."""
    n = ops.n
    d = 1.0 / np.sqrt(ops.M.diagonal())
    Dh = sp.diags(d)
    Ks = (Dh @ K @ Dh).tocsr()
    Ms = (Dh @ ops.M @ Dh).tocsr()

    def proj(X):
        return project(X) if project is not None else X

    def prec(R):
        R2 = R if R.ndim == 2 else R[:, None]
        Y = proj(shift_solver.precondition(R2 * d[:, None])) / d[:, None]
        return Y if R.ndim == 2 else Y[:, 0]

    T = sla.LinearOperator((n, n), matvec=prec, matmat=prec, dtype=float)
    X0 = proj(rng.standard_normal((n, m)) * d[:, None]) / d[:, None]
    scale = ops.spectral_scale()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        lam, Xs = sla.lobpcg(Ks, X0, B=Ms, M=T, largest=False, tol=1e-9 * scale,
                             maxiter=maxiter)
    X = Xs * d[:, None]
    # refinement: block inverse iteration with exact shifted solves + Rayleigh-Ritz
    history = []
    for _ in range(polish_sweeps):
        order = np.argsort(lam)
        lam, X = lam[order], X[:, order]
        res = ops.residuals(lam, X, K)
        rel = res[:k] / np.maximum(np.abs(lam[:k]), scale)
        history.append(float(rel.max()))
        if rel.max() <= tol:
            break
        Y = proj(shift_solver.solve(ops.M @ X))
        lam_all, Z = _rayleigh_ritz(X, K, ops.M, extra=Y)
        lam, X = lam_all[:m], Z[:, :m]
    order = np.argsort(lam)
    return lam[order], X[:, order], history


def _finalize(ops, lam, X, k):
    X = ops.helmholtz.project_V(X[:, :k])
    lam, X = _rayleigh_ritz(X, ops.K, ops.M)
    res = ops.residuals(lam, X)
    return lam, X, res


def _window_complete(lam: np.ndarray, threshold: float, dim: int) -> bool:
    """True when some fully resolved cluster lies above the threshold."""
    if len(lam) >= dim:
        return True
    ids = cluster_ids(lam)
    above = (lam > threshold) & (ids != ids[-1])
    return bool(np.any(above))


def maxwell_eigs(
    grid: BoxGrid,
    materials,
    k: int = 6,
    tol: float = 1e-9,
    kernel: str = "projection",
    threshold: float = 1.0,
    rng_seed: int = 0,
    maxiter: int = 500,
    tau0: float = 2.0,
    ops: MaxwellOperators | None = None,
) -> SpectralSplit:
    """The ``k`` smallest Maxwell eigenpairs on the V-divergence-free subspace.

    Args:
        grid: Box grid.
        materials: :class:`MaterialTensors` (or a scalar/tensor for ``V`` with
            ``mu^-1 = id``).
        k: Number of eigenpairs.
        tol: Target relative residual ``||K v - lam M v||_{M^-1} / lam``.
        kernel: ``"projection"`` or ``"regularization"``.
        threshold: Splitting level recorded in the result.
        rng_seed: Seed for the starting block.
        maxiter: LOBPCG iteration cap.
        tau0: Initial grad-div weight for the regularization kernel.
        ops: Pre-assembled operators to reuse.

    Raises:
        InvalidInputError: ``k`` exceeds the divergence-free dimension.
        SpectralError: residual target missed, or the regularization never
            cleared gradient modes from the window.
    """
    ops = ops or MaxwellOperators(grid, materials)
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    if k > ops.dim_divfree:
        raise InvalidInputError(f"k={k} exceeds the divergence-free dimension {ops.dim_divfree}")
    if kernel not in ("projection", "regularization"):
        raise InvalidInputError(f"unknown kernel treatment {kernel!r}")
    rng = np.random.default_rng(rng_seed)
    dense = ops.n <= DENSE_LIMIT or k > ops.dim_divfree // 5
    m = min(k + max(3, int(math.ceil(0.3 * k))), ops.dim_divfree)
    scale = ops.spectral_scale()
    sigma = 0.5 * scale
    tau_used = None
    info: dict = {"dense": dense}

    if kernel == "projection":
        if dense:
            lam, X = _dense_projection(ops, min(m, ops.dim_divfree))
        else:
            shift = SPDSolver((ops.K + ops.regularizer + sigma * ops.M).tocsr(), tol=1e-12)
            lam, X, hist = _lobpcg(ops, ops.K, k, m, ops.helmholtz.project_V, shift, rng, tol, maxiter)
            info["polish_history"] = hist
    else:
        tau = float(tau0)
        X_prev = None
        for attempt in range(12):
            KB = (ops.K + tau * ops.regularizer).tocsr()
            if dense:
                lam, X = _dense_regularized(ops, m, tau)
            else:
                shift = SPDSolver((KB + sigma * ops.M).tocsr(), tol=1e-12)
                lam, X, hist = _lobpcg(ops, KB, m, m, None, shift, rng, tol, maxiter)
                info["polish_history"] = hist
            # classify: gradient content of each M-normalized eigenvector
            nrm = np.sqrt(np.maximum(np.sum(X * (ops.M @ X), axis=0), 1e-300))
            Wpart = ops.helmholtz.project_W(X / nrm)
            frac = np.sqrt(np.maximum(np.sum(Wpart * (ops.M @ Wpart), axis=0), 0.0))
            is_div = frac < 0.5
            polluted = np.any((frac > 1e-8) & (frac < 1 - 1e-8))
            if is_div.sum() >= k and not polluted and not np.any(~is_div[: k]):
                tau_used = tau
                lam, X = lam[is_div], X[:, is_div]
                break
            tau *= 2.0
        else:
            raise SpectralError(f"gradient modes persist in the window after raising tau to {tau:.3g}")
        info["gradient_fraction_max"] = float(frac[is_div].max()) if is_div.any() else 0.0

    lam, X, res = _finalize(ops, lam, X, k)
    rel = res / np.maximum(np.abs(lam), scale)
    if rel.max() > max(tol, 1e-9) * 10:
        raise SpectralError(
            f"eigenpair residuals {rel.max():.3e} exceed target {tol:.1e}",
            rel.tolist(),
        )
    info["relative_residuals"] = rel.tolist()
    return SpectralSplit(
        eigenvalues=lam,
        eigenfields=X,
        residuals=res,
        threshold=float(threshold),
        kernel=kernel,
        clusters=cluster_ids(lam),
        complete=_window_complete(lam, threshold, ops.dim_divfree),
        ops=ops,
        tau=tau_used,
        info=info,
    )


def spectral_split(
    grid: BoxGrid,
    materials,
    threshold: float = 1.0,
    k0: int = 6,
    kernel: str = "projection",
    tol: float = 1e-9,
    rng_seed: int = 0,
    ops: MaxwellOperators | None = None,
) -> SpectralSplit:
    """Eigenpairs extended until the window passes ``threshold`` with margin.

    The window is enlarged until the last computed cluster lies strictly
    above the threshold, so that every eigenvalue at or below it (with full
    multiplicity) is included.
    """
    ops = ops or MaxwellOperators(grid, materials)
    k = min(max(1, k0), ops.dim_divfree)
    while True:
        split = maxwell_eigs(grid, ops.materials, k=k, tol=tol, kernel=kernel,
                             threshold=threshold, rng_seed=rng_seed, ops=ops)
        if split.complete:
            break
        k = min(2 * k, ops.dim_divfree)
    if split.degenerate:
        warnings.warn(
            f"eigenvalue within {split.degeneracy_gauge:.2e} of the threshold {threshold}",
            DegenerateFormWarning,
            stacklevel=2,
        )
    return split


# -- quadratic forms and indices ------------------------------------------------


def quadratic_form(grid: BoxGrid, materials, v, shift=0.0, ops: MaxwellOperators | None = None) -> float:
    """``Q(v) = <mu^-1 curl v, curl v> - <(V + shift) v, v>``.

    ``shift = 0`` gives the form at zero; ``shift = V_inf`` the form at
    infinity.  Warns when ``v`` has a noticeable gradient component.
    """
    ops = ops or MaxwellOperators(grid, materials)
    v = grid.check_edge_field(v)
    Mv = ops.M @ v
    nv = float(v @ Mv)
    if nv > 0:
        w = ops.helmholtz.project_W(v)
        if float(w @ (ops.M @ w)) > 1e-12 * nv:
            warnings.warn("quadratic form evaluated off the divergence-free subspace", stacklevel=2)
    val = float(v @ (ops.K @ v)) - nv
    if np.any(np.asarray(shift)):
        Ms = edge_mass(grid, _shift_tensor(grid, shift)) if not np.isscalar(shift) else float(shift) * _unit_mass(grid)
        val -= float(v @ (Ms @ v))
    return val


def _unit_mass(grid):
    return edge_mass(grid, np.eye(3))


def _shift_tensor(grid, shift):
    S = np.asarray(shift, dtype=float)
    if S.ndim == 0:
        S = S * np.eye(3)
    elif S.shape == (3,):
        S = np.diag(S)
    if S.shape == (3, 3):
        S = np.broadcast_to(S, grid.resolution + (3, 3))
    return S


@dataclass
class QuadraticFormReport:
    """Index of ``Q_shift`` relative to the threshold, with degeneracy gauge."""

    form: str
    index: int
    gauge: float
    eigenvalues: np.ndarray
    degenerate: bool
    threshold: float
    split: SpectralSplit = field(repr=False)
    reference_index: int | None = None

    @property
    def monotone(self) -> bool | None:
        """``i0 <= i_inf`` when a reference (unshifted) index was computed."""
        if self.reference_index is None:
            return None
        return self.reference_index <= self.index

    def evaluate(self, v) -> float:
        ops = self.split.ops
        v = np.asarray(v, dtype=float)
        return float(v @ (ops.K @ v)) - self.threshold * float(v @ (ops.M @ v))


def index_count(
    grid: BoxGrid,
    materials,
    shift=0.0,
    threshold: float = 1.0,
    compare_unshifted: bool = True,
    tol: float = 1e-9,
    rng_seed: int = 0,
) -> QuadraticFormReport:
    """Number of Maxwell eigenvalues ``<= threshold`` for ``V`` replaced by ``V + shift``.

    For a positive semidefinite shift the unshifted index is computed as well
    and the report records whether ``i0 <= i_inf``.
    """
    mat = _as_materials(grid, materials)
    shifted = np.any(np.asarray(shift))
    mat_s = mat.shifted(_shift_tensor(grid, shift)) if shifted else mat
    split = spectral_split(grid, mat_s, threshold=threshold, tol=tol, rng_seed=rng_seed)
    index = split.dim_tilde
    ref = None
    if shifted and compare_unshifted:
        S = _shift_tensor(grid, shift)
        psd = np.all(np.linalg.eigvalsh(S)[..., 0] >= -1e-14)
        if psd:
            ref = spectral_split(grid, mat, threshold=threshold, tol=tol, rng_seed=rng_seed).dim_tilde
    return QuadraticFormReport(
        form="Q_inf" if shifted else "Q_0",
        index=index,
        gauge=split.degeneracy_gauge,
        eigenvalues=split.eigenvalues,
        degenerate=split.degenerate,
        threshold=threshold,
        split=split,
        reference_index=ref,
    )
