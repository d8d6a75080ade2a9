"""Material tensors and the catalog of nonlinear polarization models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from . import kernels
from ._pykernels import (
    CUBIC_QUINTIC,
    DP_PIECEWISE,
    DP_SMOOTH,
    KERR,
    NONE,
    POWER,
    SATURATION,
)
from .errors import InvalidInputError, MaterialError

__all__ = [
    "MaterialTensors",
    "NonlinearityModel",
    "ConditionReport",
    "eval_F",
    "eval_f",
    "check_condition",
    "certify_convex",
    "KINDS",
]

KINDS = {
    "none": NONE,
    "kerr": KERR,
    "saturation": SATURATION,
    "cubic_quintic": CUBIC_QUINTIC,
    "double_power_piecewise": DP_PIECEWISE,
    "double_power_smooth": DP_SMOOTH,
    "power": POWER,
}

_ALIASES = {
    "cubicquintic": "cubic_quintic",
    "doublepowerpiecewise": "double_power_piecewise",
    "doublepowersmooth": "double_power_smooth",
}


def _tensor_field(value, resolution: tuple[int, int, int], name: str) -> np.ndarray:
    T = np.asarray(value, dtype=float)
    if T.ndim == 0:
        T = T * np.eye(3)
    elif T.shape == (3,):
        T = np.diag(T)
    if T.shape == (3, 3):
        T = np.broadcast_to(T, tuple(resolution) + (3, 3))
    if T.shape != tuple(resolution) + (3, 3):
        raise InvalidInputError(f"{name}: shape {T.shape} incompatible with resolution {resolution}")
    if not np.all(np.isfinite(T)):
        raise InvalidInputError(f"{name}: non-finite entries")
    return np.array(T, dtype=float)


def _check_spd(T: np.ndarray, name: str, require_pd: bool) -> None:
    asym = np.abs(T - np.swapaxes(T, -1, -2))
    scale = np.maximum(np.abs(T).max(axis=(-1, -2)), np.finfo(float).tiny)
    if np.any(asym.max(axis=(-1, -2)) > 1e-14 * scale):
        idx = np.unravel_index(np.argmax(asym.max(axis=(-1, -2)) / scale), T.shape[:-2])
        raise MaterialError(f"{name} is not symmetric in cell {tuple(int(i) for i in idx)}")
    if require_pd:
        lam = np.linalg.eigvalsh(0.5 * (T + np.swapaxes(T, -1, -2)))[..., 0]
        if np.any(lam <= 0.0):
            idx = np.unravel_index(np.argmin(lam), lam.shape)
            raise MaterialError(
                f"{name} is not positive definite in cell {tuple(int(i) for i in idx)} "
                f"(smallest eigenvalue {lam[idx]:.3e})"
            )


@dataclass(frozen=True, eq=False)
class MaterialTensors:
    """Per-cell symmetric tensors ``mu^-1`` and ``V = omega^2 eps``.

    Attributes:
        mu_inv: ``(nx, ny, nz, 3, 3)`` inverse permeability.
        V: ``(nx, ny, nz, 3, 3)`` potential tensor.
        omega: Frequency, when ``V`` was assembled from ``eps``.
        eps: Permittivity, when given.
        require_pd: Enforce positive definiteness of ``V``.  Switched off
            only for diagnostic fields such as the radial oracle, whose
            potential enters the equation with the opposite sign.
    """

    mu_inv: np.ndarray
    V: np.ndarray
    omega: float | None = None
    eps: np.ndarray | None = None
    require_pd: bool = True

    def __post_init__(self):
        if self.mu_inv.shape != self.V.shape:
            raise InvalidInputError("mu_inv and V must have the same shape")
        _check_spd(self.mu_inv, "mu_inv", True)
        _check_spd(self.V, "V", self.require_pd)
        self.mu_inv.setflags(write=False)
        self.V.setflags(write=False)

    @classmethod
    def uniform(cls, resolution, mu_inv=1.0, V=1.0, require_pd: bool = True) -> MaterialTensors:
        """Constant tensors; scalars, diagonals or full 3x3 matrices accepted."""
        res = tuple(int(n) for n in resolution)
        return cls(_tensor_field(mu_inv, res, "mu_inv"), _tensor_field(V, res, "V"),
                   require_pd=require_pd)

    @classmethod
    def from_fields(cls, resolution, mu_inv, V, require_pd: bool = True) -> MaterialTensors:
        res = tuple(int(n) for n in resolution)
        return cls(_tensor_field(mu_inv, res, "mu_inv"), _tensor_field(V, res, "V"),
                   require_pd=require_pd)

    @classmethod
    def from_permittivity(cls, resolution, omega: float, eps, mu_inv=1.0) -> MaterialTensors:
        """Assemble ``V = omega^2 eps`` entrywise."""
        if not np.isfinite(omega):
            raise InvalidInputError("omega must be finite")
        res = tuple(int(n) for n in resolution)
        E = _tensor_field(eps, res, "eps")
        return cls(
            _tensor_field(mu_inv, res, "mu_inv"),
            (omega * omega) * E,
            omega=float(omega),
            eps=E,
        )

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.V.shape[:3])

    def with_V(self, V, require_pd: bool | None = None) -> MaterialTensors:
        rp = self.require_pd if require_pd is None else require_pd
        return MaterialTensors(self.mu_inv.copy(), _tensor_field(V, self.resolution, "V"),
                               require_pd=rp)

    def shifted(self, shift) -> MaterialTensors:
        """Materials with ``V`` replaced by ``V + shift``."""
        S = _tensor_field(shift, self.resolution, "shift")
        return self.with_V(self.V + S)

    def scaled(self, mu_factor: float = 1.0, V_factor: float = 1.0) -> MaterialTensors:
        return MaterialTensors(mu_factor * self.mu_inv, V_factor * self.V,
                               require_pd=self.require_pd)

    def is_diagonal(self) -> bool:
        off = ~np.eye(3, dtype=bool)
        return not (np.any(self.V[..., off]) or np.any(self.mu_inv[..., off]))


def _coef(value, name: str, positive: bool = False):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite coefficient")
    if positive and np.any(arr <= 0):
        raise InvalidInputError(f"{name} must be positive")
    if np.any(arr < 0):
        raise InvalidInputError(f"{name} must be nonnegative")
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True, eq=False)
class NonlinearityModel:
    """Tagged nonlinearity ``F(x, u)`` with gradient ``f = grad_u F``.

    Kinds and energy densities (``s = |u|^2``, ``sigma = |M u|``):

    * ``kerr``: ``chi3 s^2 / 4``
    * ``saturation``: ``chi3 (s - log(1 + s)) / 2``
    * ``cubic_quintic``: ``chi3 s^2 / 4 - chi5 s^3 / 6``
    * ``double_power_piecewise``: ``gamma sigma^q / q`` for ``sigma <= 1``,
      ``gamma (sigma^p / p + 1/q - 1/p)`` otherwise
    * ``double_power_smooth``: ``gamma ((1 + sigma^q)^(p/q) - 1) / p``
    * ``power``: ``gamma s^(p/2) / p``
    * ``none``: ``0``

    Coefficients are scalars or per-cell arrays of shape ``(nx, ny, nz)``.
    """

    kind: str
    chi3: Any = 0.0
    chi5: Any = 0.0
    gamma: Any = 1.0
    p: float = 4.0
    q: float = 8.0
    M: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        k = str(self.kind).strip().lower().replace("-", "_")
        k = _ALIASES.get(k.replace("_", ""), k)
        if k not in KINDS:
            raise InvalidInputError(f"unknown nonlinearity kind {self.kind!r}; known: {sorted(KINDS)}")
        object.__setattr__(self, "kind", k)
        object.__setattr__(self, "chi3", _coef(self.chi3, "chi3"))
        object.__setattr__(self, "chi5", _coef(self.chi5, "chi5"))
        object.__setattr__(self, "gamma", _coef(self.gamma, "gamma", positive=k in (
            "double_power_piecewise", "double_power_smooth", "power")))
        M = np.array(self.M, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(M)) or abs(np.linalg.det(M)) < 1e-14:
            raise InvalidInputError("M must be a finite invertible 3x3 matrix")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        p, q = float(self.p), float(self.q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if k.startswith("double_power") and not (2.0 < p < 6.0 < q):
            raise InvalidInputError(f"double-power models need 2 < p < 6 < q, got p={p}, q={q}")
        if k == "power" and not p > 2.0:
            raise InvalidInputError(f"power model needs p > 2, got p={p}")

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def is_zero(self) -> bool:
        if self.kind == "none":
            return True
        c1 = self._c1
        return bool(np.all(np.asarray(c1) == 0.0)) and not np.any(np.asarray(self.chi5))

    @property
    def is_even(self) -> bool:
        # every catalog density depends on u only through |u| or |Mu|
        return True

    @property
    def _c1(self):
        return self.chi3 if self.kind in ("kerr", "saturation", "cubic_quintic") else self.gamma

    def growth_exponent(self) -> float:
        """Large-field growth exponent of ``F`` (2 means asymptotically quadratic)."""
        return {
            "kerr": 4.0, "saturation": 2.0, "cubic_quintic": 6.0, "none": 0.0,
        }.get(self.kind, self.p)

    def coefficients(self, n_cells: int | None = None, cells=None) -> tuple[np.ndarray, np.ndarray]:
        """Coefficient vectors ``(c1, c2)`` per cell, or at selected cells."""
        out = []
        for c in (self._c1, self.chi5):
            arr = np.asarray(c, dtype=float)
            if arr.ndim == 0:
                n = n_cells if cells is None else np.size(cells)
                out.append(np.full(n if n is not None else 1, float(arr)))
            else:
                flat = arr.ravel()
                if n_cells is not None and flat.size != n_cells and cells is None:
                    raise InvalidInputError(
                        f"coefficient field has {flat.size} cells, grid has {n_cells}")
                out.append(flat if cells is None else flat[np.asarray(cells)])
        return out[0], out[1]

    def evaluate(self, U, cells=None, n_cells: int | None = None, hessian: bool = False,
                 delta: float = 0.0):
        """Vectorized ``(F, f[, H])`` at rows of ``U``.

        Args:
            U: ``(N, 3)`` field values.
            cells: flat cell index per row (needed for per-cell coefficients).
            n_cells: number of cells when ``U`` has one row per cell.
            hessian: also return Hessians.
            delta: Hessian regularization for ``p < 4`` pure powers.
        """
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[1] != 3:
            raise InvalidInputError(f"expected (N, 3) field values, got {U.shape}")
        if cells is None and n_cells is None:
            n_cells = U.shape[0]
        c1, c2 = self.coefficients(n_cells=n_cells, cells=cells)
        if c1.size == 1 and U.shape[0] != 1:
            c1 = np.full(U.shape[0], c1[0])
            c2 = np.full(U.shape[0], c2[0])
        return kernels.pointwise(self.code, U, c1, c2, self.p, self.q, self.M, hessian, delta)

    def with_coefficients(self, **kw) -> NonlinearityModel:
        return replace(self, **kw)


def _check_u(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise InvalidInputError(f"u must be a 3-vector, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise InvalidInputError("u has non-finite entries")
    return u


def _cell_at(model: NonlinearityModel, x, grid) -> int | None:
    per_cell = any(np.ndim(c) > 0 for c in (model._c1, model.chi5))
    if not per_cell:
        return None
    if grid is None or x is None:
        raise InvalidInputError("per-cell coefficients need a point x and a grid")
    ijk = grid.cell_of(x)
    return int(np.ravel_multi_index(ijk, grid.resolution))


def eval_F(model: NonlinearityModel, x, u, grid=None) -> float:
    """Energy density ``F(x, u)``; coefficients snap to the cell containing ``x``."""
    u = _check_u(u)
    c = _cell_at(model, x, grid)
    F, _ = model.evaluate(u[None, :], cells=None if c is None else [c], n_cells=None if c is not None else 1)
    return float(F[0])


def eval_f(model: NonlinearityModel, x, u, grid=None) -> np.ndarray:
    """Gradient ``f(x, u) = grad_u F(x, u)``."""
    u = _check_u(u)
    c = _cell_at(model, x, grid)
    _, f = model.evaluate(u[None, :], cells=None if c is None else [c], n_cells=None if c is not None else 1)
    return f[0].copy()


# -- structural condition samplers ------------------------------------------------


@dataclass
class ConditionReport:
    """Outcome of a sampled structural check.

    ``worst_margin <= 0`` means no violation was found.  Margins are relative
    to the magnitude of the terms involved.
    """

    condition: str
    passed: bool
    worst_margin: float
    witness: dict | None = None
    estimate: dict = field(default_factory=dict)
    samples: int = 0

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: conv(w) for k, w in v.items()}
            return v

        return conv({
            "condition": self.condition,
            "passed": bool(self.passed),
            "worst_margin": float(self.worst_margin),
            "witness": self.witness,
            "estimate": self.estimate,
            "samples": self.samples,
        })


# smallest accepted excess of the sampled exponent <f,u>/F over 2; asymptotically
# quadratic models approach 2 from above and must not pass
_EXPONENT_GAP = 1e-3


def _directions(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _sample_fields(rng, n, lo=-3.0, hi=3.0):
    return _directions(rng, n) * 10.0 ** rng.uniform(lo, hi, size=(n, 1))


def _coef_cells(model, rng, n):
    sizes = [np.size(c) for c in (model._c1, model.chi5) if np.ndim(c) > 0]
    if not sizes:
        return None
    return rng.integers(0, sizes[0], size=n)


def _eval(model, U, cells):
    if cells is None:
        return model.evaluate(U)
    return model.evaluate(U, cells=cells)


def _ladder_ratios(model, rng, mags, samples, numer):
    ndir = max(1, min(samples, 64))
    D = _directions(rng, ndir)
    cells = _coef_cells(model, rng, ndir)
    R = np.empty((ndir, len(mags)))
    for j, m in enumerate(mags):
        U = D * m
        F, f = _eval(model, U, cells)
        R[:, j] = numer(F, f, U) / m**2 if numer is not None else 0.0
    return D, R


def check_condition(model: NonlinearityModel, which: str, samples: int = 10_000,
                    rng_seed: int = 0, R: float = 1.0) -> ConditionReport:
    """Sample one of the structural conditions on ``F``.

    Args:
        model: Nonlinearity to test.
        which: ``"F2"`` (small-field ``o(|u|)``), ``"F4"`` (superlinear
            Ambrosetti-Rabinowitz bound beyond ``|u| >= R``), ``"F6"`` (global
            version with ``F >= 0``), ``"F9"`` (the Nehari-Pankov convexity
            inequality), ``"F12"`` (superquadratic growth) or ``"F14"``
            (double-power growth bounds).
        samples: Number of random samples (ladder directions for trend tests).
        rng_seed: Seed for reproducibility.
        R: Radius beyond which ``F4`` is checked.

    Returns:
        A :class:`ConditionReport`; a failed check is reported, not raised.
    """
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    which = which.upper()
    rng = np.random.default_rng(rng_seed)
    tiny = np.finfo(float).tiny

    if which == "F2":
        mags = 10.0 ** -np.arange(1, 7)
        D, ratio = _ladder_ratios(model, rng, mags, samples,
                                  lambda F, f, U: np.linalg.norm(f, axis=1) * np.linalg.norm(U, axis=1))
        # |f|/|u| must decrease along the ladder and end far below its start
        ref = np.maximum(ratio[:, :1], tiny)
        steps = np.diff(ratio, axis=1) / ref
        tail = ratio[:, -1] / ref[:, 0] - 1e-2
        margin = np.maximum(steps.max(axis=1), tail)
        if model.is_zero:
            margin = np.full(len(D), -1.0)
        i = int(np.argmax(margin))
        return ConditionReport("F2", bool(margin.max() <= 0), float(margin.max()),
                               {"direction": D[i], "ratios": ratio[i]},
                               {"final_ratio": float(ratio[:, -1].max())}, len(D))

    if which == "F12":
        mags = 10.0 ** np.arange(1, 7)
        D, ratio = _ladder_ratios(model, rng, mags, samples, lambda F, f, U: F)
        ref = np.maximum(np.abs(ratio[:, :1]), tiny)
        steps = -np.diff(ratio, axis=1) / ref
        growth = 10.0 - ratio[:, -1] / ref[:, 0]
        margin = np.maximum(steps.max(axis=1), growth / 10.0)
        i = int(np.argmax(margin))
        return ConditionReport("F12", bool(margin.max() <= 0), float(margin.max()),
                               {"direction": D[i], "ratios": ratio[i]},
                               {"growth_factor": float((ratio[:, -1] / ref[:, 0]).min())}, len(D))

    if which in ("F4", "F6"):
        if which == "F4":
            U = _directions(rng, samples) * R * 10.0 ** rng.uniform(0.0, 3.0, size=(samples, 1))
        else:
            U = _sample_fields(rng, samples)
        cells = _coef_cells(model, rng, samples)
        F, f = _eval(model, U, cells)
        fu = np.einsum("ij,ij->i", f, U)
        scale = np.maximum(np.abs(fu) + np.abs(F), tiny)
        neg = -F / scale  # F must be >= 0 (F6) or > 0 (F4)
        pos = F > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pos, fu / np.where(pos, F, 1.0), np.inf)
        gamma_est = float(ratio[pos].min()) if pos.any() else float("nan")
        # the exponent must stay above 2 by a resolvable gap
        m_ratio = np.where(pos, (2.0 + _EXPONENT_GAP - ratio) / 2.0, 0.0)
        m_neg = neg if which == "F6" else np.where(pos, neg, 1.0)
        margin = np.maximum(m_ratio, m_neg)
        if which == "F6":
            # nondegeneracy: F bounded away from 0 on the unit sphere
            F1, _ = _eval(model, _directions(rng, 64), _coef_cells(model, rng, 64))
            sphere_min = float(F1.min())
            margin = np.append(margin, 1.0 if sphere_min <= 0 else -1.0)
        if model.is_zero:
            margin = np.ones_like(margin)
        i = int(np.argmax(margin))
        witness = {"u": U[min(i, len(U) - 1)], "F": float(F[min(i, len(F) - 1)]),
                   "f_dot_u": float(fu[min(i, len(fu) - 1)])}
        est = {"exponent": gamma_est}
        return ConditionReport(which, bool(margin.max() <= 0), float(margin.max()),
                               witness, est, samples)

    if which == "F9":
        U = _sample_fields(rng, samples, -2.0, 2.0)
        Vv = _sample_fields(rng, samples, -2.0, 2.0)
        t = rng.uniform(0.0, 4.0, size=samples)
        t[: max(1, samples // 20)] = 0.0
        t[max(1, samples // 20): max(2, samples // 10)] = 1.0
        cells = _coef_cells(model, rng, samples)
        Fu, fu = _eval(model, U, cells)
        W = t[:, None] * U + Vv
        Fw, _ = _eval(model, W, cells)
        fuu = np.einsum("ij,ij->i", fu, U)
        fuv = np.einsum("ij,ij->i", fu, Vv)
        terms = np.stack([0.5 * (t * t - 1.0) * fuu, t * fuv, Fu, -Fw])
        E = terms.sum(axis=0)
        scale = np.maximum(np.abs(terms).sum(axis=0), tiny)
        rel = E / scale
        off_eq = np.linalg.norm(W - U, axis=1) > 1e-6 * (np.linalg.norm(U, axis=1) + np.linalg.norm(Vv, axis=1))
        # weak form everywhere; strictness required off the equality set
        strict_viol = off_eq & (E >= 0.0)
        i = int(np.argmax(np.where(strict_viol, np.inf, rel)))
        passed = bool(rel.max() <= 1e-12 and not strict_viol.any() and not model.is_zero)
        witness = {"u": U[i], "v": Vv[i], "t": float(t[i]), "value": float(E[i]),
                   "relative": float(rel[i])}
        return ConditionReport("F9", passed, float(rel.max()), witness,
                               {"strict_violations": int(strict_viol.sum())}, samples)

    if which == "F14":
        p, q = model.p, model.q
        mags = 10.0 ** np.linspace(-4.0, 4.0, 33)
        ndir = max(1, min(samples, 64))
        D = _directions(rng, ndir)
        cells = _coef_cells(model, rng, ndir)
        lower, upper = [], []
        for m in mags:
            F, f = _eval(model, D * m, cells)
            lower.append(F / min(m**p, m**q))
            upper.append(np.linalg.norm(f, axis=1) / min(m ** (p - 1), m ** (q - 1)))
        lower = np.array(lower)
        upper = np.array(upper)
        c1 = float(lower.min())
        c2 = float(upper.max())
        # bounded ratios: extremes of the ladder within two decades of the middle
        mid = upper[len(mags) // 2].max()
        spread = np.log10(max(c2, tiny) / max(mid, tiny)) - 2.0
        lspread = np.log10(max(lower[len(mags) // 2].min(), tiny) / max(c1, tiny)) - 2.0
        margin = max(spread, lspread, 1.0 if c1 <= 0 else -np.inf)
        return ConditionReport("F14", bool(margin <= 0), float(margin),
                               {"c1_estimate": c1, "c2_estimate": c2},
                               {"c1": c1, "c2": c2}, ndir * len(mags))

    raise InvalidInputError(f"unknown condition {which!r}; expected F2, F4, F6, F9, F12 or F14")


def certify_convex(model: NonlinearityModel, samples: int = 10_000, rng_seed: int = 0) -> ConditionReport:
    """Sampled convexity of ``u -> F(x, u)`` via chords and Hessian spectra."""
    rng = np.random.default_rng(rng_seed)
    U1 = _sample_fields(rng, samples, -2.0, 2.0)
    U2 = _sample_fields(rng, samples, -2.0, 2.0)
    th = rng.uniform(0.0, 1.0, size=samples)
    cells = _coef_cells(model, rng, samples)
    F1, _ = _eval(model, U1, cells)
    F2, _ = _eval(model, U2, cells)
    Fm, _ = _eval(model, th[:, None] * U1 + (1 - th)[:, None] * U2, cells)
    chord = th * F1 + (1 - th) * F2
    scale = np.maximum(np.abs(F1) + np.abs(F2), np.finfo(float).tiny)
    rel = (Fm - chord) / scale
    i = int(np.argmax(rel))
    passed = bool(rel.max() <= 1e-12)
    return ConditionReport("convex", passed, float(rel.max()),
                           {"u1": U1[i], "u2": U2[i], "theta": float(th[i])}, {}, samples)
