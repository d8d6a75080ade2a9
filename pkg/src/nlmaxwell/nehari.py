"""Reduction of the indefinite energy to the unit sphere of X+.

* ``fiber_minimize``: ``m(u+)``, the minimizer of the convex part ``I`` on
  the affine fiber ``u+ + X~`` (Newton with a Schur complement and Armijo
  backtracking).
* ``ray_maximize``: ``n(d)``, the maximizer of ``beta(t) = J(m(t d))``
  (geometric bracket, then Brent's method on ``beta'``).
* ``ground_state``: minimizes ``d -> J(n(d))`` over the sphere by
  preconditioned nonlinear conjugate gradients, then polishes with Newton's
  method on the full gradient.

The context object is any :class:`~nlmaxwell.functional.EnergyContext`-like
object exposing ``Q``, ``M``, ``nonlinear``, ``tilde_basis``, ``G``, ``L``,
``L_solver``, ``project_plus``, ``riesz`` and ``plus_modes``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.optimize import brentq

from .errors import (
    InvalidInputError,
    NonConvexModelError,
    NoRayMaximumError,
    NumericError,
    ReductionError,
    SolverError,
)
from .linalg import SPDSolver

__all__ = [
    "FiberSolution",
    "NehariResult",
    "GroundStateReport",
    "MountainPassEstimate",
    "fiber_minimize",
    "beta",
    "ray_maximize",
    "unimodality_witness",
    "ground_state",
    "mountain_pass_estimate",
    "nehari_membership",
]

FIBER_TOL = 1e-10
OUTER_TOL = 1e-7
FIBER_MAXITER = 500
OUTER_MAXITER = 200
RAY_MAXITER = 60
PLATEAU_TOL = 1e-12
# accepted overshoot of the fiber tolerance once Newton stagnates at roundoff
STALL_FACTOR = 100.0


@dataclass
class FiberSolution:
    """Point ``m(u+) = u+ + tilde`` of the fiber minimization."""

    u_plus: np.ndarray
    tilde: np.ndarray
    coeffs: np.ndarray
    potential: np.ndarray
    inner_residual: float
    energy: float
    iterations: int
    history: list[float] = field(default_factory=list)

    @property
    def total(self) -> np.ndarray:
        return self.u_plus + self.tilde


@dataclass
class NehariResult:
    """A point ``n(d) = t_u d + tilde`` on the Nehari-Pankov set."""

    direction: np.ndarray
    t_u: float
    fiber: FiberSolution
    c_N: float
    residual_norm: float = math.nan
    c_M: float | None = None
    beta_prime: float = math.nan
    converged: bool = False
    certificates: dict = field(default_factory=dict)
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    beta_curve: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def u(self) -> np.ndarray:
        return self.fiber.total

    def summary(self) -> dict:
        return {
            "c_N": self.c_N,
            "c_M": self.c_M,
            "t_u": self.t_u,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "certificates": dict(self.certificates),
        }


@dataclass
class GroundStateReport:
    """Outcome of a multistart ground-state search."""

    best: NehariResult | None
    results: list[NehariResult]
    attempts: int
    failures: list[str]
    message: str
    wall_time: float = 0.0

    @property
    def found(self) -> bool:
        return self.best is not None

    @property
    def converged(self) -> list[NehariResult]:
        return [r for r in self.results if r.converged]

    @property
    def coverage(self) -> float:
        """Fraction of start directions for which a ray maximum existed."""
        ok = self.attempts - sum(1 for f in self.failures if f.startswith("no ray maximum"))
        return ok / self.attempts if self.attempts else 0.0

    @property
    def energies(self) -> list[float]:
        return [r.c_N for r in self.converged]


@dataclass
class MountainPassEstimate:
    c_M: float | None
    c_N: float
    ordered: bool
    samples: np.ndarray | None = None
    values: np.ndarray | None = None


# -- fiber minimization ---------------------------------------------------------------


def _require_convex(ctx) -> None:
    cert = ctx.convexity_certificate()
    if not cert.passed:
        raise NonConvexModelError(
            f"model {ctx.model.kind!r} is not convex (witness {cert.witness}); "
            "the fiber minimizer is not unique"
        )


def _plus_norm(ctx, u_plus) -> float:
    return math.sqrt(max(ctx.quad(u_plus), 0.0))


def _solve_small(S: np.ndarray, b: np.ndarray) -> np.ndarray:
    if S.size == 0:
        return np.zeros(0)
    try:
        return np.linalg.solve(S, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(S, b, rcond=None)[0]


def fiber_minimize(ctx, u_plus, tol: float = FIBER_TOL, maxiter: int = FIBER_MAXITER,
                   x0: tuple[np.ndarray, np.ndarray] | None = None) -> FiberSolution:
    """Minimize ``I`` over ``u_plus + X~``.

    The fiber is parametrized as ``u_plus + B c + G phi`` with ``B`` the
    M-orthonormal basis of ``V~`` and ``G`` the discrete gradient.  Since
    ``I(u) = 1/2 Q(u+) - J(u)`` on the fiber, the objective is ``-J``.

    Args:
        ctx: Energy context.
        u_plus: Field in X+.
        tol: Stop when ``||I'|_{X~}|| <= tol (1 + ||u_plus||)``.
        maxiter: Newton iteration cap.
        x0: Optional warm start ``(c, phi)``.

    Raises:
        NonConvexModelError: the model failed the convexity certificate.
        ReductionError: no convergence within ``maxiter``.
    """
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    _require_convex(ctx)
    u_plus = np.asarray(u_plus, dtype=float)
    B = ctx.tilde_basis
    G = ctx.G
    d = B.shape[1]
    N = G.shape[1] if G is not None else 0
    if x0 is not None:
        c = np.array(x0[0], dtype=float, copy=True)
        phi = np.array(x0[1], dtype=float, copy=True)
    else:
        c = np.zeros(d)
        phi = np.zeros(N)
    scale = 1.0 + _plus_norm(ctx, u_plus)
    Q = ctx.Q

    def assemble(c, phi):
        u = u_plus + B @ c
        if N:
            u = u + G @ phi
        return u

    def objective(u):
        Phi, _ = ctx.nonlinear(u)
        return Phi - 0.5 * float(u @ (Q @ u))

    u = assemble(c, phi)
    hist: list[float] = []
    if d == 0 and N == 0:
        return FiberSolution(u_plus, np.zeros_like(u_plus), c, phi, 0.0, ctx.energy(u), 0, [0.0])
    obj = objective(u)
    for it in range(maxiter + 1):
        Phi, gPhi, H = ctx.nonlinear(u, hessian=True)
        r = Q @ u - gPhi
        gc = -(B.T @ r)
        gp = -(G.T @ r) if N else np.zeros(0)
        res2 = float(gc @ gc)
        if N:
            res2 += float(gp @ ctx.L_solver.solve(gp))
        res = math.sqrt(max(res2, 0.0))
        hist.append(res)
        if res <= tol * scale:
            tilde = u - u_plus
            return FiberSolution(u_plus, tilde, c, phi, res, 0.5 * float(u @ (Q @ u)) - Phi, it, hist)
        if it == maxiter:
            break
        Hm = (H - Q).tocsr()
        HB = Hm @ B
        Hcc = B.T @ HB
        if N:
            Hpp = (G.T @ (H @ G) + ctx.L).tocsr()
            Hsolve = SPDSolver(Hpp, tol=1e-12)
            Hpc = G.T @ HB
            X = Hsolve.solve(Hpc) if d else np.zeros((N, 0))
            S = Hcc - Hpc.T @ X
            y = Hsolve.solve(gp)
            dc = _solve_small(S, -(gc - Hpc.T @ y)) if d else np.zeros(0)
            dp = -y - (X @ dc if d else 0.0)
        else:
            dc = _solve_small(Hcc, -gc)
            dp = np.zeros(0)
        slope = float(gc @ dc) + (float(gp @ dp) if N else 0.0)
        if slope >= 0:
            # Hessian lost definiteness numerically; fall back to steepest descent
            dc, dp = -gc, (-ctx.L_solver.solve(gp) if N else dp)
            slope = float(gc @ dc) + (float(gp @ dp) if N else 0.0)
        # below this predicted decrease, objective differences are roundoff
        flat = abs(slope) <= 1e-13 * (abs(obj) + abs(Phi) + 1.0)
        accepted = False
        if flat:
            c_new, p_new = c + dc, (phi + dp if N else phi)
            u_new = assemble(c_new, p_new)
            obj_new = objective(u_new)
            accepted = _fiber_res(ctx, u_new, B, G) < 0.5 * res
        else:
            step = 1.0
            for _ in range(60):
                c_new = c + step * dc
                p_new = phi + step * dp if N else phi
                u_new = assemble(c_new, p_new)
                try:
                    obj_new = objective(u_new)
                except NumericError:
                    step *= 0.5
                    continue
                if obj_new <= obj + 1e-4 * step * slope:
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            if res <= STALL_FACTOR * tol * scale:
                # roundoff floor reached just above the target
                return FiberSolution(u_plus, u - u_plus, c, phi, res,
                                     0.5 * float(u @ (Q @ u)) - Phi, it, hist)
            raise ReductionError(f"fiber line search failed at inner residual {res:.3e}", hist)
        c, phi, u, obj = c_new, p_new, u_new, obj_new
    raise ReductionError(
        f"fiber minimization stopped at inner residual {hist[-1]:.3e} after {maxiter} iterations "
        f"(target {tol * scale:.1e})", hist)


def _fiber_res(ctx, u, B, G) -> float:
    r = ctx.dual_gradient(u)
    gc = B.T @ r
    res2 = float(gc @ gc)
    if G is not None and G.shape[1]:
        gp = G.T @ r
        res2 += float(gp @ ctx.L_solver.solve(gp))
    return math.sqrt(max(res2, 0.0))


# -- ray maximization ------------------------------------------------------------------


def _normalize_direction(ctx, direction) -> np.ndarray:
    d = ctx.project_plus(np.asarray(direction, dtype=float))
    q = ctx.quad(d)
    nd = math.sqrt(max(float(d @ (ctx.M @ d)), 0.0))
    nin = math.sqrt(max(float(direction @ (ctx.M @ direction)), 0.0))
    if nin == 0 or nd <= 1e-10 * nin or q <= 0:
        raise InvalidInputError("direction has no component in X+")
    return d / math.sqrt(q)


class _Ray:
    """``beta`` and ``beta'`` along one unit direction, with warm-started fibers."""

    def __init__(self, ctx, d, fiber_tol, warm=None):
        self.ctx = ctx
        self.d = d
        self.fiber_tol = fiber_tol
        self.warm = warm  # (t, c, phi)
        self.cache: dict[float, FiberSolution] = {}

    def fiber(self, t: float) -> FiberSolution:
        if t in self.cache:
            return self.cache[t]
        x0 = None
        if self.warm is not None and self.warm[0] > 0:
            s = t / self.warm[0]
            x0 = (s * self.warm[1], s * self.warm[2])
        fs = fiber_minimize(self.ctx, t * self.d, tol=self.fiber_tol, x0=x0)
        self.cache[t] = fs
        self.warm = (t, fs.coeffs, fs.potential)
        return fs

    def dbeta(self, t: float) -> float:
        fs = self.fiber(t)
        return float(self.d @ self.ctx.dual_gradient(fs.total))

    def beta(self, t: float) -> float:
        return self.fiber(t).energy if t > 0 else 0.0


def beta(ctx, direction, t: float, fiber_tol: float = FIBER_TOL) -> float:
    """``beta(t) = J(m(t d))`` for the Q-normalized projection ``d`` of ``direction``."""
    if t < 0:
        raise InvalidInputError("t must be non-negative")
    if t == 0:
        return 0.0
    d = _normalize_direction(ctx, direction)
    return fiber_minimize(ctx, t * d, tol=fiber_tol).energy


def ray_maximize(ctx, direction, tol: float = 1e-12, fiber_tol: float = FIBER_TOL,
                 t0: float | None = None, max_expand: int = RAY_MAXITER,
                 warm: tuple | None = None) -> NehariResult:
    """Maximize ``beta`` along the ray through ``direction``.

    The direction is projected to X+ and normalized so ``Q(d) = 1``.  A
    bracket with ``beta' > 0`` at the left end and ``beta' < 0`` at the right
    end is grown geometrically, then Brent's method locates the root of
    ``beta'(t) = J'(m(t d))[d]``.

    Args:
        ctx: Energy context.
        direction: Any field with a nonzero X+ component.
        tol: Relative tolerance on ``t``.
        fiber_tol: Tolerance of the inner fiber solves.
        t0: Initial bracket point (default 1).
        max_expand: Cap on bracket doublings or halvings.
        warm: Optional ``(t, c, phi)`` fiber warm start.

    Raises:
        NoRayMaximumError: ``beta'`` stayed positive while the bracket grew
            past the cap (for example ``F = 0`` or an asymptotically linear
            model along this direction).
    """
    d = _normalize_direction(ctx, direction)
    ray = _Ray(ctx, d, fiber_tol, warm)
    t = float(t0) if t0 else 1.0
    g = ray.dbeta(t)
    if g > 0:
        lo, hi = t, None
        for _ in range(max_expand):
            t *= 2.0
            try:
                g = ray.dbeta(t)
            except NumericError as exc:
                raise NoRayMaximumError(f"overflow while growing the bracket at t = {t:.3e}") from exc
            if g < 0:
                hi = t
                break
            lo = t
        if hi is None:
            raise NoRayMaximumError(
                f"beta' still positive at t = {t:.3e} after {max_expand} doublings")
    else:
        hi, lo = t, None
        for _ in range(max_expand):
            t *= 0.5
            g = ray.dbeta(t)
            if g > 0:
                lo = t
                break
            hi = t
        if lo is None:
            raise NoRayMaximumError(f"beta' not positive near 0 (down to t = {t:.3e})")
    tu = brentq(ray.dbeta, lo, hi, xtol=tol * hi, rtol=4 * np.finfo(float).eps, maxiter=200)
    fs = ray.fiber(tu)
    return NehariResult(direction=d, t_u=tu, fiber=fs, c_N=fs.energy, beta_prime=ray.dbeta(tu))


def unimodality_witness(ctx, result: NehariResult, t_max_factor: float = 10.0,
                        n_points: int = 101, fiber_tol: float = FIBER_TOL,
                        plateau: float = PLATEAU_TOL):
    """Sample ``beta`` on ``{0, ..., t_max_factor * t_u}`` and count sign changes.

    Returns:
        ``(ok, ts, values)`` where ``ok`` means the nonzero differences change
        sign exactly once, from positive to negative.
    """
    ts = np.linspace(0.0, t_max_factor * result.t_u, n_points)
    ray = _Ray(ctx, result.direction, fiber_tol,
               (result.t_u, result.fiber.coeffs, result.fiber.potential))
    vals = np.array([ray.beta(float(t)) for t in ts])
    diffs = np.diff(vals)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    signs = np.sign(diffs[np.abs(diffs) > plateau * scale])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1])) if signs.size else 0
    ok = changes == 1 and signs[0] > 0 and signs[-1] < 0
    return ok, ts, vals


def nehari_membership(ctx, u, tol: float = OUTER_TOL) -> dict:
    """Check ``|J'(u)[u]| <= tol ||u||^2`` and ``||J'(u)|_{X~}|| <= tol``."""
    r = ctx.dual_gradient(u)
    radial = abs(float(r @ u))
    nu2 = float(u @ (ctx.M @ u))
    fib = _fiber_res(ctx, u, ctx.tilde_basis, ctx.G)
    return {
        "radial": radial,
        "fiber": fib,
        "ok": bool(radial <= tol * max(nu2, 1e-300) and fib <= tol * (1.0 + math.sqrt(nu2))),
    }


def mountain_pass_estimate(ctx, result: NehariResult | None, t_max_factor: float = 3.0,
                           n_points: int = 31, fiber_tol: float = FIBER_TOL) -> MountainPassEstimate | None:
    """Upper bound ``max_t beta(t)`` along the direction of ``result``.

    Returns ``None`` when there is no Nehari point (for instance ``F = 0``).
    """
    if result is None:
        return None
    ray = _Ray(ctx, result.direction, fiber_tol,
               (result.t_u, result.fiber.coeffs, result.fiber.potential))
    ts = np.linspace(0.0, t_max_factor * result.t_u, n_points)
    vals = np.array([ray.beta(float(t)) for t in ts])
    refined = ray_maximize(ctx, result.direction, fiber_tol=fiber_tol, t0=result.t_u,
                           warm=(result.t_u, result.fiber.coeffs, result.fiber.potential))
    c_M = max(float(np.max(vals)), refined.c_N)
    tolc = 1e-8 * max(1.0, abs(result.c_N))
    return MountainPassEstimate(c_M, result.c_N, bool(c_M <= result.c_N + tolc), ts, vals)


# -- ground state ------------------------------------------------------------------------


def _newton_polish(ctx, u, tol, maxiter=30):
    """Newton's method on ``J'(u) = 0``; returns ``(u, residual, history)``."""
    hist = []
    res = ctx.residual_norm(u)
    hist.append(res)
    target = tol * (1.0 + ctx.norm_V(u))
    for _ in range(maxiter):
        if res <= 1e-3 * target:
            break
        r = ctx.dual_gradient(u)
        Hs = ctx.hessian(u).tocsc()
        try:
            du = sla.spsolve(Hs, -r)
        except RuntimeError:
            break
        if not np.all(np.isfinite(du)):
            break
        u_new = u + du
        res_new = ctx.residual_norm(u_new)
        if res_new >= res and res <= target:
            break
        if res_new >= 10 * res:
            break
        u, res = u_new, res_new
        hist.append(res)
    return u, res, hist


def _initial_direction(ctx, rng, noise: float = 0.05, lowest_cluster: bool = True) -> np.ndarray:
    modes, lams = ctx.plus_modes
    if lowest_cluster and lams.size:
        keep = np.abs(lams - lams[0]) <= 1e-7 * abs(lams[0])
        modes, lams = modes[:, keep], lams[keep]
    if modes.shape[1]:
        coef = rng.standard_normal(modes.shape[1]) / np.sqrt(np.maximum(lams, 1e-12))
        d = modes @ coef
    else:
        d = np.zeros(ctx.n)
    z = ctx.project_plus(rng.standard_normal(ctx.n))
    zq = math.sqrt(max(ctx.quad(z), 1e-300))
    dq = math.sqrt(max(ctx.quad(d), 0.0))
    if dq == 0:
        return z / zq
    return d / dq + noise * z / zq


def _sphere_descent(ctx, d0, tol, fiber_tol, maxiter, switch, deflate, rng):
    """Nonlinear CG for ``psi(d) = J(n(d))``; returns the final NehariResult."""
    cur = ray_maximize(ctx, d0, fiber_tol=fiber_tol)
    hist = [cur.c_N]
    s_prev = None
    g_prev = None
    alpha = None
    it = 0
    for it in range(1, maxiter + 1):
        u = cur.u
        d = cur.direction
        r = ctx.dual_gradient(u)
        res = ctx.residual_norm(u)
        if res <= switch * (1.0 + ctx.norm_V(u)):
            break
        g = ctx.project_plus(ctx.riesz(r))
        g = g - ctx.quad(d, g) * d
        g = cur.t_u * g
        pen_g, _ = _penalty(ctx, d, deflate)
        if pen_g is not None:
            g = g + pen_g - ctx.quad(d, pen_g) * d
        gg = float(g @ (ctx.Q @ g))
        if s_prev is None:
            s = -g
        else:
            beta_pr = max(0.0, float(g @ (ctx.Q @ (g - g_prev))) / max(float(g_prev @ (ctx.Q @ g_prev)), 1e-300))
            s = -g + beta_pr * (s_prev - ctx.quad(d, s_prev) * d)
        slope = float(cur.t_u * (r @ s))
        if pen_g is not None:
            slope += ctx.quad(pen_g, s)
        if slope >= 0:
            s = -g
            slope = -gg
        snorm = math.sqrt(max(ctx.quad(s), 1e-300))
        if alpha is None:
            alpha = min(0.2 / snorm, 1.0)
        else:
            alpha = min(2.0 * alpha, 0.5 / snorm)
        psi0 = cur.c_N + _penalty(ctx, d, deflate)[1]
        accepted = None
        for _ in range(30):
            dn = d + alpha * s
            try:
                trial = ray_maximize(ctx, dn, fiber_tol=fiber_tol, t0=cur.t_u,
                                     warm=(cur.t_u, cur.fiber.coeffs, cur.fiber.potential))
            except (NoRayMaximumError, ReductionError):
                alpha *= 0.25
                continue
            psi = trial.c_N + _penalty(ctx, trial.direction, deflate)[1]
            if psi <= psi0 + 1e-4 * alpha * slope:
                accepted = trial
                break
            alpha *= 0.5
        if accepted is None:
            break
        g_prev, s_prev = g, s
        cur = accepted
        hist.append(cur.c_N)
        if len(hist) > 5 and abs(hist[-5] - hist[-1]) <= 1e-15 * max(abs(hist[-1]), 1.0):
            break
    cur.history = hist
    cur.iterations = it
    return cur


def _penalty(ctx, d, deflate):
    """Gaussian penalty around previously found directions (heuristic deflation)."""
    if not deflate:
        return None, 0.0
    kappa, rho, dirs = deflate
    total = 0.0
    grad = np.zeros_like(d)
    for dj in dirs:
        best = None
        for sgn in (1.0, -1.0):
            diff = d - sgn * dj
            dist2 = ctx.quad(diff)
            if best is None or dist2 < best[0]:
                best = (dist2, diff)
        e = kappa * math.exp(-best[0] / rho**2)
        total += e
        grad += e * (-2.0 / rho**2) * best[1]
    return grad, total


def ground_state(ctx, starts: int = 8, tol: float = OUTER_TOL, rng_seed: int = 0,
                 fiber_tol: float = FIBER_TOL, maxiter: int = OUTER_MAXITER,
                 switch: float = 1e-3, polish: bool = True, witness: bool = True,
                 witness_points: int = 101, deflation: list | None = None,
                 deflation_strength: float = 0.5, deflation_radius: float = 0.5,
                 max_attempts: int | None = None) -> GroundStateReport:
    """Multistart minimization of ``J(n(d))`` over the unit sphere of X+.

    Each start draws a random combination of the lowest X+ eigenfields plus
    small noise, runs projected nonlinear CG (gradients in the
    ``K + M`` metric, retraction by renormalization), then switches to
    Newton's method on ``J' = 0`` once the full residual drops below
    ``switch (1 + ||u||)``.  A start is accepted when the residual is below
    ``tol (1 + ||u||)``, the energy is positive and ``u+`` is nonzero.

    Directions without a ray maximum count against coverage; the search
    draws fresh directions until ``starts`` rays succeeded or
    ``max_attempts`` (default ``4 * starts``) is reached.

    Args:
        deflation: Previously found solutions; their directions are
            penalized (heuristic).
    """
    t_start = time.perf_counter()
    if starts < 1:
        raise InvalidInputError("starts must be positive")
    max_attempts = max_attempts or 4 * starts
    deflate = None
    if deflation:
        dirs = [_normalize_direction(ctx, np.asarray(getattr(s, "u", s))) for s in deflation]
        deflate = (deflation_strength * max(1.0, max(abs(ctx.energy(np.asarray(getattr(s, "u", s))))
                                                      for s in deflation)),
                   deflation_radius, dirs)
    results: list[NehariResult] = []
    failures: list[str] = []
    attempts = 0
    ray_ok = 0
    while ray_ok < starts and attempts < max_attempts:
        rng = np.random.default_rng([rng_seed, attempts])
        attempts += 1
        d0 = _initial_direction(ctx, rng)
        try:
            res = _sphere_descent(ctx, d0, tol, fiber_tol, maxiter, switch, deflate, rng)
        except NoRayMaximumError as exc:
            failures.append(f"no ray maximum: {exc}")
            continue
        except (ReductionError, SolverError, NumericError) as exc:
            ray_ok += 1
            failures.append(f"solver failure: {exc}")
            continue
        ray_ok += 1
        u = res.u
        if polish:
            u2, rn, _ = _newton_polish(ctx, u, tol)
            # accept the polished point only if it stays on the same energy level
            if abs(ctx.energy(u2) - res.c_N) <= 1e-3 * max(abs(res.c_N), 1e-12):
                u = u2
        _finish(ctx, res, u, tol, witness, witness_points, fiber_tol)
        results.append(res)
    conv = [r for r in results if r.converged]
    best = min(conv, key=lambda r: r.c_N) if conv else None
    if best is None:
        msg = "no converged solution"
        if failures and all(f.startswith("no ray maximum") for f in failures) and not results:
            msg = "no ray maximum along any start direction"
        if results:
            msg += f" (best residual {min(r.residual_norm for r in results):.3e})"
    else:
        msg = f"{len(conv)} of {len(results)} starts converged"
    return GroundStateReport(best, results, attempts, failures, msg, time.perf_counter() - t_start)


def _finish(ctx, res: NehariResult, u, tol, witness, witness_points, fiber_tol):
    up = ctx.project_plus(u)
    tq = math.sqrt(max(ctx.quad(up), 0.0))
    res.fiber = FiberSolution(up, u - up, res.fiber.coeffs, res.fiber.potential,
                              _fiber_res(ctx, u, ctx.tilde_basis, ctx.G), ctx.energy(u),
                              res.fiber.iterations, res.fiber.history)
    if tq > 0:
        res.direction = up / tq
        res.t_u = tq
    res.c_N = res.fiber.energy
    res.residual_norm = ctx.residual_norm(u)
    nu = ctx.norm_V(u)
    memb = nehari_membership(ctx, u, tol)
    cert = {
        "weak_solution": bool(res.residual_norm <= tol * (1.0 + nu)),
        "v_plus_nonzero": bool(ctx.norm_V(up) > 1e-6 * nu) if nu > 0 else False,
        "positive_energy": bool(res.c_N > 0),
        "nehari_membership": memb["ok"],
    }
    res.converged = all(cert.values())
    if res.converged and witness:
        try:
            ok, ts, vals = unimodality_witness(ctx, res, n_points=witness_points, fiber_tol=fiber_tol)
            res.beta_curve = (ts, vals)
        except (ReductionError, NumericError):
            ok = False
        cert["beta_unimodal"] = bool(ok)
    if res.converged:
        est = mountain_pass_estimate(ctx, res, fiber_tol=fiber_tol)
        res.c_M = est.c_M
        cert["c_M_le_c_N"] = est.ordered
    res.certificates = cert
