"""Vectorized numpy implementation of the pointwise nonlinearity kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are benchmarked and tested against.
"""

from __future__ import annotations

import numpy as np

# kind codes shared with the compiled extension
NONE, KERR, SATURATION, CUBIC_QUINTIC, DP_PIECEWISE, DP_SMOOTH, POWER = range(7)


def _sat_primitive(s: np.ndarray) -> np.ndarray:
    # s - log(1+s) without cancellation for small s
    small = s < 1e-4
    out = np.empty_like(s)
    ss = s[small]
    out[small] = ss * ss * (0.5 - ss * (1.0 / 3.0 - 0.25 * ss))
    sl = s[~small]
    out[~small] = sl - np.log1p(sl)
    return out


def _radial_chi(kind, s, c1, c2, p, delta):
    """F, chi(s) and chi'(s) for kinds written as F = G(|u|^2)."""
    if kind == KERR:
        F = 0.25 * c1 * s * s
        chi = c1 * s
        dchi = c1 * np.ones_like(s)
    elif kind == SATURATION:
        F = 0.5 * c1 * _sat_primitive(s)
        chi = c1 * s / (1.0 + s)
        dchi = c1 / (1.0 + s) ** 2
    elif kind == CUBIC_QUINTIC:
        F = 0.25 * c1 * s * s - c2 * s**3 / 6.0
        chi = c1 * s - c2 * s * s
        dchi = c1 - 2.0 * c2 * s
    elif kind == POWER:
        F = c1 * s ** (0.5 * p) / p
        chi = c1 * s ** (0.5 * p - 1.0)
        sr = s + delta * delta
        dchi = c1 * (0.5 * p - 1.0) * sr ** (0.5 * p - 2.0)
    else:
        raise ValueError(f"unknown radial kind {kind}")
    return F, chi, dchi


def _dp_g(kind, sig, c1, p, q):
    """F, g, g' for double-power kinds as functions of sigma = |Mu|."""
    if kind == DP_PIECEWISE:
        low = sig <= 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            F = np.where(low, c1 * sig**q / q, c1 * (sig**p / p + 1.0 / q - 1.0 / p))
            g = np.where(low, c1 * sig ** (q - 2.0), c1 * sig ** (p - 2.0))
            dg = np.where(
                low,
                0.5 * c1 * (q - 2.0) * sig ** (q - 4.0),
                0.5 * c1 * (p - 2.0) * sig ** (p - 4.0),
            )
    else:
        sq = sig**q
        base = 1.0 + sq
        F = c1 / p * np.expm1(p / q * np.log1p(sq))
        g = c1 * base ** (p / q - 1.0) * sig ** (q - 2.0)
        dg = 0.5 * c1 * (
            (p - q) * base ** (p / q - 2.0) * sig ** (2.0 * q - 4.0)
            + (q - 2.0) * base ** (p / q - 1.0) * sig ** (q - 4.0)
        )
    return F, g, dg


def pointwise(kind, U, c1, c2, p, q, M, want_hess=False, delta=0.0):
    """Energy density, gradient and (optionally) Hessian at many points.

    Args:
        kind: integer kind code.
        U: ``(N, 3)`` field values.
        c1: ``(N,)`` primary coefficient (chi3 or Gamma).
        c2: ``(N,)`` secondary coefficient (chi5).
        p, q: exponents.
        M: ``(3, 3)`` matrix for double-power kinds.
        want_hess: also return ``(N, 3, 3)`` Hessians.
        delta: regularization of ``|u|^{p-4}`` in the Hessian of pure powers.

    Returns:
        ``(F, f)`` or ``(F, f, H)``.
    """
    U = np.ascontiguousarray(U, dtype=float)
    n = U.shape[0]
    c1 = np.broadcast_to(np.asarray(c1, dtype=float), (n,))
    c2 = np.broadcast_to(np.asarray(c2, dtype=float), (n,))
    if kind == NONE:
        F = np.zeros(n)
        f = np.zeros((n, 3))
        H = np.zeros((n, 3, 3))
    elif kind in (KERR, SATURATION, CUBIC_QUINTIC, POWER):
        s = np.einsum("ij,ij->i", U, U)
        F, chi, dchi = _radial_chi(kind, s, c1, c2, p, delta)
        f = chi[:, None] * U
        if want_hess:
            H = chi[:, None, None] * np.eye(3) + 2.0 * dchi[:, None, None] * (
                U[:, :, None] * U[:, None, :]
            )
    elif kind in (DP_PIECEWISE, DP_SMOOTH):
        M = np.asarray(M, dtype=float)
        W = U @ M.T
        sig = np.sqrt(np.einsum("ij,ij->i", W, W))
        F, g, dg = _dp_g(kind, sig, c1, p, q)
        f = (g[:, None] * W) @ M
        if want_hess:
            inner = g[:, None, None] * np.eye(3) + 2.0 * dg[:, None, None] * (
                W[:, :, None] * W[:, None, :]
            )
            H = np.einsum("ai,nab,bj->nij", M, inner, M)
    else:
        raise ValueError(f"unknown kind code {kind}")
    if want_hess:
        return F, f, H
    return F, f
