# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pointwise nonlinearity kernels (same contract as _pykernels)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, log1p, pow, sqrt

cnp.import_array()

DEF NONE = 0
DEF KERR = 1
DEF SATURATION = 2
DEF CUBIC_QUINTIC = 3
DEF DP_PIECEWISE = 4
DEF DP_SMOOTH = 5
DEF POWER = 6


cdef inline double _sat_primitive(double s) nogil:
    if s < 1e-4:
        return s * s * (0.5 - s * (1.0 / 3.0 - 0.25 * s))
    return s - log1p(s)


def pointwise(int kind, U, c1, c2, double p, double q, M, bint want_hess=False,
              double delta=0.0):
    cdef const double[:, :] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t n = Uv.shape[0]
    cdef const double[:] c1v = np.ascontiguousarray(
        np.broadcast_to(np.asarray(c1, dtype=np.float64), (n,)))
    cdef const double[:] c2v = np.ascontiguousarray(
        np.broadcast_to(np.asarray(c2, dtype=np.float64), (n,)))
    cdef const double[:, :] Mv = np.ascontiguousarray(M, dtype=np.float64)
    cdef cnp.ndarray[cnp.double_t, ndim=1] F = np.zeros(n)
    cdef cnp.ndarray[cnp.double_t, ndim=2] f = np.zeros((n, 3))
    cdef cnp.ndarray[cnp.double_t, ndim=3] H = np.zeros((n if want_hess else 0, 3, 3))
    cdef double[:] Fv = F
    cdef double[:, :] fv = f
    cdef double[:, :, :] Hv = H
    cdef Py_ssize_t i, a, b, k
    cdef double s, chi, dchi, sr, sig, g, dg, base, sq
    cdef double w[3]
    cdef double inner[3][3]
    if kind < 0 or kind > 6:
        raise ValueError(f"unknown kind code {kind}")
    if kind == NONE:
        return (F, f, H) if want_hess else (F, f)
    with nogil:
        for i in range(n):
            if kind == DP_PIECEWISE or kind == DP_SMOOTH:
                for a in range(3):
                    w[a] = Mv[a, 0] * Uv[i, 0] + Mv[a, 1] * Uv[i, 1] + Mv[a, 2] * Uv[i, 2]
                sig = sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
                dg = 0.0
                if sig == 0.0:
                    Fv[i] = 0.0
                    g = 0.0
                elif kind == DP_PIECEWISE:
                    if sig <= 1.0:
                        sq = pow(sig, q - 2.0)
                        g = c1v[i] * sq
                        Fv[i] = g * sig * sig / q
                        if want_hess:
                            dg = 0.5 * (q - 2.0) * g / (sig * sig)
                    else:
                        sq = pow(sig, p - 2.0)
                        g = c1v[i] * sq
                        Fv[i] = g * sig * sig / p + c1v[i] * (1.0 / q - 1.0 / p)
                        if want_hess:
                            dg = 0.5 * (p - 2.0) * g / (sig * sig)
                else:
                    # sigma^q and (1 + sigma^q)^(p/q - 1) from one log each
                    sq = exp(q * log(sig))
                    base = log1p(sq)
                    Fv[i] = c1v[i] / p * expm1(p / q * base)
                    sr = exp((p / q - 1.0) * base)
                    g = c1v[i] * sr * sq / (sig * sig)
                    if want_hess:
                        dg = 0.5 * g / (sig * sig) * ((p - q) * sq / (1.0 + sq) + (q - 2.0))
                for a in range(3):
                    fv[i, a] = g * (Mv[0, a] * w[0] + Mv[1, a] * w[1] + Mv[2, a] * w[2])
                if want_hess:
                    for a in range(3):
                        for b in range(3):
                            inner[a][b] = 2.0 * dg * w[a] * w[b]
                        inner[a][a] += g
                    for a in range(3):
                        for b in range(3):
                            sr = 0.0
                            for k in range(3):
                                sr = sr + Mv[k, a] * (inner[k][0] * Mv[0, b]
                                                      + inner[k][1] * Mv[1, b]
                                                      + inner[k][2] * Mv[2, b])
                            Hv[i, a, b] = sr
            else:
                s = Uv[i, 0] * Uv[i, 0] + Uv[i, 1] * Uv[i, 1] + Uv[i, 2] * Uv[i, 2]
                if kind == KERR:
                    Fv[i] = 0.25 * c1v[i] * s * s
                    chi = c1v[i] * s
                    dchi = c1v[i]
                elif kind == SATURATION:
                    Fv[i] = 0.5 * c1v[i] * _sat_primitive(s)
                    chi = c1v[i] * s / (1.0 + s)
                    dchi = c1v[i] / ((1.0 + s) * (1.0 + s))
                elif kind == CUBIC_QUINTIC:
                    Fv[i] = 0.25 * c1v[i] * s * s - c2v[i] * s * s * s / 6.0
                    chi = c1v[i] * s - c2v[i] * s * s
                    dchi = c1v[i] - 2.0 * c2v[i] * s
                else:
                    chi = c1v[i] * pow(s, 0.5 * p - 1.0)
                    Fv[i] = chi * s / p
                    dchi = 0.0
                    if want_hess:
                        sr = s + delta * delta
                        dchi = c1v[i] * (0.5 * p - 1.0) * pow(sr, 0.5 * p - 2.0)
                for a in range(3):
                    fv[i, a] = chi * Uv[i, a]
                if want_hess:
                    for a in range(3):
                        for b in range(3):
                            Hv[i, a, b] = 2.0 * dchi * Uv[i, a] * Uv[i, b]
                        Hv[i, a, a] += chi
    if want_hess:
        return F, f, H
    return F, f
