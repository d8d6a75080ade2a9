"""Independent closed-form oracles used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np


def yee_cavity_eigenvalues(extents, resolution, count: int, V: float = 1.0, mu_inv: float = 1.0):
    """Exact eigenvalues of the staggered-grid curl-curl operator on a box.

    The discrete Maxwell eigenvalue for mode numbers ``(m, n, k)`` is
    ``sum_a (2 / h_a)^2 sin^2(m_a pi / (2 N_a))`` (scaled by ``mu_inv / V``),
    with multiplicity 2 when all three indices are positive and 1 when
    exactly one vanishes.
    """
    h = [L / N for L, N in zip(extents, resolution)]
    out = []
    ranges = [range(0, N) for N in resolution]
    for idx in itertools.product(*ranges):
        nz = sum(1 for i in idx if i > 0)
        if nz < 2:
            continue
        lam = sum((2.0 / ha) ** 2 * math.sin(i * math.pi / (2 * N)) ** 2
                  for i, ha, N in zip(idx, h, resolution))
        out.extend([lam * mu_inv / V] * (2 if nz == 3 else 1))
    out.sort()
    return np.array(out[:count])


def continuum_cavity_eigenvalues(extents, count: int):
    """``(m pi/Lx)^2 + (n pi/Ly)^2 + (k pi/Lz)^2`` with at least two nonzero indices."""
    out = []
    for idx in itertools.product(range(0, 8), repeat=3):
        nz = sum(1 for i in idx if i > 0)
        if nz < 2:
            continue
        lam = sum((i * math.pi / L) ** 2 for i, L in zip(idx, extents))
        out.extend([lam] * (2 if nz == 3 else 1))
    out.sort()
    return np.array(out[:count])


def quartic_ray_maximum(q: float, s: float) -> tuple[float, float]:
    """Maximizer and maximum of ``beta(t) = q t^2 / 2 - s t^4 / 4``."""
    t = math.sqrt(q / s)
    return t, 0.25 * q * q / s
