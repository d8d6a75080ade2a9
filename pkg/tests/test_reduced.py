"""Tests for the azimuthal (tau) reduction on a cylinder."""

from __future__ import annotations

import math

import numpy as np
import pytest

from nlmaxwell.errors import InvalidInputError, SymmetryError
from nlmaxwell.material import NonlinearityModel
from nlmaxwell.mesh import BoxGrid, face_mass
from nlmaxwell.reduced import (
    CylField,
    CylGrid,
    ReducedContext,
    cylinder_grid,
    interpolate,
    lift,
    reduced_apply,
    reduced_matrices,
    reduced_tau_solver,
)

A0, A1 = 0.7, 0.3
CUBIC = (1.0, 0.2, -0.1, 0.05)

# Reduced Kerr ground-state levels on R = 1, L = pi, nr = 24, nz = 32.
REDUCED_LEVELS = {-1.0: 147.3509276399, 0.0: 134.9604337783, 0.5: 128.8031976576}


def _cubic(z, d=0):
    c0, c1, c2, c3 = CUBIC
    if d == 0:
        return c0 + c1 * z + c2 * z**2 + c3 * z**3
    return 2 * c2 + 6 * c3 * z


def keystone_alpha(r, z):
    return (A0 + A1 * r**2) * _cubic(z)


def keystone_L(r, z):
    """Closed form of ``-(alpha_rr + 3 alpha_r / r + alpha_zz)``."""
    return -(8 * A1 * _cubic(z) + (A0 + A1 * r**2) * _cubic(z, 2))


@pytest.fixture(scope="module")
def cyl():
    return CylGrid(1.0, math.pi, 24, 32)


def keystone_mismatch(cyl, n=32):
    """Relative mismatch of the 3D curl-curl on a lifted polynomial versus the reduced operator."""
    full = cyl.sample(keystone_alpha)
    out = reduced_apply(cyl, full)
    g = BoxGrid((2.0, 2.0, math.pi), (n, n, n))
    u = lift(cyl, full, g, free_only=False)
    Ku = (g.curl_full.T @ face_mass(g, 1.0) @ g.curl_full) @ u / g.vol
    ofull = np.full((cyl.nr + 1, cyl.nz + 1), np.nan)
    ofull[: cyl.nr, 1 : cyl.nz] = out
    pts, axes = g.edge_points(free_only=False)
    x, y, z = pts[:, 0] - 1.0, pts[:, 1] - 1.0, pts[:, 2]
    r = np.hypot(x, y)
    Lv = interpolate(cyl, ofull, r, z)
    ref = np.where(axes == 0, -y * Lv, np.where(axes == 1, x * Lv, 0.0))
    h = g.h[0]
    sel = ((r + 2 * h < 1.0 - cyl.h_r) & (z > 2 * g.h[2] + cyl.h_z)
           & (z < math.pi - 2 * g.h[2] - cyl.h_z) & np.isfinite(ref))
    return float(np.linalg.norm(Ku[sel] - ref[sel]) / np.linalg.norm(ref[sel])), int(sel.sum())


class TestCylGrid:
    def test_nodes(self, cyl):
        assert cyl.r[0] == pytest.approx(cyl.h_r / 2)
        assert cyl.r[-1] == pytest.approx(cyl.R)
        assert cyl.z[-1] == pytest.approx(cyl.L)
        assert cyl.shape == (24, 31)
        assert cyl.n == 24 * 31

    def test_weights(self, cyl):
        assert cyl.w1.sum() == pytest.approx(cyl.faces[-1] ** 2 / 2)
        assert cyl.w3.sum() == pytest.approx(cyl.faces[-1] ** 4 / 4)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 4, 4), (1.0, -1.0, 4, 4), (1.0, 1.0, 1, 4), (1.0, 1.0, 4, 3)])
    def test_invalid(self, args):
        with pytest.raises(InvalidInputError):
            CylGrid(*args)

    def test_full_interior_roundtrip(self, cyl, rng):
        v = rng.standard_normal(cyl.n)
        np.testing.assert_array_equal(cyl.interior(cyl.full(v)), v)
        f = cyl.full(v)
        assert np.all(f[-1] == 0) and np.all(f[:, 0] == 0) and np.all(f[:, -1] == 0)

    def test_interior_shape_check(self, cyl):
        with pytest.raises(InvalidInputError):
            cyl.interior(np.zeros((3, 3)))

    def test_field_shape_check(self, cyl):
        with pytest.raises(InvalidInputError):
            CylField(cyl, np.zeros((2, 2)))


class TestOperators:
    def test_interpolation_exact(self, cyl, rng):
        vals = cyl.sample(keystone_alpha)
        r = rng.uniform(0.0, 1.0, 50)
        z = rng.uniform(0.0, math.pi, 50)
        np.testing.assert_allclose(interpolate(cyl, vals, r, z), keystone_alpha(r, z), atol=1e-12)

    def test_interpolation_outside_is_zero(self, cyl):
        vals = cyl.sample(keystone_alpha)
        out = interpolate(cyl, vals, [1.5, 0.5, 0.5], [1.0, -0.5, 4.0])
        np.testing.assert_array_equal(out, 0.0)

    def test_reduced_apply_exact(self, cyl):
        out = reduced_apply(cyl, cyl.sample(keystone_alpha))
        rr, zz = np.meshgrid(cyl.r[:-1], cyl.z[1:-1], indexing="ij")
        np.testing.assert_allclose(out, keystone_L(rr, zz), atol=1e-10)

    def test_matrix_matches_strong_form(self, cyl, rng):
        K, M = reduced_matrices(cyl)
        a = rng.standard_normal(cyl.n)
        np.testing.assert_allclose(K @ a / M.diagonal(), reduced_apply(cyl, cyl.full(a)).ravel(),
                                   atol=1e-9 * np.abs(K @ a / M.diagonal()).max())

    def test_matrices_symmetric(self, cyl):
        K, M = reduced_matrices(cyl, 2.0)
        assert abs(K - K.T).max() < 1e-12 * abs(K).max()
        assert np.all(M.diagonal() > 0)

    def test_keystone(self, cyl):
        mis, n = keystone_mismatch(cyl)
        assert n > 1000
        assert mis <= 1e-8

    def test_lift_is_tau(self):
        cyl = CylGrid(1.0, 2.0, 8, 8)
        g = cylinder_grid(1.0, 2.0, 12, 8)
        u = lift(cyl, np.ones((9, 9)), g)
        pts, axes = g.edge_points()
        expect = np.where(axes == 0, -(pts[:, 1] - 1.0), np.where(axes == 1, pts[:, 0] - 1.0, 0.0))
        np.testing.assert_allclose(u, expect, atol=1e-12)


class _OddKerr(NonlinearityModel):
    @property
    def is_even(self):
        return False


class TestModelChecks:
    def test_non_even_refused(self, cyl):
        with pytest.raises(SymmetryError):
            ReducedContext(cyl, _OddKerr("kerr", chi3=1.0))

    def test_array_coefficient_refused(self, cyl):
        with pytest.raises(SymmetryError):
            ReducedContext(cyl, NonlinearityModel("kerr", chi3=np.ones((2, 2, 2))))

    def test_non_commuting_matrix_refused(self, cyl):
        M = np.diag([1.0, 2.0, 1.0])
        with pytest.raises(SymmetryError):
            ReducedContext(cyl, NonlinearityModel("double_power_smooth", M=M, p=4.0, q=8.0))

    def test_cubic_quintic_accepted(self, cyl):
        ctx = ReducedContext(CylGrid(1.0, math.pi, 6, 8),
                             NonlinearityModel("cubic_quintic", chi3=1.0, chi5=0.1))
        assert ctx.n == 6 * 7

    def test_bad_mu(self, cyl):
        with pytest.raises(InvalidInputError):
            ReducedContext(cyl, NonlinearityModel("kerr", chi3=1.0), mu_inv=0.0)


class TestReducedSolve:
    @pytest.mark.parametrize("lam", sorted(REDUCED_LEVELS))
    def test_ground_state(self, cyl, lam):
        sol = reduced_tau_solver(cyl, NonlinearityModel("kerr", chi3=1.0), V=lam, starts=4)
        assert sol.converged
        assert sol.residual_norm <= 1e-7
        assert sol.c_N == pytest.approx(REDUCED_LEVELS[lam], rel=1e-6)

    def test_level_decreases_with_lambda(self):
        assert REDUCED_LEVELS[-1.0] > REDUCED_LEVELS[0.0] > REDUCED_LEVELS[0.5]

    def test_spectrum_positive_below_first_eigenvalue(self, cyl):
        ctx = ReducedContext(cyl, NonlinearityModel("kerr", chi3=1.0), V=0.5)
        assert ctx.tilde_basis.shape[1] == 0
        assert ctx.eigenvalues[0] > 0
