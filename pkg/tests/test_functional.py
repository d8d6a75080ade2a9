from __future__ import annotations

import json
import math

import numpy as np
import pytest

from nlmaxwell.errors import InvalidInputError, NumericError
from nlmaxwell.functional import EnergyContext, quadrature_nonlinear
from nlmaxwell.material import MaterialTensors, NonlinearityModel
from nlmaxwell.mesh import BoxGrid

from test_material import CATALOG


def make_ctx(grid, model, V=2.5, mu_inv=1.0):
    return EnergyContext(grid, MaterialTensors.uniform(grid.resolution, mu_inv, V), model)


@pytest.fixture(scope="module")
def grid():
    return BoxGrid((math.pi,) * 3, (6, 6, 6))


@pytest.fixture(scope="module")
def ctx(grid):
    return make_ctx(grid, NonlinearityModel("kerr", chi3=1.0))


class TestEnergy:
    def test_zero(self, ctx):
        assert ctx.energy(np.zeros(ctx.n)) == 0.0

    def test_gradient_field_negative(self, ctx, rng):
        w = ctx.G @ rng.standard_normal(ctx.G.shape[1])
        Phi, _ = ctx.nonlinear(w)
        J = ctx.energy(w)
        assert J == pytest.approx(-0.5 * float(w @ (ctx.M @ w)) - Phi, rel=1e-12)
        assert J < 0

    def test_eigenfield_linear(self, grid):
        c = make_ctx(grid, NonlinearityModel("none"), V=1.0)
        sp_ = c.split
        for j in range(3):
            v = sp_.eigenfields[:, j]
            assert c.energy(v) == pytest.approx(0.5 * (sp_.eigenvalues[j] - 1.0), rel=1e-10)

    def test_non_finite_names_cell(self, ctx):
        u = np.zeros(ctx.n)
        u[17] = 1e200
        with pytest.raises(NumericError, match="cell"):
            ctx.energy(u)

    def test_shape_checked(self, ctx):
        with pytest.raises(InvalidInputError):
            ctx.energy(np.zeros(3))


class TestGradient:
    def test_zero(self, ctx):
        assert not np.any(ctx.gradient(np.zeros(ctx.n)))

    @pytest.mark.parametrize("kind", sorted(set(CATALOG) - {"none"}))
    def test_fd_slope(self, grid, kind, rng):
        c = make_ctx(grid, CATALOG[kind])
        hs = np.array([1e-2, 1e-3])
        slopes = []
        for _ in range(20):
            u = 0.5 * rng.standard_normal(c.n)
            phi = rng.standard_normal(c.n)
            phi /= np.linalg.norm(phi)
            g = c.gradient(u)
            exact = float(phi @ (c.M @ g))
            errs = [abs((c.energy(u + h * phi) - c.energy(u - h * phi)) / (2 * h) - exact) for h in hs]
            slopes.append(math.log(errs[0] / errs[1]) / math.log(10.0))
        assert np.median(slopes) == pytest.approx(2.0, abs=0.1)

    def test_riesz_in_V_product(self, ctx, rng):
        u = rng.standard_normal(ctx.n) * 0.3
        g = ctx.gradient(u)
        np.testing.assert_allclose(ctx.M @ g, ctx.dual_gradient(u), atol=1e-10 * np.abs(g).max())
        assert ctx.residual_norm(u) == pytest.approx(math.sqrt(g @ (ctx.M @ g)), rel=1e-8)

    def test_certified_on_zero(self, ctx):
        assert ctx.certified(np.zeros(ctx.n))


class TestSecondDerivative:
    def test_W_directions_nonpositive(self, ctx, rng):
        for _ in range(100):
            u = rng.standard_normal(ctx.n)
            psi = ctx.G @ rng.standard_normal(ctx.G.shape[1])
            assert ctx.second_directional(u, psi) <= 0.0

    def test_eigenfield_at_zero(self, grid):
        c = make_ctx(grid, NonlinearityModel("kerr", chi3=1.0), V=1.0)
        v = c.split.eigenfields[:, 0]
        assert c.second_directional(np.zeros(c.n), v) == pytest.approx(c.split.eigenvalues[0] - 1, rel=1e-10)

    def test_polarization_symmetry(self, ctx, rng):
        for _ in range(5):
            u, a, b = rng.standard_normal((3, ctx.n))
            ab = ctx.second_directional(u, a, b)
            ba = ctx.second_directional(u, b, a)
            pol = 0.25 * (ctx.second_directional(u, a + b) - ctx.second_directional(u, a - b))
            assert ab == pytest.approx(ba, rel=1e-10)
            assert pol == pytest.approx(ab, rel=1e-10)

    @pytest.mark.parametrize("p", [3.0, 4.0, 5.0])
    def test_morse_formula_power(self, grid, rng, p):
        c = make_ctx(grid, NonlinearityModel("power", gamma=1.0, p=p))
        for _ in range(100):
            psi = c.G @ rng.standard_normal(c.G.shape[1])
            s = rng.uniform(0.1, 2.0)
            u = s * psi
            P = (c.A @ psi).reshape(-1, 3)
            nrm2 = np.sum(P * P, axis=1)
            # psi parallel to u in every cell: F''(u)[psi, psi] = (p - 1) |u|^(p-2) |psi|^2
            formula = -float(psi @ (c.M @ psi)) - (p - 1) * c.vol * float(np.sum(s ** (p - 2) * nrm2 ** (p / 2)))
            val = c.second_directional(u, psi, delta=0.0)
            assert val == pytest.approx(formula, rel=1e-10)
            assert val <= 0

    def test_hessian_fd(self, ctx, rng):
        u = 0.5 * rng.standard_normal(ctx.n)
        d = rng.standard_normal(ctx.n)
        h = 1e-6
        fd = (ctx.dual_gradient(u + h * d) - ctx.dual_gradient(u - h * d)) / (2 * h)
        np.testing.assert_allclose(ctx.hessian(u) @ d, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


class TestSplitting:
    def test_two_routes_agree(self, ctx, rng):
        assert ctx.split.dim_tilde == 3
        for _ in range(10):
            u = rng.standard_normal(ctx.n)
            a, b = ctx.energy(u), ctx.energy_split(u)
            assert b == pytest.approx(a, rel=1e-11, abs=1e-11 * ctx.norm_V(u) ** 2)

    @pytest.mark.parametrize("kind", ["kerr", "double_power_smooth", "saturation", "power"])
    def test_I_nonnegative(self, grid, rng, kind):
        c = make_ctx(grid, CATALOG[kind])
        assert c.I_split(np.zeros(c.n)) == 0.0
        for _ in range(10):
            assert c.I_split(rng.standard_normal(c.n)) >= 0.0

    def test_plus_norm_check(self, ctx):
        assert ctx.check_plus_norm() >= -1e-8

    def test_norm_plus(self, ctx):
        v = ctx.plus_modes[0][:, 0]
        assert ctx.norm_plus(v) == pytest.approx(math.sqrt(ctx.plus_modes[1][0] - 1.0), rel=1e-9)


class TestQuadrature:
    def test_hessian_blocks(self, grid, rng):
        m = CATALOG["double_power_smooth"]
        u = rng.standard_normal(grid.n_edges)
        Phi, g, H = quadrature_nonlinear(m, grid.A, grid.vol, u, hessian=True)
        Phi2, g2 = quadrature_nonlinear(m, grid.A, grid.vol, u)
        assert Phi == Phi2
        np.testing.assert_array_equal(g, g2)
        assert abs(H - H.T).max() < 1e-12

    def test_diagnostics(self, ctx, rng):
        d = ctx.diagnostics(0.2 * rng.standard_normal(ctx.n))
        assert set(d["certificates"]) == {"weak_solution", "v_plus_nonzero", "convex_model"}
        assert d["certificates"]["convex_model"]
        json.loads(ctx.diagnostics_json(np.zeros(ctx.n)))
