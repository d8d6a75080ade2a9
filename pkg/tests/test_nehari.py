from __future__ import annotations

import math

import numpy as np
import pytest

from nlmaxwell.errors import InvalidInputError, NonConvexModelError, NoRayMaximumError
from nlmaxwell.functional import EnergyContext
from nlmaxwell.material import MaterialTensors, NonlinearityModel
from nlmaxwell.mesh import BoxGrid
from nlmaxwell.nehari import (
    beta,
    fiber_minimize,
    ground_state,
    mountain_pass_estimate,
    nehari_membership,
    ray_maximize,
    unimodality_witness,
)
from nlmaxwell.reduced import CylGrid, ReducedContext

from oracles import quartic_ray_maximum


def make_ctx(n=6, V=2.5, model=None):
    g = BoxGrid((math.pi,) * 3, (n, n, n))
    model = model or NonlinearityModel("kerr", chi3=1.0)
    return EnergyContext(g, MaterialTensors.uniform(g.resolution, 1.0, V), model)


@pytest.fixture(scope="module")
def ctx():
    return make_ctx()


@pytest.fixture(scope="module")
def uplus(ctx):
    rng = np.random.default_rng(3)
    return 0.8 * ctx.project_plus(rng.standard_normal(ctx.n))


class TestFiber:
    def test_zero_plus(self, ctx):
        fs = fiber_minimize(ctx, np.zeros(ctx.n))
        assert np.abs(fs.tilde).max() <= 1e-14

    def test_linear_model_gives_zero(self, uplus):
        c = make_ctx(model=NonlinearityModel("none"))
        fs = fiber_minimize(c, uplus)
        assert np.abs(fs.tilde).max() <= 1e-12 * np.abs(uplus).max()

    def test_residual_and_uniqueness(self, ctx, uplus, rng):
        a = fiber_minimize(ctx, uplus)
        assert a.inner_residual <= 1e-10 * (1 + ctx.norm_plus(uplus))
        x0 = (rng.standard_normal(ctx.tilde_basis.shape[1]), rng.standard_normal(ctx.G.shape[1]))
        b = fiber_minimize(ctx, uplus, x0=x0)
        assert np.abs(a.total - b.total).max() <= 1e-7 * np.abs(a.total).max()

    def test_optimality(self, ctx, uplus, rng):
        fs = fiber_minimize(ctx, uplus)
        I0 = ctx.I_split(fs.total)
        scale = abs(I0) + 1.0
        for size in (1e-3, 1e-2, 1e-1):
            for _ in range(67):
                d = ctx.tilde_basis @ rng.standard_normal(ctx.tilde_basis.shape[1])
                d += ctx.G @ rng.standard_normal(ctx.G.shape[1])
                d *= size / ctx.norm_V(d)
                assert ctx.I_split(fs.total + d) >= I0 - 1e-10 * scale

    def test_energy_consistent(self, ctx, uplus):
        fs = fiber_minimize(ctx, uplus)
        assert fs.energy == pytest.approx(ctx.energy(fs.total), rel=1e-12)

    def test_nonconvex_refused(self, uplus):
        c = make_ctx(model=NonlinearityModel("cubic_quintic", chi3=1.0, chi5=1.0))
        with pytest.raises(NonConvexModelError):
            fiber_minimize(c, uplus)

    def test_bad_tol(self, ctx, uplus):
        with pytest.raises(InvalidInputError):
            fiber_minimize(ctx, uplus, tol=0.0)


class TestRay:
    def test_beta_at_zero(self, ctx, uplus):
        assert beta(ctx, uplus, 0.0) == 0.0

    def test_linear_quadratic_beta(self):
        c = make_ctx(model=NonlinearityModel("none"))
        modes, lams = c.plus_modes
        d = modes[:, 0]
        for t in (0.5, 1.0, 3.0):
            assert beta(c, d, t) == pytest.approx(0.5 * t * t, rel=1e-10)
        # direction normalized to Q(d) = 1, so beta = t^2 / 2 irrespective of lambda
        assert lams[0] > 1

    def test_linear_has_no_maximum(self, uplus):
        c = make_ctx(model=NonlinearityModel("none"))
        with pytest.raises(NoRayMaximumError):
            ray_maximize(c, uplus)

    def test_no_plus_component(self, ctx):
        with pytest.raises(InvalidInputError):
            ray_maximize(ctx, ctx.tilde_basis[:, 0])

    def test_even_pair(self, ctx, uplus):
        a = ray_maximize(ctx, uplus)
        b = ray_maximize(ctx, -uplus)
        assert b.c_N == pytest.approx(a.c_N, rel=1e-10)

    def test_scaling_invariance(self, ctx, uplus):
        a = ray_maximize(ctx, uplus)
        b = ray_maximize(ctx, 7.3 * uplus)
        np.testing.assert_allclose(b.u, a.u, atol=1e-8 * np.abs(a.u).max())

    def test_stationary_on_ray(self, ctx, uplus):
        r = ray_maximize(ctx, uplus)
        m = nehari_membership(ctx, r.u)
        assert m["ok"]
        assert abs(r.beta_prime) <= 1e-8 * (1 + r.c_N)

    def test_unimodal(self, ctx, uplus):
        r = ray_maximize(ctx, uplus)
        ok, ts, vals = unimodality_witness(ctx, r)
        assert ok
        assert vals[0] == 0.0 and np.argmax(vals) == pytest.approx(10, abs=1)

    def test_closed_form_reduced(self):
        cyl = CylGrid(1.0, math.pi, 12, 16)
        rc = ReducedContext(cyl, NonlinearityModel("kerr", chi3=1.0), V=0.5)
        assert rc.tilde_basis.shape[1] == 0
        rng = np.random.default_rng(0)
        d = rng.standard_normal(rc.n)
        d /= math.sqrt(rc.quad(d))
        s = float(np.sum(rc.vol * np.sum((rc.A @ d).reshape(-1, 3) ** 2, axis=1) ** 2))
        t_ref, c_ref = quartic_ray_maximum(1.0, s)
        r = ray_maximize(rc, d)
        assert r.t_u == pytest.approx(t_ref, rel=1e-8)
        assert r.c_N == pytest.approx(c_ref, rel=1e-8)


class TestMountainPass:
    def test_none(self, ctx):
        assert mountain_pass_estimate(ctx, None) is None

    def test_along_direction(self, ctx, uplus):
        r = ray_maximize(ctx, uplus)
        est = mountain_pass_estimate(ctx, r)
        assert est.c_M == pytest.approx(r.c_N, rel=1e-8)
        assert est.ordered


@pytest.fixture(scope="module")
def gs():
    c = make_ctx(V=0.5)
    return c, ground_state(c, starts=2, rng_seed=1)


class TestGroundState:
    def test_found_and_certified(self, gs):
        c, rep = gs
        assert rep.found and rep.coverage == 1.0
        best = rep.best
        assert best.converged and all(best.certificates.values())
        assert best.residual_norm <= 1e-7 * (1 + c.norm_V(best.u))
        assert best.c_N > 0
        assert best.c_M <= best.c_N + 1e-8

    def test_starts_agree(self, gs):
        _, rep = gs
        e = rep.energies
        assert len(e) == 2 and max(e) - min(e) <= 1e-5 * min(e)

    def test_other_directions_above(self, gs):
        c, rep = gs
        rng = np.random.default_rng(9)
        for _ in range(3):
            r = ray_maximize(c, rng.standard_normal(c.n))
            assert r.c_N >= rep.best.c_N - 1e-7

    def test_deterministic(self, gs):
        c, rep = gs
        again = ground_state(c, starts=2, rng_seed=1)
        assert again.energies == rep.energies

    def test_linear_reports_no_solution(self):
        c = make_ctx(V=0.5, model=NonlinearityModel("none"))
        rep = ground_state(c, starts=2, max_attempts=3, witness=False)
        assert not rep.found
        assert rep.coverage == 0.0
        assert all("no ray maximum" in f for f in rep.failures)

    def test_invalid_starts(self, ctx):
        with pytest.raises(InvalidInputError):
            ground_state(ctx, starts=0)
