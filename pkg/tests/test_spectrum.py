from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from nlmaxwell.errors import InvalidInputError, SpectralError
from nlmaxwell.material import MaterialTensors
from nlmaxwell.mesh import BoxGrid
from nlmaxwell.spectrum import (
    DegenerateFormWarning,
    MaxwellOperators,
    cluster_ids,
    index_count,
    maxwell_eigs,
    quadratic_form,
    spectral_split,
)

from oracles import continuum_cavity_eigenvalues, yee_cavity_eigenvalues

PI3 = (math.pi, math.pi, math.pi)


def mats(grid, mu_inv=1.0, V=1.0):
    return MaterialTensors.uniform(grid.resolution, mu_inv, V)


@pytest.fixture(scope="module")
def split8(cube8):
    return maxwell_eigs(cube8, mats(cube8), k=12)


class TestEigenvalues:
    def test_matches_discrete_dispersion(self, split8):
        ref = yee_cavity_eigenvalues(PI3, (8, 8, 8), 12)
        np.testing.assert_allclose(split8.eigenvalues, ref, rtol=1e-9)

    def test_multiplicities(self, split8):
        mult = split8.multiplicities()
        assert mult[0][1] == 3 and mult[1][1] == 2 and mult[2][1] == 6

    def test_sparse_path_matches_oracle(self):
        g = BoxGrid(PI3, (12, 12, 12))
        s = maxwell_eigs(g, mats(g), k=5)
        assert not s.info["dense"]
        np.testing.assert_allclose(s.eigenvalues, yee_cavity_eigenvalues(PI3, (12, 12, 12), 5), rtol=1e-9)

    def test_continuum_limit(self, split8):
        cont = continuum_cavity_eigenvalues(PI3, 5)
        np.testing.assert_allclose(cont, [2, 2, 2, 3, 3])
        assert abs(split8.eigenvalues[0] / 2.0 - 1) < 0.02

    def test_anisotropic_box(self):
        ext, res = (1.0, 1.3, 0.8), (6, 7, 5)
        g = BoxGrid(ext, res)
        s = maxwell_eigs(g, mats(g, 1.0, 2.0), k=6)
        np.testing.assert_allclose(s.eigenvalues, yee_cavity_eigenvalues(ext, res, 6, V=2.0), rtol=1e-9)

    def test_invariants(self, split8):
        ops = split8.ops
        X = split8.eigenfields
        G = X.T @ (ops.M @ X)
        np.testing.assert_allclose(G, np.eye(split8.k), atol=1e-10)
        assert np.all(split8.residuals <= 1e-8 * split8.eigenvalues)
        W = ops.helmholtz.project_W(X)
        assert np.abs(W).max() <= 1e-8

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_V_scaling(self, cube6, c):
        a = maxwell_eigs(cube6, mats(cube6), k=5).eigenvalues
        b = maxwell_eigs(cube6, mats(cube6, V=c), k=5).eigenvalues
        np.testing.assert_allclose(b, a / c, rtol=1e-10)

    def test_mu_scaling(self, cube6):
        a = maxwell_eigs(cube6, mats(cube6), k=5).eigenvalues
        b = maxwell_eigs(cube6, mats(cube6, mu_inv=2.5), k=5).eigenvalues
        np.testing.assert_allclose(b, 2.5 * a, rtol=1e-10)

    def test_kernel_treatments_agree(self, cube8):
        a = maxwell_eigs(cube8, mats(cube8), k=6, kernel="projection").eigenvalues
        b = maxwell_eigs(cube8, mats(cube8), k=6, kernel="regularization").eigenvalues
        np.testing.assert_allclose(b, a, rtol=1e-6)

    def test_monotone_in_V(self, cube6, rng):
        V1 = np.broadcast_to(np.eye(3), cube6.resolution + (3, 3)).copy()
        A = rng.standard_normal(cube6.resolution + (3, 3)) * 0.2
        V2 = V1 + np.einsum("...ij,...kj->...ik", A, A) + 0.01 * np.eye(3)
        l1 = maxwell_eigs(cube6, MaterialTensors.from_fields(cube6.resolution, 1.0, V1), k=5).eigenvalues
        l2 = maxwell_eigs(cube6, MaterialTensors.from_fields(cube6.resolution, 1.0, V2), k=5).eigenvalues
        assert np.all(l2 <= l1 * (1 + 1e-12))

    def test_errors(self, cube6):
        with pytest.raises(InvalidInputError):
            maxwell_eigs(cube6, mats(cube6), k=0)
        with pytest.raises(InvalidInputError):
            maxwell_eigs(cube6, mats(cube6), k=10**6)
        with pytest.raises(InvalidInputError):
            maxwell_eigs(cube6, mats(cube6), kernel="shift")


class TestSplit:
    def test_window_covers_threshold(self, cube8):
        s = spectral_split(cube8, mats(cube8, V=0.3), threshold=1.0)
        # eigenvalues scale by 1/0.3: everything up to 0.3 of the unit spectrum
        ref = yee_cavity_eigenvalues(PI3, (8, 8, 8), 40) / 0.3
        assert s.dim_tilde == int(np.sum(ref <= 1.0))
        assert s.complete and s.lambda_plus_min > 1.0

    def test_projector_identities(self, cube8, rng):
        s = spectral_split(cube8, mats(cube8, V=3.5), threshold=1.0)
        assert s.dim_tilde == 5
        u = rng.standard_normal(cube8.n_edges)
        parts = [s.project_plus(u), s.project_tilde(u), s.project_W(u)]
        np.testing.assert_allclose(sum(parts), u, atol=1e-8 * np.abs(u).max())
        for P, x in zip((s.project_plus, s.project_tilde, s.project_W), parts):
            np.testing.assert_allclose(P(x), x, atol=1e-9 * np.abs(u).max())

    def test_incomplete_window_refuses(self, cube8):
        s = maxwell_eigs(cube8, mats(cube8, V=2.5), k=3)
        assert not s.complete
        with pytest.raises(SpectralError):
            s.project_tilde(np.zeros(cube8.n_edges))

    def test_table(self, split8):
        t = split8.table()
        assert t[0]["index"] == 1 and {r["cluster"] for r in t[:3]} == {0}

    def test_cluster_ids(self):
        np.testing.assert_array_equal(cluster_ids(np.array([1.0, 1.0 + 1e-12, 2.0])), [0, 0, 1])


class TestQuadraticForm:
    def test_on_eigenfields(self, split8):
        ops = split8.ops
        for j in range(4):
            v = split8.eigenfields[:, j]
            assert quadratic_form(ops.grid, ops.materials, v, ops=ops) == pytest.approx(
                split8.eigenvalues[j] - 1, rel=1e-9)

    def test_signs(self, cube8, rng):
        s = spectral_split(cube8, mats(cube8, V=2.5))
        ops = s.ops
        for _ in range(5):
            vp = s.project_plus(rng.standard_normal(cube8.n_edges))
            vt = s.tilde_basis @ rng.standard_normal(s.dim_tilde)
            assert quadratic_form(cube8, ops.materials, vp, ops=ops) > 0
            assert quadratic_form(cube8, ops.materials, vt, ops=ops) <= 0

    def test_zero(self, cube6):
        assert quadratic_form(cube6, mats(cube6), np.zeros(cube6.n_edges)) == 0.0

    def test_shift(self, split8):
        ops = split8.ops
        v = split8.eigenfields[:, 0]
        q = quadratic_form(ops.grid, ops.materials, v, shift=2.5, ops=ops)
        assert q == pytest.approx(split8.eigenvalues[0] - 3.5, rel=1e-9)

    def test_warns_off_subspace(self, cube6, rng):
        with pytest.warns(UserWarning):
            quadratic_form(cube6, mats(cube6), rng.standard_normal(cube6.n_edges))


class TestIndexCount:
    def test_i0(self, cube8):
        assert index_count(cube8, mats(cube8)).index == 0

    def test_i_inf_counts_multiplicity(self, cube8):
        # lambda / 3.5 <= 1 holds for the triple near 2 and the pair near 3
        r = index_count(cube8, mats(cube8), shift=2.5)
        assert r.index == 5
        assert r.reference_index == 0 and r.monotone

    def test_threshold_below_spectrum(self, cube8):
        assert index_count(cube8, mats(cube8), threshold=0.5).index == 0

    def test_degenerate_warning(self, cube8):
        lam1 = yee_cavity_eigenvalues(PI3, (8, 8, 8), 1)[0]
        with pytest.warns(DegenerateFormWarning):
            index_count(cube8, mats(cube8), threshold=lam1)

    def test_monotone_random_psd_shifts(self, cube6, rng):
        for _ in range(3):
            A = rng.standard_normal((3, 3))
            S = A @ A.T
            r = index_count(cube6, mats(cube6), shift=S)
            assert r.reference_index <= r.index
