import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import decayed_profile
from poiseuille_lab.biot_savart import (
    HelmholtzSolver,
    commutator_residual,
    divergence,
    helmholtz_matrix,
    inverse_laplacian_stack,
    solve_stream,
    velocity_from_stream,
)
from poiseuille_lab.spectral import Grid, ModeField, from_spectrum, inner_product


def manufactured_error(n_y):
    g = Grid(n_x=4, L=6.0, n_y=n_y, fd_order=2)
    psi = np.exp(-(g.y**2))
    omega = ModeField(1, (4 * g.y**2 - 3) * psi, g)
    return np.abs(solve_stream(1, omega).values - psi).max()


class TestStreamSolve:
    def test_zero_gives_zero(self, small_grid):
        out = solve_stream(2, ModeField(2, np.zeros(small_grid.n_y), small_grid))
        assert not np.any(out.values)

    def test_manufactured_solution_converges_at_second_order(self):
        errs = [manufactured_error(n) for n in (63, 127, 255)]
        for coarse, fine in zip(errs, errs[1:]):
            assert coarse / fine == pytest.approx(4.0, rel=0.1)

    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_sine_eigenpair(self, k):
        g = Grid(n_x=8, L=6.0, n_y=127, fd_order=8)
        s = np.sin(np.pi * (g.y + g.L) / (2 * g.L))
        lam = (g.d2 @ s)[g.n_y // 2] / s[g.n_y // 2]
        out = solve_stream(k, ModeField(k, (lam - k**2) * s, g))
        np.testing.assert_allclose(out.values, s, atol=1e-13)
        assert lam == pytest.approx(-((np.pi / (2 * g.L)) ** 2), rel=1e-10)

    def test_residual_of_random_rhs(self, small_grid, rng):
        g = small_grid
        w = decayed_profile(g, rng)
        psi = HelmholtzSolver(2, g).solve(w)
        np.testing.assert_allclose(helmholtz_matrix(2, g) @ psi, w, atol=1e-12)

    def test_stacked_solve_matches_banded(self, small_grid, rng):
        g = small_grid
        spec = np.array([decayed_profile(g, rng) for _ in range(5)])
        spec[0] = spec[0].real
        stacked = inverse_laplacian_stack(spec, g)
        for k in range(5):
            np.testing.assert_allclose(stacked[k], HelmholtzSolver(k, g).solve(spec[k]), atol=1e-12)
        np.testing.assert_allclose(inverse_laplacian_stack(spec.real, g), stacked.real, atol=1e-12)

    def test_band_mismatch_and_negative_band(self, small_grid):
        with pytest.raises(ValueError):
            solve_stream(1, ModeField(2, np.zeros(small_grid.n_y), small_grid))
        with pytest.raises(ValueError):
            HelmholtzSolver(-1, small_grid)

    def test_deterministic(self, small_grid, rng):
        w = ModeField(1, decayed_profile(small_grid, rng), small_grid)
        assert np.array_equal(solve_stream(1, w).values, solve_stream(1, w).values)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
    def test_energy_identities(self, seed, k):
        g = Grid(n_x=20, L=6.0, n_y=80, fd_order=8)
        w = ModeField(k, decayed_profile(g, np.random.default_rng(seed)), g)
        psi = solve_stream(k, w)
        minus_psi_omega = -inner_product(psi, w)
        grad_psi = -inner_product(psi.with_values(g.d2 @ psi.values), psi) + k**2 * inner_product(psi, psi)
        assert minus_psi_omega >= 0
        assert minus_psi_omega == pytest.approx(grad_psi, rel=1e-10)
        # ||grad d_x psi||^2 = k^2 <-psi, w> <= ||w||^2
        assert k**2 * minus_psi_omega <= inner_product(w, w) * (1 + 1e-8)


class TestVelocity:
    def test_gaussian_stream(self):
        errs = []
        for n_y in (127, 255):
            g = Grid(n_x=8, L=6.0, n_y=n_y, fd_order=2)
            gauss = np.exp(-(g.y**2))
            psi = np.zeros((2, g.n_y), dtype=complex)
            psi[1] = gauss / 2  # e^{-y^2} cos x
            u1, u2 = velocity_from_stream(psi, g)
            x = g.x[:, None]
            phys1 = from_spectrum(u1, g)
            phys2 = from_spectrum(u2, g)
            np.testing.assert_allclose(phys2, -gauss * np.sin(x), atol=1e-14)
            errs.append(np.abs(phys1 - 2 * g.y * gauss * np.cos(x)).max())
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_shear_stream_has_no_vertical_velocity(self, small_grid):
        g = small_grid
        psi = ModeField(0, np.exp(-(g.y**2)), g)
        u1, u2 = velocity_from_stream([psi])
        assert not np.any(u2[0].values)
        np.testing.assert_allclose(u1[0].values, -(g.d1 @ psi.values))

    def test_divergence_free(self, small_grid, rng):
        g = small_grid
        spec = np.array([decayed_profile(g, rng) for _ in range(g.dealias_cut + 1)])
        spec[0] = spec[0].real
        u1, u2 = velocity_from_stream(inverse_laplacian_stack(spec, g), g)
        div = divergence(u1, u2, g)
        assert np.abs(div).max() <= 1e-10 * np.abs(u1).max()

    def test_array_input_needs_grid(self):
        with pytest.raises(ValueError):
            velocity_from_stream(np.zeros((2, 10)))


class TestCommutator:
    def test_zero(self, small_grid):
        assert commutator_residual(ModeField(1, np.zeros(small_grid.n_y), small_grid)) == 0.0

    def test_gaussian_residual_small_and_decreasing(self):
        res = []
        for n_y in (63, 127, 255):
            g = Grid(n_x=4, L=8.0, n_y=n_y, fd_order=2)
            res.append(commutator_residual(ModeField(1, np.exp(-(g.y**2)), g)))
        assert max(res) <= 5e-3
        assert res[0] > res[1] > res[2]

    def test_scale_invariant(self, small_grid, rng):
        w = ModeField(2, decayed_profile(small_grid, rng), small_grid)
        assert commutator_residual(w * 1e6) == pytest.approx(commutator_residual(w), rel=1e-9)

    def test_needs_nonzero_band(self, small_grid):
        with pytest.raises(ValueError):
            commutator_residual(ModeField(0, np.ones(small_grid.n_y), small_grid))
