import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import decayed_profile
from poiseuille_lab.spectral import (
    Grid,
    ModeField,
    band_weight,
    derivative_y,
    dst_forward,
    dst_inverse,
    from_modes,
    from_spectrum,
    inner_product,
    project,
    to_modes,
    to_spectrum,
    x_norm,
)


def physical_norm_sq(field, grid):
    return 2 * np.pi / grid.n_x * grid.h * np.sum(field**2)


class TestGrid:
    def test_nodes_exclude_walls(self):
        g = Grid(n_x=8, L=2.0, n_y=7, fd_order=2)
        assert g.h == pytest.approx(0.5)
        np.testing.assert_allclose(g.y, [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5])
        assert g.n_bands == 5 and g.dealias_cut == 2

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n_x=7), dict(n_x=2), dict(L=0.0), dict(fd_order=3), dict(n_y=10, fd_order=8)],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            Grid(**kwargs)

    @pytest.mark.parametrize("order", [2, 4, 6, 8])
    def test_d1_skew_and_d2_symmetric_negative(self, order):
        g = Grid(n_x=4, L=3.0, n_y=40, fd_order=order)
        d1, d2 = g.d1.toarray(), g.d2.toarray()
        np.testing.assert_array_equal(d1, -d1.T)
        np.testing.assert_array_equal(d2, d2.T)
        assert np.linalg.eigvalsh(d2).max() < 0

    @pytest.mark.parametrize("order", [2, 4, 6, 8])
    def test_d2_eigenvalues_match_sine_basis(self, order):
        g = Grid(n_x=4, L=3.0, n_y=40, fd_order=order)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(g.d2.toarray())), np.sort(g.d2_eigenvalues), rtol=1e-10)


class TestTransforms:
    def test_cosine_mode_lands_on_band_one(self, small_grid):
        g = small_grid
        prof = np.exp(-(g.y**2))
        spec = to_spectrum(np.cos(g.x)[:, None] * prof, g)
        np.testing.assert_allclose(spec[1], prof / 2, atol=1e-15)
        spec[1] = 0
        assert np.abs(spec).max() < 1e-15

    def test_shear_field_lands_on_band_zero(self, small_grid):
        g = small_grid
        prof = np.exp(-(g.y**2))
        spec = to_spectrum(np.broadcast_to(prof, (g.n_x, g.n_y)), g)
        np.testing.assert_allclose(spec[0], prof, rtol=1e-14)
        assert np.abs(spec[1:]).max() < 1e-15

    def test_parseval(self, small_grid, rng):
        g = small_grid
        f = rng.standard_normal((g.n_x, g.n_y))
        modal = sum(inner_product(m, m) for m in to_modes(f, g))
        assert modal == pytest.approx(physical_norm_sq(f, g), rel=1e-12)

    def test_round_trip(self, small_grid, rng):
        g = small_grid
        f = rng.standard_normal((g.n_x, g.n_y))
        np.testing.assert_allclose(from_modes(to_modes(f, g), g), f, atol=1e-13)
        np.testing.assert_allclose(from_spectrum(to_spectrum(f, g), g), f, atol=1e-13)

    def test_wrong_shape_is_refused(self, small_grid):
        with pytest.raises(ValueError):
            to_spectrum(np.zeros((small_grid.n_x + 2, small_grid.n_y)), small_grid)

    def test_dst_pair_inverts_complex_input(self, rng):
        v = rng.standard_normal(17) + 1j * rng.standard_normal(17)
        np.testing.assert_allclose(dst_inverse(dst_forward(v)), v, atol=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_x=st.sampled_from([4, 6, 8, 12]))
    def test_parseval_property(self, seed, n_x):
        g = Grid(n_x=n_x, L=2.0, n_y=17, fd_order=2)
        f = np.random.default_rng(seed).standard_normal((n_x, g.n_y))
        modal = sum(inner_product(m, m) for m in to_modes(f, g))
        assert modal == pytest.approx(physical_norm_sq(f, g), rel=1e-12)


class TestProjection:
    def test_average_matches_band_zero(self, small_grid, rng):
        g = small_grid
        f = rng.standard_normal((g.n_x, g.n_y))
        np.testing.assert_allclose(project(f, "zero", g)[0], to_spectrum(f, g)[0].real, atol=1e-12)

    def test_single_mode_cases(self, small_grid):
        g = small_grid
        prof = np.exp(-(g.y**2))
        wave = np.cos(g.x)[:, None] * prof
        shear = np.broadcast_to(prof, wave.shape)
        assert np.abs(project(wave, "zero", g)).max() < 1e-15
        assert np.abs(project(shear, "nonzero", g)).max() < 1e-15
        np.testing.assert_allclose(project(wave + shear, 1, g), wave, atol=1e-14)

    def test_unknown_selector(self, small_grid):
        with pytest.raises(ValueError):
            project(np.zeros((small_grid.n_x, small_grid.n_y)), "half", small_grid)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_projection_algebra(self, seed):
        g = Grid(n_x=8, L=2.0, n_y=17, fd_order=2)
        f = np.random.default_rng(seed).standard_normal((g.n_x, g.n_y))
        p0 = project(f, "zero", g)
        pn = project(f, "nonzero", g)
        np.testing.assert_allclose(p0 + pn, f, atol=1e-14)
        np.testing.assert_allclose(project(p0, "zero", g), p0, atol=1e-14)
        assert np.abs(project(pn, "zero", g)).max() < 1e-14


class TestDerivatives:
    @staticmethod
    def _error(n_y, which):
        g = Grid(n_x=4, L=6.0, n_y=n_y, fd_order=2)
        gauss = np.exp(-(g.y**2))
        exact = -2 * g.y * gauss if which == 1 else (4 * g.y**2 - 2) * gauss
        return np.abs(derivative_y(ModeField(0, gauss, g), which).values - exact).max()

    @pytest.mark.parametrize("which", [1, 2])
    def test_second_order_convergence(self, which):
        # h halves from 12/64 to 12/128 to 12/256
        errs = [self._error(n, which) for n in (63, 127, 255)]
        for coarse, fine in zip(errs, errs[1:]):
            assert coarse / fine == pytest.approx(4.0, rel=0.1)
            assert np.log2(coarse / fine) >= 1.9

    def test_linear_ramp(self):
        g = Grid(n_x=4, L=2.0, n_y=31, fd_order=4)
        d = derivative_y(ModeField(0, g.y, g), 1).values
        np.testing.assert_allclose(d[4:-4], 1.0, rtol=1e-12)

    def test_constant_only_feels_the_walls(self):
        g = Grid(n_x=4, L=2.0, n_y=31, fd_order=2)
        d = derivative_y(ModeField(0, np.ones(g.n_y), g), 1).values
        assert np.abs(d[1:-1]).max() == 0.0
        assert abs(d[0]) == pytest.approx(1 / (2 * g.h))

    @pytest.mark.parametrize("order", [2, 8])
    def test_sine_eigenfunction(self, order):
        errs = []
        for n_y in (63, 127):
            g = Grid(n_x=4, L=6.0, n_y=n_y, fd_order=order)
            s = np.sin(np.pi * (g.y + g.L) / (2 * g.L))
            d2s = derivative_y(ModeField(0, s, g), 2).values
            ratio = d2s / s
            # an exact discrete eigenvector: the ratio is constant
            assert np.ptp(ratio) < 1e-10
            errs.append(abs(ratio[0] + (np.pi / (2 * g.L)) ** 2))
        if order == 2:
            assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
        else:
            assert max(errs) < 1e-12

    def test_bad_order(self, small_grid):
        with pytest.raises(ValueError):
            derivative_y(ModeField(0, np.zeros(small_grid.n_y), small_grid), 3)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(0, 5))
    def test_summation_by_parts(self, seed, k):
        g = Grid(n_x=12, L=8.0, n_y=101, fd_order=8)
        rng = np.random.default_rng(seed)
        f = ModeField(k, decayed_profile(g, rng, k > 0), g)
        q = ModeField(k, decayed_profile(g, rng, k > 0), g)
        lhs = inner_product(derivative_y(f, 1), q) + inner_product(f, derivative_y(q, 1))
        scale = np.sqrt(inner_product(f, f) * inner_product(derivative_y(q, 1), derivative_y(q, 1)))
        assert abs(lhs) <= 1e-10 * scale


class TestInnerProduct:
    def test_band_weights(self):
        assert band_weight(0, 8) == band_weight(4, 8) == 2 * np.pi
        assert band_weight(1, 8) == 4 * np.pi

    def test_transport_pairing_vanishes(self, small_grid, rng):
        g = small_grid
        f = ModeField(2, decayed_profile(g, rng), g)
        transported = f.with_values(1j * f.k * g.y * f.values)
        assert abs(inner_product(transported, f)) < 1e-14 * inner_product(f, f)

    def test_weighted_integration_by_parts(self):
        g = Grid(n_x=4, L=8.0, n_y=511, fd_order=8)
        f = ModeField(1, np.exp(-(g.y**2)), g)
        lhs = inner_product(f.with_values(g.y * f.values), derivative_y(f, 1))
        assert lhs == pytest.approx(-0.5 * inner_product(f, f), rel=1e-6)

    def test_weights_and_band_mismatch(self, small_grid):
        g = small_grid
        f = ModeField(1, np.exp(-(g.y**2)), g)
        assert inner_product(f, f, "y2") == pytest.approx(
            inner_product(f.with_values(g.y * f.values), f.with_values(g.y * f.values))
        )
        with pytest.raises(ValueError):
            inner_product(f, ModeField(2, f.values, g))
        with pytest.raises(ValueError):
            inner_product(f, f, "y3")

    def test_band_zero_must_be_real(self, small_grid):
        with pytest.raises(ValueError):
            ModeField(0, 1j * np.ones(small_grid.n_y), small_grid)


class TestXNorm:
    def test_gaussian_moments(self):
        g = Grid(n_x=4, L=8.0, n_y=511, fd_order=8)
        exact = np.sqrt(2 * np.pi * np.sqrt(np.pi / 2) * (1 + 0.25))
        f = ModeField(0, np.exp(-(g.y**2)), g)
        assert x_norm(f) == pytest.approx(exact, rel=1e-12)
        phys = np.broadcast_to(np.exp(-(g.y**2)), (g.n_x, g.n_y))
        assert x_norm(phys, g) == pytest.approx(exact, rel=1e-12)

    def test_zero_and_homogeneity(self, small_grid, rng):
        g = small_grid
        assert x_norm(ModeField(3, np.zeros(g.n_y), g)) == 0.0
        f = ModeField(3, decayed_profile(g, rng), g)
        assert x_norm(f * (-2.5j)) == pytest.approx(2.5 * x_norm(f), rel=1e-14)

    def test_field_and_modes_agree(self, small_grid, rng):
        g = small_grid
        f = rng.standard_normal((g.n_x, g.n_y))
        assert x_norm(to_modes(f, g)) == pytest.approx(x_norm(f, g), rel=1e-12)
        assert x_norm(to_spectrum(f, g), g) == pytest.approx(x_norm(f, g), rel=1e-12)
