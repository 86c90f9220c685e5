import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2net import spectral
from d2net.errors import ShapeError, SpectralResidueError
from oracles import circular_convolve2, dft2_direct_sum, dft2_loops, rel_err


class TestForward:
    def test_constant_grid_is_dc_only(self):
        c = 0.7
        X = spectral.dft2(np.full((8, 8), c))
        assert abs(X[0, 0] - 8 * c) < 1e-12  # (1/sqrt(64)) * 64c
        X[0, 0] = 0
        assert np.max(np.abs(X)) < 1e-12

    def test_impulse_has_flat_spectrum(self):
        x = np.zeros((8, 8))
        x[0, 0] = 1.0
        X = spectral.dft2(x)
        assert np.max(np.abs(X - 1.0 / 8.0)) < 1e-15

    def test_matches_quadruple_loop_oracle(self, rng):
        x = rng.standard_normal((4, 4))
        assert rel_err(spectral.dft2(x), dft2_loops(x)) < 1e-13

    def test_matches_direct_sum_oracle_8x8(self, rng):
        xs = rng.standard_normal((50, 8, 8))
        assert rel_err(spectral.dft2(xs), dft2_direct_sum(xs)) < 1e-12

    def test_reference_matches_direct_sum_oracle(self, rng):
        xs = rng.standard_normal((20, 8, 8))
        assert rel_err(spectral.dft2_reference(xs), dft2_direct_sum(xs)) < 1e-13

    def test_fast_path_agrees_with_reference(self, rng):
        for h, w in [(8, 8), (5, 7), (1, 4), (16, 8)]:
            x = rng.standard_normal((10, h, w))
            assert rel_err(spectral.dft2(x), spectral.dft2_reference(x)) < 1e-12

    def test_empty_extent_rejected(self):
        with pytest.raises(ShapeError):
            spectral.dft2(np.zeros((0, 8)))


class TestInverse:
    def test_roundtrip(self, rng):
        x = rng.standard_normal((30, 8, 8))
        back = spectral.idft2(spectral.dft2(x), imag_tol=1e-9 * np.max(np.abs(x)))
        assert rel_err(back, x) < 1e-12

    def test_zeros(self):
        assert np.array_equal(spectral.idft2(np.zeros((4, 4), dtype=complex)),
                              np.zeros((4, 4)))

    def test_residue_error_on_corrupt_spectrum(self, rng):
        X = spectral.dft2(rng.standard_normal((8, 8)))
        X[1, 1] += 10j  # break conjugate symmetry
        with pytest.raises(SpectralResidueError):
            spectral.idft2(X, imag_tol=1e-9)

    def test_convolution_theorem_oracle(self, rng):
        # product of unitary spectra inverts to circconv / sqrt(hw)
        for h, w in [(8, 8), (4, 6)]:
            q = rng.standard_normal((h, w))
            k = rng.standard_normal((h, w))
            lhs = spectral.idft2(spectral.dft2(q) * spectral.dft2(k),
                                 imag_tol=1e-9 * np.max(np.abs(q)) * np.max(np.abs(k)))
            rhs = circular_convolve2(q, k) / np.sqrt(h * w)
            assert rel_err(lhs, rhs) < 1e-12


class TestAmpPhase:
    def test_three_four_five(self):
        X = np.array([[3.0 + 4.0j]])
        amp, pha = spectral.amp_phase(X)
        assert amp[0, 0] == 5.0
        assert abs(pha[0, 0] - np.arctan2(4.0, 3.0)) < 1e-15
        assert abs(pha[0, 0] - 0.9273) < 1e-4

    def test_degenerate_bin(self):
        amp, pha = spectral.amp_phase(np.zeros((2, 2), dtype=complex))
        assert np.all(amp == 0.0) and np.all(pha == 0.0)

    def test_phase_range_half_open(self):
        X = np.array([[-1.0 - 0.0j, -1.0 + 0.0j]])
        _, pha = spectral.amp_phase(X)
        assert np.all(pha > -np.pi) and np.all(pha <= np.pi)

    def test_polar_roundtrip(self, rng):
        X = spectral.dft2(rng.standard_normal((8, 8)))
        back = spectral.from_amp_phase(*spectral.amp_phase(X))
        assert rel_err(back, X) < 1e-12


class TestPatchwise:
    def test_tiling_arithmetic(self, rng):
        x = rng.standard_normal((1, 1, 16, 16))
        spectra = spectral.patchwise_dft(x, 8)
        assert spectra.shape == (1, 1, 2, 2, 8, 8)

    def test_single_tile_equals_whole_grid(self, rng):
        x = rng.standard_normal((1, 1, 8, 8))
        spectra = spectral.patchwise_dft(x, 8)
        assert rel_err(spectra[0, 0, 0, 0], spectral.dft2(x[0, 0])) == 0.0

    def test_roundtrip(self, rng):
        x = rng.standard_normal((2, 3, 16, 24))
        spectra = spectral.patchwise_dft(x, 8)
        back = spectral.patchwise_idft(spectra, 16, 24,
                                       imag_tol=1e-9 * np.max(np.abs(x)))
        assert rel_err(back, x) < 1e-12

    def test_non_multiple_rejected_with_pad_hint(self, rng):
        with pytest.raises(ShapeError, match="pad"):
            spectral.patchwise_dft(rng.standard_normal((1, 1, 12, 16)), 8)

    def test_patch_transforms_are_independent(self, rng):
        x = rng.standard_normal((1, 1, 16, 8))
        spectra = spectral.patchwise_dft(x, 8)
        assert rel_err(spectra[0, 0, 1, 0], spectral.dft2(x[0, 0, 8:])) < 1e-15


class TestInvariants:
    def test_parseval(self, rng):
        x = rng.standard_normal((100, 8, 8))
        lhs = np.sum(x * x)
        rhs = np.sum(np.abs(spectral.dft2(x)) ** 2)
        assert abs(lhs - rhs) / lhs < 1e-10

    def test_linearity(self, rng):
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        al, be = 1.7, -0.3
        lhs = spectral.dft2(al * a + be * b)
        rhs = al * spectral.dft2(a) + be * spectral.dft2(b)
        assert rel_err(lhs, rhs) < 1e-12

    def test_conjugate_symmetry_real_input(self, rng):
        x = rng.standard_normal((8, 8))
        X = spectral.dft2(x)
        h, w = X.shape
        for u in range(h):
            for v in range(w):
                assert abs(X[u, v] - np.conj(X[(h - u) % h, (w - v) % w])) < 1e-12

    @given(h=st.integers(1, 8), w=st.integers(1, 8), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_property(self, h, w, seed):
        x = np.random.default_rng(seed).standard_normal((h, w))
        back = spectral.idft2(spectral.dft2(x), imag_tol=1e-9 * (np.max(np.abs(x)) + 1))
        assert rel_err(back, x) < 1e-11
