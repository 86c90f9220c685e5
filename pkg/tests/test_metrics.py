import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2net.errors import ShapeError
from d2net.metrics import psnr, ssim
from oracles import psnr_loops, ssim_windows


class TestPsnr:
    def test_identical_sentinel(self, rng):
        a = rng.uniform(0, 1, (1, 3, 8, 8))
        assert math.isinf(psnr(a, a.copy()))

    def test_closed_form_offset_one_at_255(self):
        a = np.full((1, 3, 10, 10), 80.0)
        b = a + 1.0
        value = psnr(a, b, peak=255.0)
        assert abs(value - 20 * math.log10(255)) < 1e-10
        assert abs(value - 48.1308) < 1e-4

    def test_matches_scalar_loop_oracle(self, rng):
        a = rng.uniform(0, 1, (1, 3, 6, 6))
        b = rng.uniform(0, 1, (1, 3, 6, 6))
        assert abs(psnr(a, b) - psnr_loops(a, b)) < 1e-10

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (1, 3, 5, 5))
        b = rng.uniform(0, 1, (1, 3, 5, 5))
        assert psnr(a, b) == psnr(b, a)

    @given(seed=st.integers(0, 2**16))
    @settings(max_examples=25, deadline=None)
    def test_peak_covariance(self, seed):
        g = np.random.default_rng(seed)
        a = g.uniform(0, 1, (1, 3, 4, 4))
        b = g.uniform(0, 1, (1, 3, 4, 4))
        assert abs(psnr(a, b, peak=2.0) - psnr(a, b, peak=1.0)
                   - 20 * math.log10(2)) < 1e-9

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            psnr(rng.uniform(0, 1, (1, 3, 4, 4)), rng.uniform(0, 1, (1, 3, 4, 5)))


class TestSsim:
    def test_self_similarity_exact_one(self, rng):
        a = rng.uniform(0, 1, (1, 3, 16, 16))
        assert ssim(a, a.copy()) == 1.0

    def test_anticorrelated_binary_is_negative(self, rng):
        a = (rng.random((1, 1, 16, 16)) > 0.5).astype(np.float64)
        assert ssim(a, 1.0 - a) < 0.0

    def test_matches_window_loop_oracle(self, rng):
        a = rng.uniform(0, 1, (1, 3, 16, 16))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert abs(ssim(a, b) - ssim_windows(a, b)) < 1e-8

    def test_symmetric(self, rng):
        a = rng.uniform(0, 1, (1, 3, 16, 16))
        b = rng.uniform(0, 1, (1, 3, 16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_small_image_rejected(self, rng):
        with pytest.raises(ShapeError, match="window"):
            ssim(rng.uniform(0, 1, (1, 3, 8, 8)), rng.uniform(0, 1, (1, 3, 8, 8)))

    def test_accepts_unbatched(self, rng):
        a = rng.uniform(0, 1, (3, 12, 12))
        assert ssim(a, a.copy()) == 1.0
