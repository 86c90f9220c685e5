import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2net import tensors
from d2net.errors import NonFiniteError, PrecisionError, ShapeError


def t4(data, dtype=np.float64):
    """Wrap a 2-D matrix as a (1, 1, H, W) tensor."""
    return np.asarray(data, dtype=dtype)[None, None]


class TestElementwise:
    def test_add_closed_form(self):
        out = tensors.add(t4([[1, 2], [3, 4]]), t4([[1, 1], [1, 1]]))
        assert np.array_equal(out, t4([[2, 3], [4, 5]]))

    def test_mul_annihilator(self, rng):
        a = rng.standard_normal((2, 3, 4, 5))
        assert np.array_equal(tensors.mul(a, np.zeros_like(a)), np.zeros_like(a))

    def test_scale_identity_bitwise(self, rng):
        a = rng.standard_normal((1, 2, 3, 3))
        assert np.array_equal(tensors.scale(a, 1.0), a)

    def test_shape_mismatch_names_both_shapes(self, rng):
        a = rng.standard_normal((1, 2, 3, 3))
        b = rng.standard_normal((1, 2, 3, 4))
        with pytest.raises(ShapeError, match=r"\(1, 2, 3, 3\).*\(1, 2, 3, 4\)"):
            tensors.add(a, b)

    def test_precision_mismatch_rejected(self, rng):
        a = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
        b = rng.standard_normal((1, 1, 2, 2))
        with pytest.raises(PrecisionError):
            tensors.sub(a, b)

    def test_double_matches_scalar_loop_exactly(self, rng):
        a = rng.standard_normal((1, 2, 3, 4))
        b = rng.standard_normal((1, 2, 3, 4))
        for op, ref in ((tensors.add, lambda x, y: x + y),
                        (tensors.sub, lambda x, y: x - y),
                        (tensors.mul, lambda x, y: x * y)):
            out = op(a, b)
            for idx in np.ndindex(a.shape):
                assert out[idx] == ref(a[idx], b[idx])  # 0 ULP

    def test_debug_guard_flags_nonfinite(self):
        tensors.set_debug_guards(True)
        try:
            big = np.full((1, 1, 1, 1), 1e308)
            with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
                tensors.add(big, big)
        finally:
            tensors.set_debug_guards(False)

    def test_non_4d_rejected(self):
        with pytest.raises(ShapeError):
            tensors.add(np.zeros((2, 2)), np.zeros((2, 2)))


class TestSplitConcat:
    def test_paper_split_arithmetic(self, rng):
        x = rng.standard_normal((1, 8, 2, 2))
        parts = tensors.split_channels(x, [1, 1, 1, 5])
        assert [p.shape[1] for p in parts] == [1, 1, 1, 5]

    def test_identity_split(self, rng):
        x = rng.standard_normal((1, 4, 2, 2))
        (only,) = tensors.split_channels(x, [4])
        assert np.array_equal(only, x)

    def test_concat_of_single(self, rng):
        x = rng.standard_normal((1, 3, 2, 2))
        assert np.array_equal(tensors.concat_channels([x]), x)

    def test_concat_shape(self, rng):
        a = rng.standard_normal((1, 1, 2, 2))
        b = rng.standard_normal((1, 1, 2, 2))
        assert tensors.concat_channels([a, b]).shape == (1, 2, 2, 2)

    def test_bad_sizes_error_lists_both(self):
        x = np.zeros((1, 4, 2, 2))
        with pytest.raises(ShapeError, match=r"\[1, 2\].*C=4"):
            tensors.split_channels(x, [1, 2])

    def test_concat_mismatch_names_part_index(self, rng):
        a = rng.standard_normal((1, 1, 2, 2))
        bad = rng.standard_normal((1, 1, 3, 2))
        with pytest.raises(ShapeError, match=r"parts\[2\]"):
            tensors.concat_channels([a, a, bad])

    @given(c_sizes=st.lists(st.integers(0, 5), min_size=1, max_size=5),
           n=st.integers(1, 2), h=st.integers(1, 4), w=st.integers(1, 4),
           seed=st.integers(0, 2**16))
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, c_sizes, n, h, w, seed):
        c = sum(c_sizes)
        x = np.random.default_rng(seed).standard_normal((n, max(c, 1), h, w))[:, :c]
        if c == 0:
            return
        back = tensors.concat_channels(tensors.split_channels(x, c_sizes))
        assert np.array_equal(back, x)


class TestPadCrop:
    def test_zero_pad_is_identity_object(self, rng):
        x = rng.standard_normal((1, 1, 3, 3))
        assert tensors.pad_reflect(x, 0, 0) is x

    def test_hand_evaluated_reflection(self):
        x = t4([[1.0, 2.0], [3.0, 4.0]])
        out = tensors.pad_reflect(x, 1, 0)
        assert np.array_equal(out[0, 0], np.array([[1, 2], [3, 4], [1, 2]], dtype=np.float64))

    def test_roundtrip_5x7(self, rng):
        x = rng.standard_normal((2, 3, 5, 7))
        back = tensors.crop(tensors.pad_reflect(x, 3, 4), 5, 7)
        assert np.array_equal(back, x)

    def test_pad_beyond_extent_rejected(self, rng):
        x = rng.standard_normal((1, 1, 3, 3))
        with pytest.raises(ShapeError):
            tensors.pad_reflect(x, 3, 0)

    @given(h=st.integers(2, 6), w=st.integers(2, 6),
           pb=st.integers(0, 5), pr=st.integers(0, 5), seed=st.integers(0, 2**16))
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_property(self, h, w, pb, pr, seed):
        if pb >= h or pr >= w:
            return
        x = np.random.default_rng(seed).standard_normal((1, 2, h, w))
        back = tensors.crop(tensors.pad_reflect(x, pb, pr), h, w)
        assert np.array_equal(back, x)

    def test_precision_preserved(self, rng):
        x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
        assert tensors.pad_reflect(x, 1, 1).dtype == np.float32
        assert tensors.crop(x, 2, 2).dtype == np.float32
