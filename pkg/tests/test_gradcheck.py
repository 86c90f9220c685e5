import numpy as np
import pytest

from d2net import ops
from d2net.gradcheck import (
    directional_check,
    finite_diff_check,
    run_op_checks,
)
from d2net.layers import Conv2d, GradStore


class TestHarness:
    def test_quadratic_closed_form(self, rng):
        x = rng.standard_normal((3, 4))
        report = finite_diff_check(lambda: float((x * x).sum()), x, 2 * x,
                                   rel_tol=1e-10, name="sum-of-squares")
        assert report.passed and report.max_rel_err <= 1e-10

    def test_gelu_near_zero_smooth(self, rng):
        x = rng.uniform(-0.1, 0.1, (1, 1, 4, 4))
        y0, c = ops.gelu(x)
        u = rng.standard_normal(y0.shape)
        gx = ops.gelu_backward(c, u)
        report = finite_diff_check(lambda: float((ops.gelu(x)[0] * u).sum()),
                                   x, gx, rel_tol=1e-7, name="gelu-near-zero")
        assert report.passed

    def test_report_identifies_worst_coordinate(self, rng):
        x = rng.standard_normal((2, 3))
        grad = 2 * x
        grad[1, 2] += 0.5  # corrupt one coordinate
        report = finite_diff_check(lambda: float((x * x).sum()), x, grad,
                                   rel_tol=1e-6, name="corrupted")
        assert not report.passed
        assert report.worst_coord == (1, 2)

    def test_fault_injection_fails(self):
        reports = run_op_checks(seed=0, inject_fault=True)
        assert any(not r.passed for r in reports)
        assert any(r.name.startswith("fault-injection") for r in reports)

    def test_row_format(self, rng):
        x = rng.standard_normal(4)
        report = finite_diff_check(lambda: float((x * x).sum()), x, 2 * x,
                                   rel_tol=1e-8, name="rowfmt")
        fields = report.row().split(",")
        assert fields[0] == "rowfmt" and fields[-1] in ("ok", "FAIL")


class TestDirectional:
    @pytest.mark.parametrize("case", ["conv", "layer_norm", "softmax"])
    def test_dot_product_matches_directional_derivative(self, rng, case):
        if case == "conv":
            layer = Conv2d(3, 4, 3, 3, rng=rng, dtype=np.float64)
            x = rng.standard_normal((1, 3, 6, 6))
            y0, cache = layer.forward(x)
            u = rng.standard_normal(y0.shape)
            g = GradStore()
            gx = layer.backward(cache, u, g, "")
            loss = lambda: float((layer.forward(x)[0] * u).sum())
        elif case == "layer_norm":
            gain, offset = np.ones(4), np.zeros(4)
            x = rng.standard_normal((1, 4, 5, 5))
            y0, cache = ops.layer_norm(x, gain, offset)
            u = rng.standard_normal(y0.shape)
            gx, _, _ = ops.layer_norm_backward(cache, u)
            loss = lambda: float((ops.layer_norm(x, gain, offset)[0] * u).sum())
        else:
            b = rng.standard_normal((1, 2, 4, 4))
            x = rng.standard_normal((1, 2, 4, 4))
            (w0, _), cache = ops.softmax_pair(x, b)
            u = rng.standard_normal(w0.shape)
            gx, _ = ops.softmax_pair_backward(cache, u, np.zeros_like(u))
            loss = lambda: float((ops.softmax_pair(x, b)[0][0] * u).sum())
        worst = directional_check(loss, x, gx, directions=20, rng=rng)
        assert worst <= 1e-5


class TestTraceContract:
    def test_backward_replay_is_bitwise(self, rng):
        layer = Conv2d(2, 3, 3, 3, rng=rng, dtype=np.float64)
        x = rng.standard_normal((1, 2, 6, 6))
        _, cache = layer.forward(x)
        gy = rng.standard_normal((1, 3, 6, 6))
        runs = []
        for _ in range(2):
            g = GradStore()
            gx = layer.backward(cache, gy, g, "")
            runs.append((gx, g["weight"], g["bias"]))
        for a, b in zip(*runs):
            assert np.array_equal(a, b)

    def test_backward_does_not_mutate_trace(self, rng):
        layer = Conv2d(2, 2, 3, 3, rng=rng, dtype=np.float64)
        x = rng.standard_normal((1, 2, 5, 5))
        _, cache = layer.forward(x)
        saved = cache[1].copy()
        layer.backward(cache, rng.standard_normal((1, 2, 5, 5)), GradStore(), "")
        assert np.array_equal(cache[1], saved)

    def test_gradient_accumulation_is_additive_bitwise(self, rng):
        layer = Conv2d(2, 2, 1, 1, rng=rng, dtype=np.float64)
        x = rng.standard_normal((1, 2, 4, 4))
        _, cache = layer.forward(x)
        ga = rng.standard_normal((1, 2, 4, 4))
        gb = rng.standard_normal((1, 2, 4, 4))
        joint = GradStore()
        layer.backward(cache, ga, joint, "")
        layer.backward(cache, gb, joint, "")
        sep_a, sep_b = GradStore(), GradStore()
        layer.backward(cache, ga, sep_a, "")
        layer.backward(cache, gb, sep_b, "")
        assert np.array_equal(joint["weight"], sep_a["weight"] + sep_b["weight"])
        assert np.array_equal(joint["bias"], sep_a["bias"] + sep_b["bias"])


def test_op_suite_is_green():
    assert all(r.passed for r in run_op_checks(seed=0))
