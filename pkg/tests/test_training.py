import io

import numpy as np
import pytest

from d2net.config import toy_config
from d2net.errors import ConfigError, DataError, NonFiniteError
from d2net.network import D2Net, save_checkpoint
from d2net.training import (
    AdamState,
    DegradationSpec,
    adam_step,
    apply_degradation,
    cosine_lr,
    init_adam,
    l1_loss,
    make_batch,
    make_toy_images,
    trace_to_csv,
    train_toy,
)


class TestL1Loss:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        value, grad = l1_loss(x, x.copy())
        assert value == 0.0
        assert np.array_equal(grad, np.zeros_like(x))  # subgradient at ties is 0

    def test_constant_offset(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        value, _ = l1_loss(x + 0.5, x)
        assert abs(value - 0.5) < 1e-12

    def test_grad_is_scaled_sign(self, rng):
        pred = rng.standard_normal((1, 2, 3, 3))
        target = rng.standard_normal((1, 2, 3, 3))
        _, grad = l1_loss(pred, target)
        assert np.array_equal(grad, np.sign(pred - target) / pred.size)


class TestCosineSchedule:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(2e-4, 0, 1000) == 2e-4
        assert abs(cosine_lr(2e-4, 500, 1000) - 1e-4) < 1e-18
        assert cosine_lr(2e-4, 1000, 1000) < 1e-19

    def test_monotone_and_bounded(self):
        vals = [cosine_lr(1.0, t, 100) for t in range(101)]
        assert all(0.0 <= v <= 1.0 for v in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestAdam:
    def test_single_step_closed_form(self):
        theta = {"w": np.zeros(1)}
        state = init_adam(theta, base_lr=2e-4, total_steps=1000)
        grads = {"w": np.ones(1)}
        lr = adam_step(theta, grads, state)
        # bias correction makes mhat = vhat = 1 exactly after one step
        expected_lr = 2e-4 * 0.5 * (1 + np.cos(np.pi / 1000))
        assert abs(lr - expected_lr) < 1e-18
        expected = -expected_lr * 1.0 / (1.0 + 1e-8)
        assert abs(theta["w"][0] - expected) < 1e-18

    def test_zero_gradients_fixed_point(self, rng):
        theta = {"w": rng.standard_normal(5)}
        before = theta["w"].copy()
        state = init_adam(theta)
        adam_step(theta, {"w": np.zeros(5)}, state)
        assert np.array_equal(theta["w"], before)
        assert state.t == 1

    def test_lr_freezes_at_schedule_end(self):
        theta = {"w": np.ones(1)}
        state = init_adam(theta, base_lr=1e-3, total_steps=3)
        for _ in range(3):
            adam_step(theta, {"w": np.ones(1)}, state)
        frozen = theta["w"].copy()
        adam_step(theta, {"w": np.ones(1)}, state)  # lr(t>=T) == 0
        assert np.array_equal(theta["w"], frozen)

    def test_nan_grad_aborts_before_mutation(self, rng):
        theta = {"a": rng.standard_normal(3), "b": rng.standard_normal(3)}
        before = {k: v.copy() for k, v in theta.items()}
        state = init_adam(theta)
        bad = {"a": np.ones(3), "b": np.array([1.0, np.nan, 0.0])}
        with pytest.raises(NonFiniteError):
            adam_step(theta, bad, state)
        assert state.t == 0
        for k in theta:
            assert np.array_equal(theta[k], before[k])

    def test_scale_invariance_after_warmup(self, rng):
        seqs = [rng.standard_normal((60, 8)) for _ in range(1)]
        updates = {}
        for scale in (1.0, 10.0):
            theta = {"w": np.zeros(8)}
            state = init_adam(theta, base_lr=1e-3, total_steps=1000)
            for t in range(50):
                adam_step(theta, {"w": scale * seqs[0][t]}, state)
            before = theta["w"].copy()
            adam_step(theta, {"w": scale * seqs[0][50]}, state)
            updates[scale] = theta["w"] - before
        diff = np.abs(updates[1.0] - updates[10.0]).max()
        assert diff / np.abs(updates[1.0]).max() < 0.01


class TestDegradations:
    def test_identity_lowlight(self, rng):
        clean = rng.uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
        spec = DegradationSpec(kind="lowlight", gamma=1.0, scale=1.0,
                               read_noise=0.0, seed=1)
        assert np.array_equal(apply_degradation(spec, clean), clean)

    def test_haze_hand_value(self):
        clean = np.full((1, 3, 4, 4), 0.2, dtype=np.float64)
        spec = DegradationSpec(kind="haze", transmission=0.5, airlight=1.0, seed=0)
        out = apply_degradation(spec, clean)
        assert np.max(np.abs(out - 0.6)) < 1e-12  # 0.2*0.5 + 1.0*0.5

    def test_blur_preserves_mean_and_clamps(self, rng):
        clean = rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32)
        spec = DegradationSpec(kind="blur", blur_kernel="box", blur_length=5, seed=0)
        out = apply_degradation(spec, clean)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert abs(float(out.mean()) - float(clean.mean())) < 0.02

    def test_deterministic_given_seed(self, rng):
        clean = rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float32)
        spec = DegradationSpec(kind="lowlight", seed=9)
        assert np.array_equal(apply_degradation(spec, clean),
                              apply_degradation(spec, clean))

    def test_validation(self):
        with pytest.raises(ConfigError):
            DegradationSpec(kind="fog").validate()
        with pytest.raises(ConfigError):
            DegradationSpec(gamma=9.0).validate()
        with pytest.raises(ConfigError):
            DegradationSpec(kind="blur", blur_length=4).validate()


class TestBatching:
    def test_same_seed_bitwise(self):
        imgs = make_toy_images(8, 32, seed=0)
        spec = DegradationSpec(kind="haze", seed=0)
        a = make_batch(imgs, spec, 16, 4, seed=5)
        b = make_batch(imgs, spec, 16, 4, seed=5)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_identity_degradation_pairs_equal(self):
        imgs = make_toy_images(8, 32, seed=0)
        spec = DegradationSpec(kind="lowlight", gamma=1.0, scale=1.0,
                               read_noise=0.0, seed=0)
        degraded, clean = make_batch(imgs, spec, 16, 6, seed=3)
        assert np.array_equal(degraded, clean)  # identical geometry both sides

    def test_crop_too_large_rejected(self):
        imgs = make_toy_images(8, 16, seed=0)
        with pytest.raises(DataError):
            make_batch(imgs, DegradationSpec(seed=0), 32, 2, seed=0)

    def test_corpus_properties(self):
        imgs = make_toy_images(10, 48, seed=3)
        assert imgs.shape == (10, 3, 48, 48)
        assert imgs.min() >= 0.0 and imgs.max() <= 1.0
        assert imgs.std() > 0.1  # actual structure, not a flat field


class TestTrainToy:
    def tiny(self):
        return toy_config(base_channels=4, freq_patch=4)

    def test_zero_iters_is_identity_network(self):
        imgs = make_toy_images(8, 32, seed=1)
        r = train_toy(self.tiny(), DegradationSpec(kind="haze", seed=0), 0,
                      seed=0, images=imgs, crop=16, eval_every=0)
        assert r.psnr_restored == r.psnr_degraded
        x = imgs[:1]
        assert np.array_equal(r.net.forward_full_resolution(x), x)

    def test_short_run_trains_and_traces(self):
        imgs = make_toy_images(8, 32, seed=1)
        r = train_toy(self.tiny(), DegradationSpec(kind="haze", seed=0), 25,
                      seed=0, images=imgs, crop=16, eval_every=25)
        assert len(r.trace) == 25
        assert r.trace[-1].psnr is not None
        csv = trace_to_csv(r.trace)
        assert csv.splitlines()[0] == "step,lr,loss,psnr,ssim"
        assert len(csv.splitlines()) == 26

    def test_same_seed_bitwise_checkpoints(self):
        imgs = make_toy_images(8, 32, seed=1)
        blobs = []
        for _ in range(2):
            r = train_toy(self.tiny(), DegradationSpec(kind="lowlight", seed=0),
                          12, seed=4, images=imgs, crop=16, eval_every=0)
            buf = io.BytesIO()
            save_checkpoint(r.net, buf)
            blobs.append(buf.getvalue())
        assert blobs[0] == blobs[1]

    def test_insufficient_images_rejected(self):
        imgs = make_toy_images(4, 32, seed=1)
        with pytest.raises(DataError, match="at least 8"):
            train_toy(self.tiny(), DegradationSpec(seed=0), 5, images=imgs, crop=16)
