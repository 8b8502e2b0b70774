import numpy as np
import pytest

from hsifusion.checkpoint import load_checkpoint
from hsifusion.datacube import HsiCube
from hsifusion.degrade import ObservationModel, spatial_degrade, uniform_band_groups
from hsifusion.denoiser import DenoiserConfig, assemble_condition, init_params, predict_noise
from hsifusion.diffusion import simple_loss
from hsifusion.autodiff import backward
from hsifusion.schedule import linear_schedule
from hsifusion.synthetic import make_toy_dataset, observed_triples
from hsifusion.trainer import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    cosine_lr,
    sample_patch,
    train,
    train_step,
)


def tiny_model():
    return DenoiserConfig(bands=2, msi_bands=1, scale=2, base_channels=8,
                          channel_multipliers=(1,), attention_levels=(),
                          time_embed_dim=16, groups=4)


def tiny_dataset(rng, n=3, bands=2, size=8, scale=2):
    cubes = [HsiCube(rng.random((bands, size, size)).astype(np.float32)) for _ in range(n)]
    obs = ObservationModel(block=scale, srf=uniform_band_groups(bands, 1))
    return observed_triples(cubes, obs)


class TestCosineLr:
    def test_starts_at_maximum(self):
        assert cosine_lr(0, 1e-4, 50_000) == pytest.approx(1e-4)

    def test_midpoint_is_half(self):
        assert cosine_lr(25_000, 1e-4, 50_000) == pytest.approx(5e-5)

    def test_restarts_each_cycle(self):
        assert cosine_lr(50_000, 1e-4, 50_000) == pytest.approx(1e-4)
        for s in (3, 123, 4999):
            assert cosine_lr(s, 1e-3, 5000) == pytest.approx(cosine_lr(s + 5000, 1e-3, 5000))

    def test_positive_and_bounded(self):
        vals = [cosine_lr(s, 1e-4, 1000) for s in range(1000)]
        assert all(0 < v <= 1e-4 for v in vals)


class TestAdam:
    def test_two_step_scalar_trace(self):
        # hand-computed bias-corrected updates for g1 = 0.5, g2 = -0.25
        from hsifusion.autodiff import Tensor

        w = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
        params = {"w": w}
        opt = AdamState.for_params(params)
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8

        w.grad = np.array([0.5])
        adam_step(params, opt, lr)
        m1 = (1 - b1) * 0.5
        v1 = (1 - b2) * 0.25
        expected1 = 1.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
        assert w.data[0] == pytest.approx(expected1, abs=1e-10)

        w.grad = np.array([-0.25])
        adam_step(params, opt, lr)
        m2 = b1 * m1 + (1 - b1) * (-0.25)
        v2 = b2 * v1 + (1 - b2) * 0.0625
        mhat = m2 / (1 - b1**2)
        vhat = v2 / (1 - b2**2)
        expected2 = expected1 - lr * mhat / (np.sqrt(vhat) + eps)
        assert w.data[0] == pytest.approx(expected2, abs=1e-10)

    def test_moments_shaped_like_params(self, rng):
        cfg = tiny_model()
        params = init_params(cfg, rng)
        opt = AdamState.for_params(params)
        for name, p in params.items():
            assert opt.m[name].shape == p.shape
            assert opt.v[name].shape == p.shape

    def test_step_counter_monotone(self, rng):
        from hsifusion.autodiff import Tensor

        params = {"w": Tensor(np.zeros(2), requires_grad=True)}
        opt = AdamState.for_params(params)
        for i in range(1, 4):
            params["w"].grad = np.ones(2, dtype=np.float32)
            adam_step(params, opt, 1e-3)
            assert opt.step == i


class TestSamplePatch:
    def test_low_res_patch_size(self, rng):
        # patch 64 at 32x ratio leaves a 2x2 low-resolution crop
        x0 = rng.random((2, 128, 128)).astype(np.float32)
        obs = ObservationModel(block=32, srf=uniform_band_groups(2, 1))
        y = spatial_degrade(x0, obs)
        z = np.zeros((1, 128, 128), dtype=np.float32)
        xp, yp, zp = sample_patch([(x0, y, z)], 64, 32, rng)
        assert xp.shape == (2, 64, 64)
        assert yp.shape == (2, 2, 2)
        assert zp.shape == (1, 64, 64)

    def test_reproducible_with_seed(self, rng):
        ds = tiny_dataset(rng, n=4, size=16)
        a = sample_patch(ds, 4, 2, np.random.default_rng(5))
        b = sample_patch(ds, 4, 2, np.random.default_rng(5))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_redegrading_patch_reproduces_low_res_crop(self, rng):
        # crop alignment makes the block average of the x0 patch equal the
        # y patch exactly
        ds = tiny_dataset(rng, n=2, bands=3, size=16, scale=4)
        obs = ObservationModel(block=4, srf=uniform_band_groups(3, 1))
        for _ in range(10):
            xp, yp, zp = sample_patch(ds, 8, 4, rng)
            np.testing.assert_array_equal(spatial_degrade(xp, obs), yp)

    def test_patch_scale_divisibility(self, rng):
        ds = tiny_dataset(rng)
        with pytest.raises(ValueError, match="divisible"):
            sample_patch(ds, 5, 2, rng)

    def test_image_too_small(self, rng):
        ds = tiny_dataset(rng, size=4)
        with pytest.raises(ValueError, match="smaller"):
            sample_patch(ds, 8, 2, rng)


class TestTrainStep:
    def test_initial_loss_is_noise_power(self, rng):
        # zero-initialized head predicts 0, so the p=2 loss is mean(eps^2) ~ 1
        cfg = tiny_model()
        params = init_params(cfg, rng)
        opt = AdamState.for_params(params)
        sched = linear_schedule(50, 0.1)
        ds = tiny_dataset(rng, n=3, size=8)
        batch = [sample_patch(ds, 4, 2, rng) for _ in range(8)]
        loss = train_step(params, opt, batch, sched, 2, 0.0, rng, cfg)
        n = 8 * 2 * 4 * 4
        assert abs(loss - 1.0) < 4 * np.sqrt(2.0 / n)

    def test_non_finite_loss_raises_with_step(self, rng):
        cfg = tiny_model()
        params = init_params(cfg, rng)
        opt = AdamState.for_params(params)
        sched = linear_schedule(50, 0.1)
        bad = np.full((2, 4, 4), np.nan, dtype=np.float32)
        y = np.zeros((2, 2, 2), dtype=np.float32)
        z = np.zeros((1, 4, 4), dtype=np.float32)
        with pytest.raises(TrainingError, match="step"):
            train_step(params, opt, [(bad, y, z)], sched, 2, 1e-4, rng, cfg)

    def test_single_sample_memorization(self, rng):
        # a sufficient-capacity network must fit one fixed (x0, y, z, t, eps)
        cfg = tiny_model()
        params = init_params(cfg, rng)
        opt = AdamState.for_params(params)
        sched = linear_schedule(50, 0.1)
        (x0, y, z), = tiny_dataset(rng, n=1, size=8)
        t = 25
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        from hsifusion.diffusion import q_sample

        xt = q_sample(x0, t, eps, sched)
        cond = assemble_condition(xt, y, z).data
        loss = None
        for i in range(2000):
            pred = predict_noise(params, cfg, cond, t)
            l = simple_loss(eps, pred, 2)
            loss = l.item()
            if loss < 0.05:
                break
            backward(l)
            adam_step(params, opt, 2e-3)
            for p in params.values():
                p.zero_grad()
        assert loss < 0.05


class TestTrainLoop:
    def _cfg(self, iterations, **kw):
        base = dict(iterations=iterations, batch_size=2, patch=4, lr_max=1e-3,
                    cycle=100, loss_p=2, T=20, beta_end=0.1, seed=3,
                    checkpoint_every=2)
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_iterations_writes_init_checkpoint(self, rng, tmp_path):
        ds = tiny_dataset(rng)
        path = train(self._cfg(0), tiny_model(), ds, tmp_path / "run")
        ckpt = load_checkpoint(path)
        assert ckpt.step == 0
        assert ckpt.opt_state is not None

    def test_identical_seeds_identical_trajectories(self, rng, tmp_path):
        ds = tiny_dataset(rng)
        train(self._cfg(4), tiny_model(), ds, tmp_path / "a")
        train(self._cfg(4), tiny_model(), ds, tmp_path / "b")
        log_a = (tmp_path / "a" / "loss_log.tsv").read_text()
        log_b = (tmp_path / "b" / "loss_log.tsv").read_text()
        assert log_a == log_b

    def test_resume_matches_uninterrupted_run(self, rng, tmp_path):
        ds = tiny_dataset(rng)
        train(self._cfg(4), tiny_model(), ds, tmp_path / "full")
        train(self._cfg(2), tiny_model(), ds, tmp_path / "half")
        train(self._cfg(4), tiny_model(), ds, tmp_path / "resumed",
              resume_from=tmp_path / "half" / "checkpoint_final.ckpt")
        full = (tmp_path / "full" / "loss_log.tsv").read_text().splitlines()
        resumed = (tmp_path / "resumed" / "loss_log.tsv").read_text().splitlines()
        assert full[2:] == resumed  # steps 3..4 agree line for line

    def test_resume_requires_optimizer_state(self, rng, tmp_path):
        from hsifusion.checkpoint import save_checkpoint

        cfg = tiny_model()
        params = init_params(cfg, rng)
        p = tmp_path / "inference_only.ckpt"
        save_checkpoint(p, cfg, params, opt_state=None, step=5)
        with pytest.raises(ValueError, match="optimizer"):
            train(self._cfg(6), cfg, tiny_dataset(rng), tmp_path / "r", resume_from=p)

    def test_loss_log_format(self, rng, tmp_path):
        ds = tiny_dataset(rng)
        train(self._cfg(3), tiny_model(), ds, tmp_path / "fmt")
        lines = (tmp_path / "fmt" / "loss_log.tsv").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            step, loss, lr = line.split("\t")
            int(step)
            float(loss)
            float(lr)

    def test_patch_divisibility_validated(self, rng, tmp_path):
        with pytest.raises(ValueError, match="divisible"):
            train(self._cfg(1, patch=5), tiny_model(), tiny_dataset(rng), tmp_path / "x")

    def test_training_reduces_loss_on_toy_data(self, tmp_path):
        # median of the last 10% of steps below the first 10%
        cubes = make_toy_dataset(3, seed=2, bands=2, size=16, coarse=4)
        obs = ObservationModel(block=2, srf=uniform_band_groups(2, 1))
        ds = observed_triples(cubes, obs)
        cfg = self._cfg(60, batch_size=2, patch=8, lr_max=2e-3, checkpoint_every=0)
        model = tiny_model()
        train(cfg, model, ds, tmp_path / "prog")
        rows = [l.split("\t") for l in (tmp_path / "prog" / "loss_log.tsv").read_text().splitlines()]
        losses = [float(r[1]) for r in rows]
        head = np.median(losses[:6])
        tail = np.median(losses[-6:])
        assert tail < head
