"""Diffusion head tests: schedule laws, forward-noise law, DDIM oracle."""

import numpy as np
import pytest

from facestream.diffusion import (
    DiffusionHead,
    NoiseSchedule,
    add_noise,
    build_schedule,
    ddim_sample,
    sample_timesteps,
)


class TestSchedule:
    def test_endpoints_exact(self):
        s = build_schedule(1000, 0.00085, 0.012)
        assert s.beta[0] == 0.00085
        assert s.beta[-1] == 0.012

    def test_alpha_bar_strictly_decreasing(self):
        s = build_schedule(1000, 0.00085, 0.012)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert s.alpha_bar[0] == 1.0 - s.beta[0]
        # independent oracle: direct product over the betas
        prod = 1.0
        for b in s.beta:
            prod *= 1.0 - b
        assert s.alpha_bar[-1] == pytest.approx(prod, rel=1e-12)
        assert s.alpha_bar[-1] < 0.01

    def test_betas_in_open_interval(self):
        s = build_schedule(500, 1e-4, 0.05)
        assert np.all(s.beta > 0)
        assert np.all(s.beta < 1)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            build_schedule(1)

    def test_bad_endpoints_rejected(self):
        with pytest.raises(ValueError):
            build_schedule(10, 0.5, 0.1)


class TestAddNoise:
    def test_zero_noise(self):
        s = build_schedule(100)
        z0 = np.ones((2, 3))
        out = add_noise(z0, 40, np.zeros((2, 3)), s)
        np.testing.assert_allclose(out, np.sqrt(s.alpha_bar[40]) * z0)

    def test_zero_signal(self):
        s = build_schedule(100)
        eps = np.random.default_rng(0).normal(size=(2, 3))
        out = add_noise(np.zeros((2, 3)), 70, eps, s)
        np.testing.assert_allclose(out, np.sqrt(1 - s.alpha_bar[70]) * eps)

    def test_scalar_closed_form(self):
        s = NoiseSchedule(beta=np.array([0.1, 0.2]), alpha_bar=np.array([0.9, 0.25]))
        out = add_noise(np.array([1.0]), 1, np.array([2.0]), s)
        assert out[0] == pytest.approx(0.5 + np.sqrt(0.75) * 2.0, rel=1e-15)

    def test_variance_law(self):
        # sample variance of z_t - sqrt(abar) z0 approaches 1 - abar
        s = build_schedule(1000)
        rng = np.random.default_rng(7)
        t = 500
        z0 = np.full(10_000, 0.7)
        eps = rng.standard_normal(10_000)
        residual = add_noise(z0, t, eps, s) - np.sqrt(s.alpha_bar[t]) * z0
        target = 1.0 - s.alpha_bar[t]
        assert residual.var() == pytest.approx(target, rel=0.05)

    def test_shape_mismatch_rejected(self):
        s = build_schedule(10)
        with pytest.raises(ValueError):
            add_noise(np.zeros(3), 5, np.zeros(4), s)


class TestTimesteps:
    def test_uniform_stride_descending_from_last(self):
        ts = sample_timesteps(1000, 50)
        assert ts[0] == 999
        assert len(ts) == 50
        assert np.all(np.diff(ts) == -20)
        assert ts[-1] >= 0

    def test_single_step(self):
        np.testing.assert_array_equal(sample_timesteps(1000, 1), [999])

    def test_steps_beyond_schedule_rejected(self):
        with pytest.raises(ValueError):
            sample_timesteps(10, 11)


class TestDDIM:
    def test_oracle_denoiser_recovered_exactly(self):
        """A denoiser that always answers z0* must yield z0* for any step count:
        substituting z0_hat = z0* into the update keeps the implied-noise term
        consistent, and the final step returns z0_hat itself."""
        s = build_schedule(1000)
        z_star = np.random.default_rng(1).normal(size=(4, 8))
        for steps in [1, 10, 50]:
            calls = []

            def oracle(z_t, t):
                calls.append(t)
                return z_star

            out = ddim_sample(oracle, s, steps, np.random.default_rng(0), (4, 8))
            np.testing.assert_allclose(out, z_star, atol=1e-6)
            assert len(calls) == steps  # denoise budget law

    def test_same_seed_same_output(self):
        s = build_schedule(100)
        head = DiffusionHead((2, 4), cond_width=6, hidden=8, num_steps=100,
                             seed=0)
        cond = np.random.default_rng(2).normal(size=6)

        def fn(z_t, t):
            from facestream.diffusion import head_denoiser
            return head_denoiser(head, cond)(z_t, t)

        a = ddim_sample(fn, s, 10, np.random.default_rng(42), (2, 4))
        b = ddim_sample(fn, s, 10, np.random.default_rng(42), (2, 4))
        np.testing.assert_array_equal(a, b)

    def test_zero_steps_rejected(self):
        s = build_schedule(100)
        with pytest.raises(ValueError):
            ddim_sample(lambda z, t: z, s, 0, np.random.default_rng(0), (1,))


class TestHead:
    def make_head(self, seed=0):
        return DiffusionHead((2, 4), cond_width=6, hidden=8, num_steps=50,
                             seed=seed)

    def test_output_shape_and_determinism(self):
        head = self.make_head()
        z_t = np.random.default_rng(1).normal(size=(2, 4))
        cond = np.random.default_rng(2).normal(size=6)
        for t in [0, 7, 49]:
            out = head.denoise(z_t, t, cond)
            assert out.data.shape == (2, 4)
        a = head.denoise(z_t, 3, cond).data
        b = head.denoise(z_t, 3, cond).data
        np.testing.assert_array_equal(a, b)

    def test_batched_matches_single(self):
        head = self.make_head()
        r = np.random.default_rng(3)
        z = r.normal(size=(5, 2, 4))
        cond = r.normal(size=(5, 6))
        batch = head.denoise(z, 11, cond).data
        for i in range(5):
            single = head.denoise(z[i], 11, cond[i]).data
            np.testing.assert_allclose(batch[i], single, atol=1e-12)

    def test_width_mismatch_rejected(self):
        from facestream.fileio import DataError
        head = self.make_head()
        with pytest.raises(DataError):
            head.denoise(np.zeros((3, 4)), 0, np.zeros(6))
        with pytest.raises(DataError):
            head.denoise(np.zeros((2, 4)), 0, np.zeros(5))

    def test_time_embedding_sinusoid_structure(self):
        head = self.make_head()
        from facestream.nn import sinusoid_table
        base0 = sinusoid_table(np.array([0.0]), 6)
        np.testing.assert_allclose(base0[0, 0::2], 0.0)  # sin parts
        np.testing.assert_allclose(base0[0, 1::2], 1.0)  # cos parts
        # injectivity for small t
        seen = {tuple(sinusoid_table(np.array([float(t)]), 6)[0]) for t in range(50)}
        assert len(seen) == 50
