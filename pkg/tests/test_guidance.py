import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cdk.denoisers.gmm import GmmDenoiser, GmmSpec
from cdk.diffusion import forward_marginal, posterior_params
from cdk.errors import DomainError, NonFiniteError, OrderingError, ShapeError
from cdk.guidance import (
    GuidanceConfig,
    SamplerConfig,
    ancestral_noise_var,
    ancestral_step,
    apply_cond_aug,
    cfg_combine,
    ddim_step,
    dynamic_threshold,
    sample,
    static_threshold,
)
from cdk.rng import RngStream
from cdk.schedules import COSINE, LINEAR, level_at, transition_var

vals = st.floats(-50, 50, allow_nan=False, width=32)
batches = hnp.arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 12)), elements=vals)


class TestConfigs:
    def test_defaults(self):
        assert GuidanceConfig().w == 1.0 and SamplerConfig().kind == "ddim"

    @pytest.mark.parametrize("kw", [dict(w=-1.0), dict(w=math.inf), dict(threshold="soft"), dict(p=0.0), dict(p=101.0)])
    def test_guidance_rejects(self, kw):
        with pytest.raises((DomainError, ValueError)):
            GuidanceConfig(**kw)

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(gamma=1.5), dict(kind="euler")])
    def test_sampler_rejects(self, kw):
        with pytest.raises((DomainError, ValueError)):
            SamplerConfig(**kw)


class TestCfgCombine:
    def setup_method(self):
        self.c = RngStream(1).normal(10, np.float32)
        self.u = RngStream(2).normal(10, np.float32)

    def test_w_one_is_conditional(self):
        assert np.array_equal(cfg_combine(self.c, self.u, 1.0), self.c)

    def test_w_zero_is_unconditional(self):
        assert np.array_equal(cfg_combine(self.c, self.u, 0.0), self.u)

    @given(st.floats(0, 20))
    def test_equal_inputs(self, w):
        assert np.allclose(cfg_combine(self.c, self.c, w), self.c, atol=1e-5 * (1 + w))

    @given(st.floats(0, 20))
    def test_affine_symmetry(self, w):
        total = cfg_combine(self.c, self.u, w) + cfg_combine(self.u, self.c, w)
        assert np.allclose(total, self.c + self.u, atol=1e-4 * (1 + w))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            cfg_combine(self.c, self.u[:5], 2.0)


class TestStaticThreshold:
    def test_clamp_values(self):
        assert static_threshold(np.array([2.0, -3.5, 0.25])).tolist() == [1.0, -1.0, 0.25]

    def test_identity_in_range(self):
        x = RngStream(3).uniform(20) * 2 - 1
        assert np.array_equal(static_threshold(x), x)

    @given(batches)
    def test_idempotent_and_bounded(self, x):
        once = static_threshold(x)
        assert np.array_equal(static_threshold(once), once)
        assert np.all(np.abs(once) <= 1)

    def test_preserves_order_in_range(self):
        x = RngStream(4).uniform(50) * 2 - 1
        assert np.array_equal(np.argsort(static_threshold(x)), np.argsort(x))


class TestDynamicThreshold:
    def test_hand_example(self):
        assert dynamic_threshold(np.array([0.0, 2.0]), 100).tolist() == [0.0, 1.0]

    def test_identity_in_range_at_p100(self):
        x = (RngStream(5).uniform((3, 16)) * 2 - 1).astype(np.float32)
        assert np.array_equal(dynamic_threshold(x, 100), x)

    def test_per_sample_scale(self):
        x = np.array([[0.5, -4.0], [0.5, 0.25]], np.float32)
        out = dynamic_threshold(x, 100)
        assert out[0].tolist() == [0.125, -1.0]
        assert out[1].tolist() == [0.5, 0.25]

    def test_linear_interpolation_percentile(self):
        # |x| sorted = 0..4; the 50th percentile is 2, 62.5th is 2.5
        x = np.array([[0.0, -1.0, 2.0, -3.0, 4.0]])
        assert dynamic_threshold(x, 62.5)[0, -1] == pytest.approx(1.0)
        assert dynamic_threshold(x, 62.5)[0, 2] == pytest.approx(2.0 / 2.5)

    @settings(max_examples=200)
    @given(batches, st.floats(0.1, 100))
    def test_bounded_and_idempotent(self, x, p):
        out = dynamic_threshold(x, p)
        assert np.all(np.abs(out) <= 1.0 + 1e-6)
        assert np.allclose(dynamic_threshold(out, p), out, atol=1e-6)

    def test_rejects_bad_percentile(self):
        with pytest.raises(DomainError):
            dynamic_threshold(np.zeros(3), 0.0)


class TestDdimStep:
    def test_exact_x_carries_eps(self):
        x = RngStream(6).normal(32, np.float32)
        eps = RngStream(7).normal(32, np.float32)
        lt = level_at(COSINE, 0.7)
        z_t = forward_marginal(x, lt, eps)
        z_s = ddim_step(z_t, x, 0.3, 0.7, COSINE)
        assert np.allclose(z_s, forward_marginal(x, level_at(COSINE, 0.3), eps), atol=1e-6)

    def test_degenerate_step(self):
        z = RngStream(6).normal(8, np.float32)
        x = RngStream(7).normal(8, np.float32)
        assert np.allclose(ddim_step(z, x, 0.5 - 1e-12, 0.5, COSINE), z, atol=1e-6)

    def test_ordering(self):
        with pytest.raises(OrderingError):
            ddim_step(np.zeros(2), np.zeros(2), 0.5, 0.5, COSINE)


class TestAncestralStep:
    def test_gamma_zero_no_noise_is_posterior_mean(self):
        z = RngStream(8).normal(8, np.float32)
        x = RngStream(9).normal(8, np.float32)
        mu, _ = posterior_params(z, x, 0.4, 0.6, COSINE)
        out = ancestral_step(z, x, 0.4, 0.6, 0.0, COSINE, np.zeros(8, np.float32))
        assert np.array_equal(out, mu)

    def test_noise_interpolates_geometrically(self):
        s, t = 0.2, 0.5
        ls, lt = level_at(LINEAR, s), level_at(LINEAR, t)
        r = math.exp(lt.lam - ls.lam)
        post = (1 - r) * ls.sigma**2
        fwd = (1 - r) * lt.sigma**2
        assert ancestral_noise_var(s, t, 0.0, LINEAR) == pytest.approx(post, rel=1e-10)
        assert ancestral_noise_var(s, t, 1.0, LINEAR) == pytest.approx(fwd, rel=1e-10)
        assert ancestral_noise_var(s, t, 0.5, LINEAR) == pytest.approx(math.sqrt(post * fwd), rel=1e-10)
        assert fwd == pytest.approx(transition_var(LINEAR, s, t), rel=1e-10)

    def test_degenerate_step(self):
        z = RngStream(8).normal(8, np.float32)
        x = RngStream(9).normal(8, np.float32)
        e = RngStream(10).normal(8, np.float32)
        assert np.allclose(ancestral_step(z, x, 0.5 - 1e-12, 0.5, 1.0, COSINE, e), z, atol=1e-5)


def standard_gaussian(d=2):
    return GmmSpec(weights=[1.0], means=[[0.0] * d], covs=[[1.0] * d])


class TestSample:
    def test_standard_gaussian_moments(self):
        out = sample(GmmDenoiser(standard_gaussian()), None, COSINE, SamplerConfig("ddim", 128),
                     GuidanceConfig(), RngStream(11), (4000, 2))
        # 4000 chains: mean s.e. ~0.016, variance s.e. ~0.022
        assert np.allclose(out.mean(axis=0), 0.0, atol=0.07)
        assert np.allclose(np.cov(out.T), np.eye(2), atol=0.1)

    def test_ancestral_matches_target(self):
        gmm = GmmSpec(weights=[1.0], means=[[0.5, -0.5]], covs=[[0.25, 0.25]])
        out = sample(GmmDenoiser(gmm), None, COSINE, SamplerConfig("ancestral", 128, gamma=0.5),
                     GuidanceConfig(), RngStream(12), (4000, 2))
        assert np.allclose(out.mean(axis=0), [0.5, -0.5], atol=0.05)
        assert np.allclose(np.cov(out.T), 0.25 * np.eye(2), atol=0.05)

    @pytest.mark.parametrize("threshold", ["static", "dynamic"])
    def test_thresholded_output_in_range(self, threshold):
        gmm = GmmSpec(weights=[0.5, 0.5], means=[[3.0, 0.0], [-3.0, 0.0]], covs=[[1.0, 1.0], [1.0, 1.0]])
        out = sample(GmmDenoiser(gmm), np.zeros(64, int), COSINE, SamplerConfig("ddim", 16),
                     GuidanceConfig(4.0, threshold), RngStream(13), (64, 2))
        assert np.all(np.isfinite(out)) and np.all(np.abs(out) <= 1.0)

    def test_deterministic(self):
        args = (GmmDenoiser(standard_gaussian()), None, COSINE, SamplerConfig("ancestral", 8, 0.3),
                GuidanceConfig())
        a = sample(*args, RngStream(14), (16, 2))
        b = sample(*args, RngStream(14), (16, 2))
        assert a.tobytes() == b.tobytes()

    def test_guidance_uses_null_branch(self):
        calls = []

        def denoiser(z, level, cond):
            calls.append(cond)
            return np.zeros_like(z)

        sample(denoiser, np.array([1, 1]), COSINE, SamplerConfig("ddim", 3), GuidanceConfig(2.0),
               RngStream(0), (2, 2))
        assert len(calls) == 6
        assert sum(int(np.all(c == -1)) for c in calls) == 3

    def test_non_finite_names_step(self):
        def bad(z, level, cond):
            return np.full_like(z, np.nan) if level.t < 0.6 else np.zeros_like(z)

        with pytest.raises(NonFiniteError) as info:
            sample(bad, None, COSINE, SamplerConfig("ddim", 4), GuidanceConfig(), RngStream(0), (2, 2))
        assert info.value.step == 2


class TestCondAug:
    def test_zero_aug_is_near_identity(self):
        x = RngStream(15).normal((2, 3, 4, 4), np.float32)
        out = apply_cond_aug(x, 0.0, COSINE, RngStream(16))
        assert np.allclose(out, x, atol=0.02)

    def test_full_aug_is_noise(self):
        x = RngStream(15).normal(100_000, np.float32)
        out = apply_cond_aug(x, 1.0, COSINE, RngStream(17))
        assert abs(np.corrcoef(x, out)[0, 1]) < 0.01
        assert out.std() == pytest.approx(1.0, abs=0.01)

    def test_per_example_levels(self):
        x = np.ones((2, 1, 2, 2), np.float32)
        out = apply_cond_aug(x, np.array([0.0, 1.0]), COSINE, RngStream(18))
        assert np.allclose(out[0], 1.0, atol=0.02) and not np.allclose(out[1], 1.0, atol=0.1)

    def test_aug_changes_output(self):
        x = RngStream(15).normal(64, np.float32)
        a = apply_cond_aug(x, 0.1, COSINE, RngStream(19))
        b = apply_cond_aug(x, 0.3, COSINE, RngStream(19))
        assert not np.allclose(a, b)

    @pytest.mark.parametrize("aug", [-0.1, 1.1])
    def test_domain(self, aug):
        with pytest.raises(DomainError):
            apply_cond_aug(np.zeros(3, np.float32), aug, COSINE, RngStream(0))
