import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentmark import percept as pc
from latentmark.errors import DimensionError, ParameterError


class TestMsePsnr:
    def test_identical(self, rng):
        a = rng.uniform(0, 255, (16, 16, 3))
        assert pc.mse(a, a) == 0.0
        assert pc.psnr(a, a) == math.inf

    def test_uniform_difference(self):
        a = np.full((8, 8, 3), 100.0)
        assert pc.mse(a, a + 7.0) == pytest.approx(49.0)
        assert pc.mse(np.zeros((4, 4, 1)), np.full((4, 4, 1), 255.0)) == pytest.approx(255.0 ** 2)

    def test_uniform_psnr_values(self):
        a = np.full((8, 8, 3), 0.0)
        assert pc.psnr(a, a + 255.0) == pytest.approx(0.0, abs=1e-12)
        assert pc.psnr(a, a + 25.5) == pytest.approx(20.0, abs=1e-12)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 255, (8, 8, 3))
        b = rng.uniform(0, 255, (8, 8, 3))
        assert pc.psnr(a, b) == pc.psnr(b, a)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            pc.mse(rng.uniform(0, 1, (4, 4, 3)), rng.uniform(0, 1, (4, 5, 3)))


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        a = rng.uniform(0, 255, (16, 16, 3))
        np.testing.assert_allclose(pc.ssim_map(a, a), 1.0, atol=1e-12)

    def test_noise_strictly_below_one(self, rng):
        a = rng.uniform(20, 230, (16, 16, 3))
        b = a + rng.standard_normal(a.shape)
        assert pc.ssim_map(a, b).mean() < 1.0

    def test_constant_offset_closed_form(self):
        mu1, k = 100.0, 5.0
        c1 = (0.01 * 255.0) ** 2
        m = pc.ssim_map(np.full((16, 16, 3), mu1), np.full((16, 16, 3), mu1 + k))
        expect = (2 * mu1 * (mu1 + k) + c1) / (mu1 ** 2 + (mu1 + k) ** 2 + c1)
        np.testing.assert_allclose(m, expect, atol=1e-12)

    def test_window_size_requirement(self, rng):
        with pytest.raises(ParameterError):
            pc.ssim_map(rng.uniform(0, 1, (8, 8, 3)), rng.uniform(0, 1, (8, 8, 3)))

    def test_against_scikit_image_oracle(self, rng):
        ssim_ref = pytest.importorskip("skimage.metrics").structural_similarity
        a = rng.uniform(0, 255, (32, 32, 3))
        b = np.clip(a + 4.0 * rng.standard_normal(a.shape), 0, 255)
        mine = pc.ssim_map(a, b).mean()
        ref = ssim_ref(a, b, channel_axis=2, data_range=255.0,
                       gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        assert mine == pytest.approx(ref, abs=2e-2)  # border handling differs


class TestAttenuation:
    def test_flat_image_floor_map(self):
        att = pc.attenuation_map(np.full((16, 16, 3), 50.0))
        assert np.all(att == pc.ATTENUATION_FLOOR)

    def test_textured_half_weighs_more(self, rng):
        img = np.full((32, 32, 3), 120.0)
        img[:, 16:] += rng.standard_normal((32, 16, 3)) * 20.0
        att = pc.attenuation_map(img)
        assert att[:, 20:28].mean() > att[:, 4:12].mean()

    def test_range(self, rng):
        att = pc.attenuation_map(rng.uniform(0, 255, (16, 16, 3)))
        assert att.min() >= 0.1 and att.max() <= 1.0

    def test_preserves_sign_pattern(self, rng):
        ref = rng.uniform(0, 255, (16, 16, 3))
        delta = rng.standard_normal(ref.shape)
        weighted = delta * pc.attenuation_map(ref)[:, :, None]
        assert np.array_equal(np.sign(weighted), np.sign(delta))


class TestProjection:
    def test_cap_leaves_weak_distortion(self, rng):
        ref = rng.uniform(10, 245, (16, 16, 3))
        x = ref + 0.05 * rng.standard_normal(ref.shape)
        spec = pc.ConstraintSpec(35.0, "cap", attenuation=False)
        out = pc.project_constraints(x, ref, spec)
        np.testing.assert_allclose(out, np.clip(x, 0, 255), atol=1e-12)

    def test_cap_scales_strong_distortion_to_target(self, rng):
        ref = rng.uniform(10, 245, (16, 16, 3))
        x = ref + 30.0 * rng.standard_normal(ref.shape)
        spec = pc.ConstraintSpec(35.0, "cap", attenuation=False)
        out = pc.project_constraints(x, ref, spec)
        assert pc.psnr(ref, out) >= 35.0 - 1e-9

    def test_exact_hits_target_both_directions(self, rng):
        ref = rng.uniform(30, 225, (16, 16, 3))
        spec = pc.ConstraintSpec(42.0, "exact", attenuation=False)
        for scale in (0.05, 30.0):  # too weak and too strong
            x = ref + scale * rng.standard_normal(ref.shape)
            out = pc.project_constraints(x, ref, spec)
            assert abs(pc.psnr(ref, out) - 42.0) <= 0.01

    def test_exact_tolerance_over_seeded_cases(self):
        spec = pc.ConstraintSpec(38.0, "exact", attenuation=True)
        for seed in range(100):
            r = np.random.default_rng(seed)
            ref = r.uniform(0, 255, (16, 16, 3))
            x = ref + r.uniform(0.5, 20.0) * r.standard_normal(ref.shape)
            out = pc.project_constraints(x, ref, spec)
            assert abs(pc.psnr(ref, out) - 38.0) <= 0.01

    def test_cap_never_decreases_psnr(self):
        spec = pc.ConstraintSpec(40.0, "cap", attenuation=True)
        for seed in range(50):
            r = np.random.default_rng(seed)
            ref = r.uniform(0, 255, (16, 16, 3))
            x = ref + r.uniform(0.2, 25.0) * r.standard_normal(ref.shape)
            out = pc.project_constraints(x, ref, spec)
            assert pc.psnr(ref, out) >= min(pc.psnr(ref, np.clip(x, 0, 255)), 40.0) - 1e-9

    def test_zero_delta_returns_ref(self, rng):
        ref = rng.uniform(0, 255, (16, 16, 3))
        out = pc.project_constraints(ref.copy(), ref, pc.ConstraintSpec(42.0, "exact"))
        np.testing.assert_array_equal(out, ref)

    def test_attenuated_direction_preserved_on_constant_ref(self, rng):
        # constant ref gives the uniform floor map: direction survives scaling
        ref = np.full((16, 16, 3), 128.0)
        delta = rng.standard_normal(ref.shape)
        out = pc.project_constraints(ref + delta, ref, pc.ConstraintSpec(42.0, "exact", True))
        d = out - ref
        ratios = d[np.abs(delta) > 1e-9] / delta[np.abs(delta) > 1e-9]
        assert ratios.std() / abs(ratios.mean()) < 1e-9

    def test_mode_validation(self):
        with pytest.raises(ParameterError):
            pc.ConstraintSpec(42.0, "squeeze")
        with pytest.raises(ParameterError):
            pc.ConstraintSpec(75.0, "cap")


class TestQuantize:
    def test_half_rounds_away_from_zero(self):
        assert pc.quantize(np.array([[[127.5]]]))[0, 0, 0] == 128.0
        assert pc.quantize(np.array([[[-0.5]]]))[0, 0, 0] == 0.0  # away then clamp

    @given(st.lists(st.floats(-10, 265), min_size=1, max_size=32))
    @settings(max_examples=60, deadline=None)
    def test_idempotent_and_close(self, values):
        x = np.asarray(values).reshape(1, -1, 1)
        q = pc.quantize(x)
        np.testing.assert_array_equal(pc.quantize(q), q)
        inside = (np.asarray(values) >= 0) & (np.asarray(values) <= 255)
        assert np.all(np.abs(x - q).ravel()[inside] <= 0.5)


class TestWiener:
    def test_constant_exact_identity(self):
        x = np.full((32, 32, 3), 77.0)
        np.testing.assert_array_equal(pc.wiener_denoise(x, 25), x)

    def test_white_noise_variance_drops(self, rng):
        x = 128.0 + 25.0 * rng.standard_normal((64, 64, 3))
        assert pc.wiener_denoise(x, 7).var() < x.var()

    def test_window_25_on_texture(self, desk_corpus):
        _, images = desk_corpus
        den = pc.wiener_denoise(images[0], 25)
        p = pc.psnr(images[0], den)
        assert math.isfinite(p) and p > 20.0

    def test_even_window_rejected(self, rng):
        with pytest.raises(ParameterError):
            pc.wiener_denoise(rng.uniform(0, 255, (16, 16, 3)), 4)
