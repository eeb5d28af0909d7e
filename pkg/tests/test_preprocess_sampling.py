"""Preprocessing exactness and sampler statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volseg.data.phantom import default_spec, generate_phantom
from volseg.data.volume import NUM_CLASSES, LabelVolume, Volume
from volseg.errors import DimensionError, UsageError
from volseg.preprocess import (
    PreprocessConfig,
    normalize,
    preprocess_case,
    reorient,
    resample_label,
    resample_volume,
    target_extent,
)
from volseg.sampling import AugmentConfig, PatchSampler, SamplerConfig, augment


class TestReorient:
    def test_lps_to_ras_flips_first_two_axes(self, rng):
        data = rng.standard_normal((4, 5, 6)).astype(np.float32)
        vol = Volume(data, (1, 2, 3), "LPS")
        out = reorient(vol, "RAS")
        np.testing.assert_array_equal(out.data, data[::-1, ::-1, :])
        assert out.spacing == (1.0, 2.0, 3.0)
        assert out.orientation == "RAS"

    def test_roundtrip_is_bit_identical(self, rng):
        data = rng.standard_normal((4, 5, 6)).astype(np.float32)
        vol = Volume(data, (1, 2, 3), "LPS")
        back = reorient(reorient(vol, "RAS"), "LPS")
        np.testing.assert_array_equal(back.data, data)
        assert back.spacing == vol.spacing

    def test_permuting_code_moves_axes_and_spacing(self, rng):
        data = rng.standard_normal((4, 5, 6)).astype(np.float32)
        vol = Volume(data, (1.0, 2.0, 3.0), "RAS")
        out = reorient(vol, "ASR")
        # new axis order: world (A, S, R) = old axes (1, 2, 0)
        np.testing.assert_array_equal(out.data, data.transpose(1, 2, 0))
        assert out.spacing == (2.0, 3.0, 1.0)

    @given(st.sampled_from(["RAS", "LPS", "LPI", "SAR", "PIL", "ASL"]))
    @settings(max_examples=20, deadline=None)
    def test_any_roundtrip_restores(self, code):
        rng = np.random.default_rng(42)
        data = rng.standard_normal((3, 4, 5)).astype(np.float32)
        vol = Volume(data, (1.1, 2.2, 3.3), "RAS")
        back = reorient(reorient(vol, code), "RAS")
        np.testing.assert_array_equal(back.data, data)
        assert back.spacing == vol.spacing

    def test_label_reorient_preserves_classes(self, rng):
        lab = LabelVolume(rng.integers(0, 6, (4, 4, 4)), (1, 1, 1), "LPS")
        out = reorient(lab, "RAS")
        assert isinstance(out, LabelVolume)
        assert set(np.unique(out.data)) == set(np.unique(lab.data))


class TestResample:
    def test_extent_rule_round_half_up(self):
        assert target_extent(64, 2.0, 1.0) == 128
        assert target_extent(10, 1.0, 3.0) == 3  # 3.33 rounds down
        assert target_extent(10, 1.0, 4.0) == 3  # 2.5 rounds up
        assert target_extent(96, 1.0, 1.0) == 96

    def test_identity_spacing_is_bitwise_noop(self, rng):
        vol = Volume(rng.standard_normal((5, 6, 7)).astype(np.float32), (1, 1, 1))
        out = resample_volume(vol, (1, 1, 1))
        np.testing.assert_array_equal(out.data, vol.data)

    def test_constant_field_exact(self):
        vol = Volume(np.full((9, 10, 11), 0.73, dtype=np.float32), (2.0, 1.5, 1.0))
        out = resample_volume(vol, (1.0, 1.0, 1.0))
        assert out.extent == (18, 15, 11)
        assert np.all(out.data == np.float32(0.73))

    def test_linear_ramp_within_tolerance(self):
        # physical-coordinate ramp along axis 0: value = x_mm
        n, sp = 64, 2.0
        ramp = ((np.arange(n) + 0.5) * sp).astype(np.float32)
        data = np.broadcast_to(ramp[:, None, None], (n, 4, 4)).copy()
        vol = Volume(data, (sp, 1.0, 1.0))
        out = resample_volume(vol, (1.0, 1.0, 1.0))
        assert out.extent == (128, 4, 4)
        want = (np.arange(128) + 0.5) * 1.0
        # interior samples interpolate the ramp exactly; edges clamp
        np.testing.assert_allclose(out.data[1:-1, 0, 0], want[1:-1], atol=1e-5)
        assert out.data[0, 0, 0] == np.float32(ramp[0])
        assert out.data[-1, 0, 0] == np.float32(ramp[-1])

    def test_downsample_extent_and_range(self, rng):
        vol = Volume(rng.uniform(0, 1, (64, 64, 64)).astype(np.float32), (1, 1, 1))
        out = resample_volume(vol, (2, 2, 2))
        assert out.extent == (32, 32, 32)
        assert out.data.min() >= vol.data.min() - 1e-6
        assert out.data.max() <= vol.data.max() + 1e-6

    def test_label_nearest_preserves_class_set(self, rng):
        lab = LabelVolume(rng.integers(0, 6, (16, 16, 16)), (2, 2, 2))
        out = resample_label(lab, (1, 1, 1))
        assert out.extent == (32, 32, 32)
        assert set(np.unique(out.data)) <= set(np.unique(lab.data))
        # upsampling by exactly 2 must not lose any class
        assert set(np.unique(out.data)) == set(np.unique(lab.data))

    def test_label_never_interpolates(self):
        lab = LabelVolume(np.array([[[0, 5]]], dtype=np.uint8), (1, 1, 4.0))
        out = resample_label(lab, (1, 1, 1))
        assert set(np.unique(out.data)) <= {0, 5}


class TestNormalize:
    def test_window_endpoints_and_midpoint(self):
        vol = Volume(
            np.array([[[-150.0, 250.0, 50.0, -999.0, 999.0]]], dtype=np.float32), (1, 1, 1)
        )
        out = normalize(vol, (-150.0, 250.0))
        np.testing.assert_array_equal(
            out.data, np.array([[[0.0, 1.0, 0.5, 0.0, 1.0]]], dtype=np.float32)
        )

    def test_output_range_clamped(self, rng):
        vol = Volume((rng.standard_normal((8, 8, 8)) * 500).astype(np.float32), (1, 1, 1))
        out = normalize(vol)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_monotone_inside_window(self, rng):
        vals = np.sort(rng.uniform(-150, 250, 100)).astype(np.float32)
        vol = Volume(vals.reshape(4, 5, 5), (1, 1, 1))
        out = normalize(vol)
        assert np.all(np.diff(out.data.reshape(-1)) >= 0)

    def test_invalid_window_rejected(self):
        vol = Volume(np.zeros((2, 2, 2), dtype=np.float32), (1, 1, 1))
        with pytest.raises(UsageError):
            normalize(vol, (250.0, -150.0))


class TestPreprocessCase:
    def test_full_pipeline_geometry(self):
        spec = default_spec(extent=(32, 32, 32), spacing=(2.0, 2.0, 2.0), noise_sigma=0.0)
        img, lab = generate_phantom(spec, 0)
        img = Volume(img.data, img.spacing, "LPS")
        lab = LabelVolume(lab.data, lab.spacing, "LPS")
        out_img, out_lab = preprocess_case(img, lab, PreprocessConfig())
        assert out_img.extent == (64, 64, 64)
        assert out_lab.extent == (64, 64, 64)
        assert out_img.orientation == "RAS" and out_lab.orientation == "RAS"
        assert out_img.spacing == (1.0, 1.0, 1.0)
        assert 0.0 <= out_img.data.min() and out_img.data.max() <= 1.0

    def test_mismatched_pair_rejected(self, rng):
        img = Volume(rng.standard_normal((4, 4, 4)).astype(np.float32), (1, 1, 1))
        lab = LabelVolume(np.zeros((5, 4, 4), dtype=np.uint8), (1, 1, 1))
        with pytest.raises(DimensionError):
            preprocess_case(img, lab)


def small_case(noise=0.0):
    spec = default_spec(extent=(48, 48, 48), spacing=(1, 1, 1), noise_sigma=noise)
    img, lab = generate_phantom(spec, 0)
    return normalize(img), lab


class TestPatchSampler:
    def test_patch_shape_and_center_class(self):
        img, lab = small_case()
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(16, 16, 16)))
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = sampler.sample(rng)
            assert p.image.shape == (16, 16, 16)
            assert p.label.shape == (16, 16, 16)
            assert lab.data[p.center] == p.center_class

    def test_interior_choice_sits_at_window_center(self):
        img, lab = small_case()
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(8, 8, 8)))
        rng = np.random.default_rng(1)
        hits = 0
        for _ in range(100):
            p = sampler.sample(rng)
            if all(4 <= c <= 48 - 4 - 1 for c in p.center):
                assert p.label[4, 4, 4] == p.center_class
                hits += 1
        assert hits > 50

    def test_absent_classes_excluded_and_renormalised(self):
        img = Volume(np.zeros((8, 8, 8), dtype=np.float32), (1, 1, 1))
        data = np.zeros((8, 8, 8), dtype=np.uint8)
        data[:4] = 1  # only background and liver present
        lab = LabelVolume(data, (1, 1, 1))
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(4, 4, 4)))
        probs = sampler.class_probabilities
        np.testing.assert_allclose(probs, [0.5, 0.5, 0, 0, 0, 0])
        rng = np.random.default_rng(2)
        assert {sampler.sample(rng).center_class for _ in range(40)} == {0, 1}

    def test_empirical_frequencies_match_ratios(self):
        img, lab = small_case()
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(16, 16, 16)))
        rng = np.random.default_rng(3)
        counts = np.zeros(NUM_CLASSES)
        n = 4000
        for _ in range(n):
            counts[sampler.sample(rng).center_class] += 1
        freq = counts / n
        want = np.array([1, 1, 2, 2, 2, 1]) / 9.0
        assert np.abs(freq - want).max() < 0.05

    def test_small_volume_padded_to_patch(self):
        img = Volume(np.ones((5, 5, 5), dtype=np.float32), (1, 1, 1))
        lab = LabelVolume(np.ones((5, 5, 5), dtype=np.uint8), (1, 1, 1))
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(8, 8, 8)))
        p = sampler.sample(np.random.default_rng(0))
        assert p.image.shape == (8, 8, 8)
        assert np.all(p.image[:5, :5, :5] == 1.0)
        assert np.all(p.image[5:] == 0.0)

    def test_deterministic_given_rng_seed(self):
        img, lab = small_case()
        sampler = PatchSampler(img, lab, SamplerConfig(patch=(12, 12, 12)))
        a = [sampler.sample(np.random.default_rng(7)).center for _ in range(1)][0]
        b = [sampler.sample(np.random.default_rng(7)).center for _ in range(1)][0]
        assert a == b

    def test_all_zero_effective_ratios_rejected(self):
        img = Volume(np.zeros((4, 4, 4), dtype=np.float32), (1, 1, 1))
        lab = LabelVolume(np.zeros((4, 4, 4), dtype=np.uint8), (1, 1, 1))
        with pytest.raises(UsageError):
            PatchSampler(img, lab, SamplerConfig(patch=(2, 2, 2), ratios=(0, 1, 1, 1, 1, 1)))


class TestAugment:
    def test_geometry_applies_to_both(self):
        rng_master = np.random.default_rng(5)
        img = rng_master.standard_normal((8, 8, 8)).astype(np.float32)
        lab = (img > 0).astype(np.uint8)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            ai, al = augment(img, lab, rng, AugmentConfig(scale_range=(1, 1), shift_range=(0, 0)))
            np.testing.assert_array_equal(al, (ai > 0).astype(np.uint8))

    def test_intensity_touches_image_only(self):
        img = np.ones((4, 4, 4), dtype=np.float32)
        lab = np.full((4, 4, 4), 3, dtype=np.uint8)
        rng = np.random.default_rng(0)
        ai, al = augment(img, lab, rng, AugmentConfig(flip_prob=0.0, rot_prob=0.0))
        np.testing.assert_array_equal(al, lab)
        assert ai.std() < 1e-6  # constant image stays constant under affine

    def test_label_values_never_change(self, rng):
        img = rng.standard_normal((6, 6, 6)).astype(np.float32)
        lab = rng.integers(0, 6, (6, 6, 6)).astype(np.uint8)
        for seed in range(10):
            _, al = augment(img, lab, np.random.default_rng(seed))
            assert np.bincount(al.reshape(-1), minlength=6).tolist() == np.bincount(
                lab.reshape(-1), minlength=6
            ).tolist()

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_flip_only_config_is_involution_safe(self, seed):
        # flips and rot90 are exact; applying augment must keep shapes
        rng = np.random.default_rng(seed)
        img = np.random.default_rng(1).standard_normal((6, 6, 6)).astype(np.float32)
        lab = np.zeros((6, 6, 6), dtype=np.uint8)
        ai, al = augment(img, lab, rng)
        assert ai.shape == img.shape and al.shape == lab.shape
