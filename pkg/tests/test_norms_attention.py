"""Normalisation and attention kernels against reference implementations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volseg.core.attention import (
    attention,
    relative_position_index,
    shifted_window_mask,
    window_partition,
    window_reverse,
)
from volseg.core.gradcheck import grad_check
from volseg.core.norms import batch_norm, group_norm, instance_norm, layer_norm
from volseg.core.tensor import MASK_FILL, Tensor, roll
from volseg.errors import DimensionError

from oracles import attention_loops, group_norm_ref, layer_norm_ref


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


class TestGroupNorm:
    @pytest.mark.parametrize("groups", [1, 2, 4, 8])
    def test_matches_reference(self, rng, groups):
        x = rng.standard_normal((2, 8, 3, 4, 2))
        w = rng.standard_normal(8)
        b = rng.standard_normal(8)
        got = group_norm(t64(x), groups, t64(w), t64(b)).data
        np.testing.assert_allclose(got, group_norm_ref(x, groups, w, b), rtol=1e-9, atol=1e-9)

    def test_normalised_moments(self, rng):
        x = rng.standard_normal((2, 8, 4, 4, 4)) * 3.0 + 1.5
        ones, zeros = np.ones(8), np.zeros(8)
        out = group_norm(t64(x), 4, t64(ones), t64(zeros)).data
        per_set = out.reshape(2, 4, -1)
        np.testing.assert_allclose(per_set.mean(-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(per_set.std(-1), 1.0, atol=1e-4)

    def test_indivisible_groups_raise(self, rng):
        x = t64(rng.standard_normal((1, 6, 2, 2, 2)))
        with pytest.raises(DimensionError):
            group_norm(x, 4, t64(np.ones(6)), t64(np.zeros(6)))

    def test_gradients(self, rng):
        x = t64(rng.standard_normal((2, 4, 3, 2, 2)))
        w = t64(rng.uniform(0.5, 1.5, 4))
        b = t64(rng.standard_normal(4) * 0.1)
        tgt = rng.standard_normal((2, 4, 3, 2, 2))

        assert grad_check(lambda t: ((group_norm(t, 2, w, b) - tgt) ** 2.0).mean(), x, tol=1e-5, floor=1e-5).passed
        assert grad_check(lambda t: ((group_norm(x, 2, t, b) - tgt) ** 2.0).mean(), w, tol=1e-5, floor=1e-5).passed
        assert grad_check(lambda t: ((group_norm(x, 2, w, t) - tgt) ** 2.0).mean(), b, tol=1e-5, floor=1e-5).passed

    def test_instance_norm_is_per_channel_group_norm(self, rng):
        x = rng.standard_normal((2, 5, 3, 3, 3))
        w, b = rng.standard_normal(5), rng.standard_normal(5)
        got = instance_norm(t64(x), t64(w), t64(b)).data
        want = group_norm(t64(x), 5, t64(w), t64(b)).data
        np.testing.assert_array_equal(got, want)


class TestLayerNorm:
    def test_matches_reference(self, rng):
        x = rng.standard_normal((2, 7, 12))
        w = rng.standard_normal(12)
        b = rng.standard_normal(12)
        got = layer_norm(t64(x), t64(w), t64(b)).data
        np.testing.assert_allclose(got, layer_norm_ref(x, w, b), rtol=1e-9, atol=1e-9)

    def test_gradients(self, rng):
        x = t64(rng.standard_normal((3, 5, 6)))
        w = t64(rng.uniform(0.5, 1.5, 6))
        b = t64(rng.standard_normal(6) * 0.1)
        tgt = rng.standard_normal((3, 5, 6))

        assert grad_check(lambda t: ((layer_norm(t, w, b) - tgt) ** 2.0).mean(), x, tol=1e-5, floor=1e-5).passed
        assert grad_check(lambda t: ((layer_norm(x, t, b) - tgt) ** 2.0).mean(), w, tol=1e-5, floor=1e-5).passed


class TestBatchNorm:
    def _affine(self, c):
        return t64(np.ones(c)), t64(np.zeros(c))

    def test_train_mode_normalises_batch(self, rng):
        x = rng.standard_normal((4, 3, 5, 5, 5)) * 2.0 + 1.0
        w, b = self._affine(3)
        rm, rv = np.zeros(3), np.ones(3)
        out = batch_norm(t64(x), w, b, rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-4)

    def test_running_stats_update(self, rng):
        x = rng.standard_normal((4, 3, 4, 4, 4)) + 2.0
        w, b = self._affine(3)
        rm, rv = np.zeros(3), np.ones(3)
        batch_norm(t64(x), w, b, rm, rv, training=True, momentum=0.1)
        m = x.size // 3
        want_mean = 0.1 * x.mean(axis=(0, 2, 3, 4))
        want_var = 0.9 + 0.1 * x.var(axis=(0, 2, 3, 4)) * m / (m - 1)
        np.testing.assert_allclose(rm, want_mean, rtol=1e-9)
        np.testing.assert_allclose(rv, want_var, rtol=1e-9)

    def test_eval_uses_running_stats_only(self, rng):
        x = rng.standard_normal((2, 3, 4, 4, 4))
        w, b = self._affine(3)
        rm = np.array([1.0, -1.0, 0.5])
        rv = np.array([4.0, 1.0, 2.25])
        rm0, rv0 = rm.copy(), rv.copy()
        out = batch_norm(t64(x), w, b, rm, rv, training=False).data
        want = (x - rm0.reshape(1, 3, 1, 1, 1)) / np.sqrt(rv0.reshape(1, 3, 1, 1, 1) + 1e-5)
        np.testing.assert_allclose(out, want, rtol=1e-9)
        np.testing.assert_array_equal(rm, rm0)
        np.testing.assert_array_equal(rv, rv0)

    def test_gradients_both_modes(self, rng):
        x = t64(rng.standard_normal((3, 2, 3, 3, 3)))
        w = t64(rng.uniform(0.5, 1.5, 2))
        b = t64(rng.standard_normal(2) * 0.1)
        tgt = rng.standard_normal((3, 2, 3, 3, 3))

        def train_loss(t):
            rm, rv = np.zeros(2), np.ones(2)
            return ((batch_norm(t, w, b, rm, rv, training=True) - tgt) ** 2.0).mean()

        rm_e, rv_e = np.array([0.3, -0.2]), np.array([1.5, 0.8])

        def eval_loss(t):
            return ((batch_norm(t, w, b, rm_e, rv_e, training=False) - tgt) ** 2.0).mean()

        assert grad_check(train_loss, x, tol=1e-5, floor=1e-5).passed
        assert grad_check(eval_loss, x, tol=1e-5, floor=1e-5).passed
        assert grad_check(
            lambda t: ((batch_norm(x, t, b, np.zeros(2), np.ones(2), True) - tgt) ** 2.0).mean(),
            w,
            tol=1e-5,
            floor=1e-5,
        ).passed


class TestAttention:
    def test_matches_per_head_oracle(self, rng):
        q = rng.standard_normal((2, 6, 8))
        k = rng.standard_normal((2, 6, 8))
        v = rng.standard_normal((2, 6, 8))
        got = attention(t64(q), t64(k), t64(v), num_heads=2).data
        np.testing.assert_allclose(got, attention_loops(q, k, v, 2), rtol=1e-9, atol=1e-9)

    def test_with_bias_matches_oracle(self, rng):
        q = rng.standard_normal((1, 5, 6))
        k = rng.standard_normal((1, 5, 6))
        v = rng.standard_normal((1, 5, 6))
        bias = rng.standard_normal((3, 5, 5))
        got = attention(t64(q), t64(k), t64(v), 3, bias=t64(bias)).data
        np.testing.assert_allclose(got, attention_loops(q, k, v, 3, bias=bias), rtol=1e-9)

    def test_masked_positions_get_no_weight(self, rng):
        q = rng.standard_normal((1, 4, 4))
        k = rng.standard_normal((1, 4, 4))
        v = rng.standard_normal((1, 4, 4))
        mask = np.zeros((1, 1, 4, 4), dtype=np.float64)
        mask[..., 2:] = MASK_FILL
        got = attention(t64(q), t64(k), t64(v), 1, mask=mask).data
        want = attention_loops(q[:, :, :], k, v, 1, mask=mask[0])
        np.testing.assert_allclose(got, want, rtol=1e-9)
        # masked keys must not influence the output
        v2 = v.copy()
        v2[:, 2:, :] = 99.0
        got2 = attention(t64(q), t64(k), t64(v2), 1, mask=mask).data
        np.testing.assert_allclose(got, got2, atol=1e-6)

    def test_indivisible_heads_raise(self, rng):
        q = t64(rng.standard_normal((1, 4, 6)))
        with pytest.raises(DimensionError):
            attention(q, q, q, 4)

    def test_gradients(self, rng):
        q = t64(rng.standard_normal((1, 4, 6)))
        k = t64(rng.standard_normal((1, 4, 6)))
        v = t64(rng.standard_normal((1, 4, 6)))
        t = rng.standard_normal((1, 4, 6))

        for name, f in {
            "q": lambda z: (attention(z, k, v, 2) * t).sum(),
            "k": lambda z: (attention(q, z, v, 2) * t).sum(),
            "v": lambda z: (attention(q, k, z, 2) * t).sum(),
        }.items():
            target = {"q": q, "k": k, "v": v}[name]
            assert grad_check(f, target, tol=1e-5, floor=1e-5).passed, name


class TestWindowOps:
    def test_partition_enumerates_blocks(self, rng):
        x = rng.standard_normal((1, 2, 4, 4, 2))
        windows, padded = window_partition(t64(x), 2)
        assert padded == (4, 4, 2)
        assert windows.shape == (4, 8, 2)
        # first window must be the corner block, channels last
        want = x[0, :, :2, :2, :2].transpose(1, 2, 3, 0).reshape(8, 2)
        np.testing.assert_array_equal(windows.data[0], want)

    @given(
        st.tuples(st.integers(3, 9), st.integers(3, 9), st.integers(3, 9)),
        st.integers(2, 4),
    )
    @settings(max_examples=25, deadline=None)
    def test_roundtrip_restores_input(self, extents, window):
        rng = np.random.default_rng(hash((extents, window)) % 2**32)
        x = rng.standard_normal((2, 3) + extents)
        windows, padded = window_partition(t64(x), window)
        back = window_reverse(windows, window, padded, (2, 3) + extents)
        np.testing.assert_array_equal(back.data, x)

    def test_roundtrip_gradient_flows(self, rng):
        x = t64(rng.standard_normal((1, 2, 3, 3, 3)))
        t = np.arange(2 * 27, dtype=np.float64).reshape(1, 2, 3, 3, 3)

        def loss(v):
            wins, padded = window_partition(v, 2)
            return (window_reverse(wins, 2, padded, (1, 2, 3, 3, 3)) * t).sum()

        report = grad_check(loss, x, tol=1e-6, floor=1e-6)
        assert report.passed

    def test_cyclic_shift_roundtrip(self, rng):
        x = t64(rng.standard_normal((1, 2, 5, 5, 5)))
        shifted = roll(x, (-2, -2, -2), (2, 3, 4))
        back = roll(shifted, (2, 2, 2), (2, 3, 4))
        np.testing.assert_array_equal(back.data, x.data)

    def test_shifted_mask_blocks_cross_region_pairs(self):
        mask = shifted_window_mask((4, 4, 4), window=2, shift=1)
        assert mask.shape == (8, 8, 8)
        assert set(np.unique(mask)) <= {np.float32(MASK_FILL), np.float32(0.0)}
        # the corner window away from the wrap boundary is unmasked
        assert np.all(mask[0] == 0.0)
        # windows crossing the wrap contain blocked pairs
        assert (mask == np.float32(MASK_FILL)).any()

    def test_relative_position_index_properties(self):
        w = 3
        idx = relative_position_index(w)
        t = w**3
        assert idx.shape == (t, t)
        assert idx.min() >= 0 and idx.max() < (2 * w - 1) ** 3
        # self-pairs share the centre bucket
        centre = (w - 1) * ((2 * w - 1) ** 2 + (2 * w - 1) + 1)
        assert np.all(np.diag(idx) == centre)
        # symmetry: swapping the pair mirrors the displacement
        flat = idx
        span = 2 * w - 1
        d0, r = np.divmod(flat, span * span)
        d1, d2 = np.divmod(r, span)
        np.testing.assert_array_equal(d0 + d0.T, 2 * (w - 1) * np.ones_like(d0))
        np.testing.assert_array_equal(d1 + d1.T, 2 * (w - 1) * np.ones_like(d1))
        np.testing.assert_array_equal(d2 + d2.T, 2 * (w - 1) * np.ones_like(d2))
