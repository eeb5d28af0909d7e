"""Tape mechanics and elementwise/shape operation gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import volseg.core as C
from volseg.core.gradcheck import grad_check
from volseg.core.tensor import Tensor, backward
from volseg.errors import NumericsError, UsageError

from oracles import softmax_ref


def f64(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


class TestTapeMechanics:
    def test_gradients_accumulate_across_fanout(self, rng):
        x = Tensor(rng.standard_normal(5), dtype=np.float64, requires_grad=True)
        y = (x * 2.0 + x * 3.0).sum()
        backward(y)
        np.testing.assert_allclose(x.grad, np.full(5, 5.0))

    def test_reverse_execution_order(self):
        order = []
        x = Tensor(np.ones(3), requires_grad=True)
        steps = []
        t = x
        for i in range(4):
            t = t * float(i + 1)
            node = t.node
            orig = node.apply

            def tagged(g, i=i, orig=orig):
                order.append(i)
                orig(g)

            node.apply = tagged
            steps.append(t)
        backward(t.sum())
        assert order == [3, 2, 1, 0]

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            backward(x * 2.0)

    def test_leaf_without_graph_rejected(self):
        with pytest.raises(UsageError):
            backward(Tensor(np.ones(1)))

    def test_no_grad_suppresses_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with C.no_grad():
            y = x * 2.0
        assert y.node is None and not y.requires_grad

    def test_second_backward_after_free_fails(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = (x * 2.0).sum()
        backward(y)
        with pytest.raises(UsageError):
            backward(y)

    def test_nan_surfaces_immediately(self):
        x = Tensor(np.array([-1.0]))
        with np.errstate(all="ignore"), pytest.raises(NumericsError):
            C.log(x)

    def test_inf_surfaces_immediately(self):
        x = Tensor(np.array([1e308]))
        with np.errstate(all="ignore"), pytest.raises(NumericsError):
            x * 1e10

    def test_grad_shape_matches_leaf(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), dtype=np.float64, requires_grad=True)
        backward((x * x).sum())
        assert x.grad.shape == (3, 4)


class TestElementwiseGradients:
    @pytest.mark.parametrize(
        "name,f",
        [
            ("add", lambda x: (x + 3.0).sum()),
            ("sub", lambda x: (5.0 - x).sum()),
            ("mul", lambda x: (x * x).sum()),
            ("div", lambda x: (1.0 / (x * x + 1.0)).sum()),
            ("neg", lambda x: (-x * x).sum()),
            ("pow", lambda x: ((x * x + 1.0) ** 1.5).sum()),
            ("exp", lambda x: C.exp(x).sum()),
            ("sqrt", lambda x: C.sqrt(x * x + 1.0).sum()),
            ("tanh", lambda x: C.tanh(x).sum()),
            ("gelu", lambda x: C.gelu(x).sum()),
            ("leaky_relu", lambda x: C.leaky_relu(x + 0.05, 0.01).sum()),
            ("mean", lambda x: (C.exp(x).mean(axis=0)).sum()),
        ],
    )
    def test_against_finite_differences(self, rng, name, f):
        x = f64(rng, 4, 5)
        report = grad_check(f, x, tol=1e-6, floor=1e-6)
        assert report.passed, f"{name}: {report}"

    def test_log_gradient(self, rng):
        x = Tensor(rng.uniform(0.5, 2.0, (4, 5)), dtype=np.float64)
        assert grad_check(lambda t: C.log(t).sum(), x, tol=1e-6, floor=1e-6).passed

    def test_relu_gradient_off_kink(self, rng):
        data = rng.standard_normal((4, 5))
        data[np.abs(data) < 0.1] += 0.2
        x = Tensor(data, dtype=np.float64)
        assert grad_check(lambda t: C.relu(t).sum(), x, tol=1e-6, floor=1e-6).passed

    def test_broadcast_gradients_reduce(self, rng):
        a = Tensor(rng.standard_normal((3, 1, 4)), dtype=np.float64, requires_grad=True)
        b = Tensor(rng.standard_normal((5, 1)), dtype=np.float64, requires_grad=True)
        backward((a * b).sum())
        np.testing.assert_allclose(a.grad, np.full((3, 1, 4), b.data.sum()))
        np.testing.assert_allclose(b.grad, np.full((5, 1), a.data.sum()))


class TestShapeOps:
    @pytest.mark.parametrize(
        "name,f",
        [
            ("reshape", lambda x: (C.reshape(x, (20,)) * np.arange(20.0)).sum()),
            ("permute", lambda x: (C.permute(x, (1, 0)) * np.arange(20.0).reshape(5, 4)).sum()),
            ("slice", lambda x: (x[1:3, ::2] ** 2.0).sum()),
            ("pad", lambda x: (C.pad(x, ((1, 2), (0, 3))) * 2.0).sum() + (x * x).sum()),
            ("roll", lambda x: (C.roll(x, (1, -2), (0, 1)) * np.arange(20.0).reshape(4, 5)).sum()),
        ],
    )
    def test_against_finite_differences(self, rng, name, f):
        x = f64(rng, 4, 5)
        assert grad_check(f, x, tol=1e-6, floor=1e-6).passed, name

    def test_concat_roundtrip_and_grad(self, rng):
        a = f64(rng, 3, 2)
        b = f64(rng, 3, 4)
        out = C.concat([a, b], axis=1)
        np.testing.assert_array_equal(out.data[:, :2], a.data)
        np.testing.assert_array_equal(out.data[:, 2:], b.data)
        assert grad_check(lambda t: (C.concat([t, b], axis=1) ** 2.0).sum(), a, tol=1e-6, floor=1e-6).passed

    def test_index_select_gather_and_scatter(self, rng):
        x = f64(rng, 6, 3)
        idx = np.array([0, 2, 2, 5])
        out = C.index_select(x, idx, axis=0)
        np.testing.assert_array_equal(out.data, x.data[idx])
        assert grad_check(
            lambda t: (C.index_select(t, idx, 0) * np.arange(12.0).reshape(4, 3)).sum(),
            x,
            tol=1e-6,
            floor=1e-6,
        ).passed

    def test_matmul_batched_gradients(self, rng):
        a = f64(rng, 2, 3, 4, 5)
        b = f64(rng, 5, 4)
        assert grad_check(lambda t: (C.matmul(t, b) ** 2.0).sum(), a, tol=1e-6, floor=1e-6).passed
        assert grad_check(lambda t: (C.matmul(a, t) ** 2.0).sum(), b, tol=1e-6, floor=1e-6).passed


class TestSoftmaxFamily:
    def test_softmax_matches_reference(self, rng):
        x = rng.standard_normal((3, 7))
        np.testing.assert_allclose(C.softmax(Tensor(x), -1).data, softmax_ref(x), rtol=1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_softmax_rows_form_simplex(self, seed):
        x = np.random.default_rng(seed).standard_normal((4, 9)) * 10.0
        out = C.softmax(Tensor(x, dtype=np.float64), -1).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)

    def test_softmax_gradient(self, rng):
        x = f64(rng, 3, 6)
        t = np.arange(18.0).reshape(3, 6)
        assert grad_check(lambda v: (C.softmax(v, -1) * t).sum(), x, tol=1e-6, floor=1e-6).passed

    def test_log_softmax_gradient_and_value(self, rng):
        x = f64(rng, 3, 6)
        np.testing.assert_allclose(
            C.log_softmax(x, -1).data, np.log(softmax_ref(x.data)), rtol=1e-10
        )
        t = np.arange(18.0).reshape(3, 6)
        assert grad_check(lambda v: (C.log_softmax(v, -1) * t).sum(), x, tol=1e-6, floor=1e-6).passed

    def test_masked_softmax_stays_finite(self):
        x = np.zeros((1, 4))
        x[0, 1:] = C.MASK_FILL
        out = C.softmax(Tensor(x), -1).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out[0, 0], 1.0, atol=1e-6)


class TestDropout:
    def test_eval_is_identity(self, rng):
        x = Tensor(rng.standard_normal(100))
        out = C.dropout(x, 0.5, training=False, rng=rng)
        np.testing.assert_array_equal(out.data, x.data)

    def test_train_scales_survivors(self, rng):
        x = Tensor(np.ones(10000))
        out = C.dropout(x, 0.25, training=True, rng=rng).data
        kept = out != 0
        np.testing.assert_allclose(out[kept], 1.0 / 0.75)
        assert abs(kept.mean() - 0.75) < 0.03

    def test_invalid_probability(self, rng):
        with pytest.raises(UsageError):
            C.dropout(Tensor(np.ones(3)), 1.0, True, rng)


class TestGradCheckHarness:
    def test_detects_wrong_gradient(self, rng):
        def bad(t):
            out = C.exp(t)
            if out.node is not None:
                orig = out.node.apply

                def corrupt(g):
                    orig(g * 1.5)

                out.node.apply = corrupt
            return out.sum()

        x = f64(rng, 3)
        report = grad_check(bad, x, tol=1e-4)
        assert not report.passed

    def test_rejects_nondeterministic_function(self, rng):
        state = {"n": 0}

        def flaky(t):
            state["n"] += 1
            return (t * float(state["n"])).sum()

        with pytest.raises(UsageError):
            grad_check(flaky, f64(rng, 3))

    def test_samples_at_most_max_coords(self, rng):
        x = f64(rng, 40)
        report = grad_check(lambda t: (t * t).sum(), x, max_coords=7, rng=rng, tol=1e-6, floor=1e-6)
        assert report.coords_checked == 7
