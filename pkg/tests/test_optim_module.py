"""Optimiser updates, module bookkeeping, serialisation round trips."""

import numpy as np
import pytest

from volseg.core import layers
from volseg.core.checks import PRIMITIVE_NAMES, run_primitive_suite
from volseg.core.module import Module, ModuleList, Parameter, he_normal, trunc_normal
from volseg.core.optim import AdamW
from volseg.core.serialize import (
    SerializationError,
    load_checkpoint,
    load_tensor,
    save_checkpoint,
    save_tensor,
)
from volseg.core.tensor import Tensor, backward
from volseg.errors import UsageError

from oracles import adamw_ref_step


class TinyNet(Module):
    def __init__(self, rng):
        super().__init__()
        self.lin1 = layers.Linear(4, 8, rng)
        self.blocks = ModuleList([layers.Linear(8, 8, rng) for _ in range(2)])
        self.norm = layers.LayerNorm(8)
        self.bn = layers.BatchNorm3d(2)


class TestModuleSystem:
    def test_parameter_names_are_deterministic_paths(self, rng):
        net = TinyNet(rng)
        names = [n for n, _ in net.named_parameters()]
        assert names == [
            "lin1.weight",
            "lin1.bias",
            "blocks.0.weight",
            "blocks.0.bias",
            "blocks.1.weight",
            "blocks.1.bias",
            "norm.weight",
            "norm.bias",
            "bn.weight",
            "bn.bias",
        ]
        assert len(set(names)) == len(names)

    def test_buffers_tracked_separately(self, rng):
        net = TinyNet(rng)
        bufs = dict(net.named_buffers())
        assert set(bufs) == {"bn.running_mean", "bn.running_var"}

    def test_train_eval_propagates(self, rng):
        net = TinyNet(rng)
        net.eval()
        assert all(not m.training for m in net.modules())
        net.train()
        assert all(m.training for m in net.modules())

    def test_same_seed_same_init(self):
        a = TinyNet(np.random.default_rng(42))
        b = TinyNet(np.random.default_rng(42))
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_state_roundtrip_through_checkpoint(self, rng, tmp_path):
        net = TinyNet(rng)
        params, bufs = net.state_arrays()
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, params, bufs, {"kind": "tiny"})
        p2, b2, meta = load_checkpoint(path)
        assert meta == {"kind": "tiny"}
        other = TinyNet(np.random.default_rng(999))
        other.load_state_arrays(p2, b2)
        for (_, pa), (_, pb) in zip(net.named_parameters(), other.named_parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_load_rejects_name_mismatch(self, rng, tmp_path):
        net = TinyNet(rng)
        params, bufs = net.state_arrays()
        params = dict(params)
        params["bogus"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(UsageError):
            net.load_state_arrays(params, bufs)

    def test_init_statistics(self):
        rng = np.random.default_rng(3)
        w = he_normal(rng, (4000,), fan_in=50)
        assert abs(w.std() - np.sqrt(2.0 / 50)) < 0.01
        t = trunc_normal(rng, (4000,), std=0.02)
        assert np.abs(t).max() <= 0.04 + 1e-9
        assert abs(t.std() - 0.02) < 0.005


class TestAdamW:
    def test_matches_reference_trajectory(self, rng):
        p_data = rng.standard_normal((3, 4)).astype(np.float64)
        p = Parameter(p_data.copy())
        opt = AdamW({"p": p}, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01)
        ref_p = p_data.copy()
        m = np.zeros_like(ref_p)
        v = np.zeros_like(ref_p)
        for t in range(1, 6):
            g = rng.standard_normal((3, 4))
            p.grad = g.copy()
            opt.step()
            ref_p, m, v = adamw_ref_step(ref_p, g, m, v, t, 0.01, 0.9, 0.999, 1e-8, 0.01)
            np.testing.assert_allclose(p.data, ref_p, rtol=1e-12, atol=1e-12)

    def test_quadratic_converges_to_minimum(self):
        p = Parameter(np.array([5.0, -3.0]))
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
        for _ in range(500):
            p.grad = None
            loss = ((p - np.array([1.0, 2.0])) ** 2.0).sum()
            backward(loss)
            opt.step()
        np.testing.assert_allclose(p.data, [1.0, 2.0], atol=1e-3)

    def test_missing_gradient_rejected(self, rng):
        p = Parameter(rng.standard_normal(3))
        opt = AdamW({"p": p})
        with pytest.raises(UsageError):
            opt.step()

    def test_weight_decay_is_decoupled(self):
        # with zero gradient history, decay must still shrink the parameter
        p = Parameter(np.array([2.0]))
        opt = AdamW({"p": p}, lr=0.1, weight_decay=0.5)
        p.grad = np.array([0.0])
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])


class TestSerialize:
    def test_tensor_roundtrip_preserves_bits(self, rng, tmp_path):
        for dtype in (np.float32, np.float64):
            arr = rng.standard_normal((3, 4, 5)).astype(dtype)
            path = tmp_path / f"t_{dtype.__name__}.vstb"
            save_tensor(path, arr)
            back = load_tensor(path)
            assert back.dtype == dtype
            np.testing.assert_array_equal(back, arr)

    def test_scalar_and_empty_shapes(self, tmp_path):
        for arr in (np.float32(3.5) * np.ones(()), np.zeros((0, 4), dtype=np.float32)):
            path = tmp_path / "edge.vstb"
            save_tensor(path, arr)
            back = load_tensor(path)
            assert back.shape == arr.shape
            np.testing.assert_array_equal(back, arr)

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.vstb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(SerializationError):
            load_tensor(path)

    def test_truncated_blob_rejected(self, rng, tmp_path):
        path = tmp_path / "trunc.vstb"
        save_tensor(path, rng.standard_normal(10))
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(SerializationError):
            load_tensor(path)


class TestPrimitiveSuite:
    def test_covers_expected_ops(self):
        required = {
            "conv3d",
            "conv_transpose3d",
            "trilinear_upsample",
            "group_norm",
            "layer_norm",
            "batch_norm_train",
            "batch_norm_eval",
            "attention",
            "attention_masked",
            "softmax",
            "log_softmax",
            "matmul",
            "linear",
            "gelu",
            "window_roundtrip",
            "dropout_train",
        }
        assert required <= set(PRIMITIVE_NAMES)

    def test_single_seed_sweep_passes(self):
        reports = run_primitive_suite(seed=11, tol=1e-4)
        failing = {n: str(r) for n, r in reports.items() if not r.passed}
        assert not failing, failing
