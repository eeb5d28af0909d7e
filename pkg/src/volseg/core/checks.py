"""Registry of gradient-check cases covering every differentiable primitive.

Each case builds a fresh random input and a scalar-valued function around one
kernel. The registry backs both the ``volseg gradcheck`` command and the
acceptance test suite; cases use float64 inputs sized to keep a full sweep
cheap enough to repeat across many seeds.
"""

from __future__ import annotations

import numpy as np

from . import conv as F_conv
from . import norms as F_norms
from . import tensor as F
from .attention import attention, window_partition, window_reverse
from .gradcheck import GradCheckReport, grad_check
from .tensor import Tensor

__all__ = ["PRIMITIVE_NAMES", "primitive_case", "run_primitive_suite"]


def _t(rng, *shape, lo=None, hi=None):
    if lo is not None:
        return Tensor(rng.uniform(lo, hi, shape), dtype=np.float64)
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _cases(rng: np.random.Generator) -> dict:
    x_small = _t(rng, 3, 4)
    x_pos = _t(rng, 3, 4, lo=0.5, hi=2.0)
    x_off_kink = Tensor(np.where(np.abs(x_small.data) < 0.1, x_small.data + 0.3, x_small.data))
    vol = _t(rng, 1, 2, 4, 4, 4)
    conv_w = Tensor(rng.standard_normal((3, 2, 3, 3, 3)) * 0.25, dtype=np.float64)
    deconv_w = Tensor(rng.standard_normal((2, 3, 2, 2, 2)) * 0.25, dtype=np.float64)
    affine_w = _t(rng, 2, lo=0.5, hi=1.5)
    affine_b = Tensor(rng.standard_normal(2) * 0.1, dtype=np.float64)
    tokens = _t(rng, 1, 4, 6)
    tok_k, tok_v = _t(rng, 1, 4, 6), _t(rng, 1, 4, 6)
    lin_w = _t(rng, 6, 5)
    lin_b = Tensor(rng.standard_normal(5) * 0.1, dtype=np.float64)
    probe = {}

    def target_like(t):
        key = t.shape
        if key not in probe:
            probe[key] = rng.standard_normal(t.shape)
        return probe[key]

    def weighted(f):
        def loss(t):
            out = f(t)
            return (out * target_like(out)).sum()

        return loss

    mask = np.zeros((1, 1, 4, 4))
    mask[..., 2:] = F.MASK_FILL
    bn_rm, bn_rv = np.array([0.2, -0.4]), np.array([1.3, 0.7])

    return {
        "add": (weighted(lambda t: t + x_small.data), _t(rng, 3, 4)),
        "sub": (weighted(lambda t: x_small.data - t), _t(rng, 3, 4)),
        "mul": (weighted(lambda t: t * x_small.data), _t(rng, 3, 4)),
        "div": (weighted(lambda t: t / x_pos.data), _t(rng, 3, 4)),
        "neg": (weighted(lambda t: -t), _t(rng, 3, 4)),
        "pow": (weighted(lambda t: (t * t + 1.0) ** 1.5), _t(rng, 3, 4)),
        "exp": (weighted(F.exp), _t(rng, 3, 4)),
        "log": (weighted(F.log), _t(rng, 3, 4, lo=0.5, hi=2.0)),
        "sqrt": (weighted(F.sqrt), _t(rng, 3, 4, lo=0.5, hi=2.0)),
        "tanh": (weighted(F.tanh), _t(rng, 3, 4)),
        "relu": (weighted(F.relu), x_off_kink),
        "leaky_relu": (weighted(lambda t: F.leaky_relu(t, 0.01)), x_off_kink),
        "gelu": (weighted(F.gelu), _t(rng, 3, 4)),
        "sum": (lambda t: (F.sum_(t, axis=0) ** 2.0).sum(), _t(rng, 3, 4)),
        "mean": (lambda t: (F.mean_(t, axis=1) ** 2.0).sum(), _t(rng, 3, 4)),
        "reshape": (weighted(lambda t: F.reshape(t, (12,))), _t(rng, 3, 4)),
        "permute": (weighted(lambda t: F.permute(t, (1, 0))), _t(rng, 3, 4)),
        "slice": (weighted(lambda t: t[1:3, ::2]), _t(rng, 4, 5)),
        "pad": (weighted(lambda t: F.pad(t, ((1, 1), (0, 2)))), _t(rng, 3, 4)),
        "roll": (weighted(lambda t: F.roll(t, (1, -1), (0, 1))), _t(rng, 3, 4)),
        "concat": (weighted(lambda t: F.concat([t, x_small.detach()], axis=1)), _t(rng, 3, 4)),
        "index_select": (
            weighted(lambda t: F.index_select(t, np.array([0, 2, 2, 3]), 0)),
            _t(rng, 5, 3),
        ),
        "matmul": (weighted(lambda t: F.matmul(t, lin_w)), _t(rng, 2, 3, 6)),
        "linear": (weighted(lambda t: F.linear(t, lin_w, lin_b)), _t(rng, 4, 6)),
        "softmax": (weighted(lambda t: F.softmax(t, -1)), _t(rng, 3, 6)),
        "log_softmax": (weighted(lambda t: F.log_softmax(t, -1)), _t(rng, 3, 6)),
        "conv3d": (
            weighted(lambda t: F_conv.conv3d(t, conv_w, None, 1, 1)),
            _t(rng, 1, 2, 4, 4, 4),
        ),
        "conv3d_weight": (
            weighted(lambda t: F_conv.conv3d(vol, t, None, 1, 1)),
            Tensor(conv_w.data.copy()),
        ),
        "conv_transpose3d": (
            weighted(lambda t: F_conv.conv_transpose3d(t, deconv_w, 2)),
            _t(rng, 1, 2, 3, 3, 3),
        ),
        "conv_transpose3d_weight": (
            weighted(lambda t: F_conv.conv_transpose3d(vol, t, 2)),
            Tensor(deconv_w.data.copy()),
        ),
        "trilinear_upsample": (
            weighted(lambda t: F_conv.trilinear_upsample(t, 2)),
            _t(rng, 1, 2, 3, 3, 3),
        ),
        "group_norm": (
            weighted(lambda t: F_norms.group_norm(t, 2, affine_w, affine_b)),
            _t(rng, 2, 2, 3, 3, 3),
        ),
        "layer_norm": (
            weighted(
                lambda t: F_norms.layer_norm(t, Tensor(np.ones(6)), Tensor(np.zeros(6)))
            ),
            _t(rng, 3, 5, 6),
        ),
        "batch_norm_train": (
            weighted(
                lambda t: F_norms.batch_norm(
                    t, affine_w, affine_b, np.zeros(2), np.ones(2), training=True
                )
            ),
            _t(rng, 3, 2, 3, 3, 3),
        ),
        "batch_norm_eval": (
            weighted(
                lambda t: F_norms.batch_norm(
                    t, affine_w, affine_b, bn_rm, bn_rv, training=False
                )
            ),
            _t(rng, 2, 2, 3, 3, 3),
        ),
        "attention": (
            weighted(lambda t: attention(t, tok_k, tok_v, 2)),
            _t(rng, 1, 4, 6),
        ),
        "attention_masked": (
            weighted(lambda t: attention(tokens, tok_k, t, 2, mask=mask)),
            _t(rng, 1, 4, 6),
        ),
        "window_roundtrip": (
            weighted(
                lambda t: window_reverse(
                    window_partition(t, 2)[0], 2, (4, 4, 4), (1, 2, 3, 4, 4)
                )
            ),
            _t(rng, 1, 2, 3, 4, 4),
        ),
        "dropout_train": (
            weighted(
                lambda t: F.dropout(t, 0.5, training=True, rng=np.random.default_rng(7))
            ),
            _t(rng, 4, 5),
        ),
    }


PRIMITIVE_NAMES = tuple(sorted(_cases(np.random.default_rng(0)).keys()))


def primitive_case(name: str, seed: int):
    """Build ``(loss_fn, input_tensor)`` for a named primitive and seed."""
    return _cases(np.random.default_rng(seed))[name]


def run_primitive_suite(
    seed: int, tol: float = 1e-4, max_coords: int = 64
) -> dict[str, GradCheckReport]:
    """Gradient-check every primitive once with inputs drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    reports = {}
    for name, (f, x) in _cases(rng).items():
        reports[name] = grad_check(
            f, x, tol=tol, max_coords=max_coords, rng=np.random.default_rng(seed + 1)
        )
    return reports
