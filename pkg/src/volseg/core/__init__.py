"""Differentiable tensor core: autodiff, kernels, modules, optimiser."""

from .attention import (
    attention,
    relative_position_index,
    shifted_window_mask,
    window_partition,
    window_reverse,
)
from .conv import conv3d, conv_transpose3d, trilinear_upsample
from .gradcheck import GradCheckReport, grad_check
from .module import Module, ModuleList, Parameter, he_normal, trunc_normal
from .norms import batch_norm, group_norm, instance_norm, layer_norm
from .optim import AdamW, OptimizerState
from .serialize import load_checkpoint, load_tensor, save_checkpoint, save_tensor
from .tensor import (
    MASK_FILL,
    Tensor,
    as_tensor,
    backward,
    concat,
    dropout,
    exp,
    gelu,
    index_select,
    leaky_relu,
    linear,
    log,
    log_softmax,
    matmul,
    no_grad,
    pad,
    permute,
    relu,
    reshape,
    roll,
    softmax,
    sqrt,
    tanh,
)

__all__ = [
    "MASK_FILL",
    "Tensor",
    "as_tensor",
    "backward",
    "no_grad",
    "concat",
    "pad",
    "roll",
    "reshape",
    "permute",
    "matmul",
    "linear",
    "softmax",
    "log_softmax",
    "dropout",
    "relu",
    "leaky_relu",
    "gelu",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "index_select",
    "conv3d",
    "conv_transpose3d",
    "trilinear_upsample",
    "group_norm",
    "layer_norm",
    "batch_norm",
    "instance_norm",
    "attention",
    "window_partition",
    "window_reverse",
    "shifted_window_mask",
    "relative_position_index",
    "Module",
    "ModuleList",
    "Parameter",
    "he_normal",
    "trunc_normal",
    "AdamW",
    "OptimizerState",
    "grad_check",
    "GradCheckReport",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
]
