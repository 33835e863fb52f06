"""Numpy reverse-mode autodiff: tensors, layers, optimizer, verification."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradcheckEntry, GradcheckReport, check_gradients
from .layers import (
    CausalConv1d,
    Conv2d,
    ConvTranspose2d,
    CumulativeLayerNorm,
    FrameLayerNorm,
    Linear,
    LSTM,
    Module,
    MultiHeadAttention,
    PReLULayer,
    conv2d,
    conv_transpose2d,
)
from .optim import Adam
from .tensor import (
    Tensor,
    concat,
    grad_enabled,
    irfft_frames,
    matmul,
    no_grad,
    overlap_add,
    prelu,
    set_nan_check,
    softmax,
)

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "set_nan_check",
    "concat",
    "matmul",
    "softmax",
    "prelu",
    "irfft_frames",
    "overlap_add",
    "Module",
    "Linear",
    "Conv2d",
    "ConvTranspose2d",
    "CausalConv1d",
    "LSTM",
    "FrameLayerNorm",
    "CumulativeLayerNorm",
    "PReLULayer",
    "MultiHeadAttention",
    "conv2d",
    "conv_transpose2d",
    "Adam",
    "check_gradients",
    "GradcheckReport",
    "GradcheckEntry",
    "save_checkpoint",
    "load_checkpoint",
]
