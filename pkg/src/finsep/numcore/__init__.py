"""Small dense tensor library with reverse-mode autodiff and the layers both separators use."""

from .tensor import Tensor, as_tensor, backward, grad_enabled, no_grad
from . import ops
from .ops import (
    absolute, add, add_bias, bilstm, concat, conv1d, conv1d_output_length, conv1d_transpose,
    conv_transpose1d_output_length, glu,
    global_layer_norm, l1, linear, lstm, mean, mul, narrow, neg_si_snr,
    pad_time, prelu, relu, reshape, scale, sigmoid, sub, sum, tanh, transpose,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad", "ops",
    "absolute", "add", "add_bias", "bilstm", "concat", "conv1d", "conv1d_output_length",
    "conv1d_transpose", "conv_transpose1d_output_length",
    "glu", "global_layer_norm", "l1", "linear", "lstm", "mean", "mul", "narrow",
    "neg_si_snr", "pad_time", "prelu", "relu", "reshape", "scale", "sigmoid", "sub", "sum",
    "tanh", "transpose",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
]
