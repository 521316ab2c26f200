from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, rel_error
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cross_entropy,
    div,
    exp,
    gelu,
    grad_enabled,
    identity,
    linear,
    log,
    matmul,
    mean,
    mse_loss,
    mul,
    no_grad,
    reshape,
    rms_norm,
    softmax_lastdim,
    sub,
    sum,
    transpose,
    transpose_last2,
    unbroadcast,
)

__all__ = [
    "Tape", "Tensor", "add", "as_tensor", "backward", "check_gradients", "concat",
    "cross_entropy", "div", "exp", "gelu", "grad_enabled", "identity", "linear",
    "load_checkpoint", "log", "matmul", "mean", "mse_loss", "mul", "no_grad",
    "numerical_grad", "rel_error", "reshape", "rms_norm", "save_checkpoint",
    "softmax_lastdim", "sub", "sum", "transpose", "transpose_last2", "unbroadcast",
]
