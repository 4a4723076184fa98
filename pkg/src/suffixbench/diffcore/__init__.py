"""Minimal reverse-mode differentiable compute core on numpy arrays."""

from . import checkpoint
from .gradcheck import GradCheckResult, gradcheck, relative_error
from .nn import Module, Parameter, uniform_fan_in
from .ops import (
    add,
    as_tensor,
    causal_conv1d,
    concat,
    cross_entropy_masked,
    dropout,
    embedding,
    exp,
    expand,
    getitem,
    gumbel_softmax_sample,
    layer_norm,
    log,
    log_sigmoid,
    log_softmax,
    lstm_cell,
    matmul,
    mean,
    mse_masked,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    softmax,
    softplus,
    stack,
    sub,
    sum,
    tanh,
    transpose,
    warning_counter,
)
from .optim import Adam, AdamState, clip_grad_norm
from .tensor import ShapeError, Tensor, backward, get_dtype, grad_enabled, no_grad, precision

__all__ = [name for name in dir() if not name.startswith("_")]
