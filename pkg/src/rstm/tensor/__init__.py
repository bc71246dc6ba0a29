"""Minimal dense-tensor engine with reverse-mode gradients."""

from .core import (
    NonFiniteError,
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    checked,
    concat,
    default_dtype,
    div,
    exp,
    gather_rows,
    get_default_dtype,
    record_branches,
    getitem,
    grad_enabled,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softplus,
    sub,
    sum_,
    tanh,
    transpose,
    where,
)
from .gradcheck import grad_check
from .nn import (
    conv2d,
    instance_norm,
    linear,
    one_hot,
    resize,
    resize_labels,
    softmax_rows,
    upsample2x,
)
from .optim import Adam
from .spectral import spectral_normalize
