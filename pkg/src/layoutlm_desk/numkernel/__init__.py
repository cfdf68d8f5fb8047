from .optim import AdamState, OptimizerConfig, adam_step, lr_at
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    bce_with_logits,
    concat,
    cross_entropy,
    embedding,
    gather,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    mean,
    mul,
    reshape,
    set_debug,
    softmax,
    sub,
    sum_,
    topo_order,
    transpose,
)

__all__ = [
    "AdamState", "OptimizerConfig", "Tensor", "adam_step", "add", "as_tensor",
    "backward", "bce_with_logits", "concat", "cross_entropy", "embedding",
    "gather", "gelu", "layer_norm", "log_softmax", "lr_at", "matmul", "mean",
    "mul", "reshape", "set_debug", "softmax", "sub", "sum_", "topo_order",
    "transpose",
]
