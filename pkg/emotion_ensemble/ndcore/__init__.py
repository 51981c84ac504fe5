# emotion_ensemble/ndcore/__init__.py
from .functional import (
    average_pool,
    batch_norm,
    bce_with_logits,
    conv_1x1,
    dropout,
    linear,
    mse,
    temporal_conv,
)
from .gradcheck import GradcheckResult, gradcheck, relative_error
from .layers import (
    BatchNorm,
    Conv1x1,
    Dropout,
    Linear,
    Module,
    TemporalConv,
    batch_norm_layers,
    set_partial_bn,
)
from .optim import SGD, OptimizerState, ReduceLROnPlateau, reduce_lr_on_plateau, sgd_step
from .tensor import (
    Parameter,
    Tensor,
    concat,
    default_dtype,
    einsum,
    get_default_dtype,
    matmul,
    mean,
    no_grad,
    relu,
    sigmoid,
    softmax,
    stack,
)

__all__ = [
    "Tensor", "Parameter", "default_dtype", "get_default_dtype", "no_grad",
    "matmul", "einsum", "concat", "stack", "mean", "relu", "sigmoid", "softmax",
    "linear", "conv_1x1", "temporal_conv", "batch_norm", "average_pool", "dropout",
    "mse", "bce_with_logits",
    "Module", "Linear", "Conv1x1", "TemporalConv", "BatchNorm", "Dropout",
    "batch_norm_layers", "set_partial_bn",
    "SGD", "OptimizerState", "sgd_step", "ReduceLROnPlateau", "reduce_lr_on_plateau",
    "gradcheck", "GradcheckResult", "relative_error",
]
