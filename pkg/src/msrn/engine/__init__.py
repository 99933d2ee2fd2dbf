from .tensor import Tape, Tensor, backprop, check_finite
from .ops import (
    SAME,
    VALID,
    BatchNormState,
    Conv3dSpec,
    add,
    batchnorm,
    concat_channels,
    conv3d,
    dense,
    dropout,
    global_avg_pool,
    reduce_sum,
    relu,
    scale,
    softmax_cross_entropy,
)

__all__ = [
    "Tape", "Tensor", "backprop", "check_finite",
    "SAME", "VALID", "BatchNormState", "Conv3dSpec",
    "add", "batchnorm", "concat_channels", "conv3d", "dense", "dropout",
    "global_avg_pool", "reduce_sum", "relu", "scale", "softmax_cross_entropy",
]
