from .functional import (
    conv3d_backward,
    conv3d_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxout_backward,
    maxout_forward,
    maxpool_backward,
    maxpool_forward,
    softmax,
    softmax_cross_entropy,
)
from .layers import (
    STAGE_KERNELS,
    Conv3d,
    ConvBlock,
    Dense,
    DenseMaxout,
    Dropout,
    MaxPool3d,
    Maxout,
    Param,
    SoftmaxHeads,
)
from .optim import Adadelta, OptimizerState, adadelta_step
