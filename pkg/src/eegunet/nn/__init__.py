"""Small numpy tensor engine: arrays, tape-based gradients and the layers the U-shaped model needs."""
from . import functional
from .functional import (
    batchnorm1d, conv1d, dropout, elu, layernorm, linear, maxpool1d, relu, sigmoid,
    softmax, spatial_dropout, upsample_nearest,
)
from .layers import (
    AttentionWeights, BatchNorm1d, Conv1d, LayerNorm, Linear, Module,
    TransformerEncoderLayer, multi_head_attention, positional_encoding,
)
from .tensor import (
    NdArray, NonFiniteError, Param, Tape, TapeError, backward, precision, zero_grads,
)
