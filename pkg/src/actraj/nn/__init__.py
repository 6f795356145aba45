from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    clamp_min,
    concat,
    cumsum,
    embedding_lookup,
    exp,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    relu,
    softmax,
    tanh,
)
from .layers import (
    MLP,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    TransformerEncoderLayer,
    multi_head_self_attention,
    sinusoidal_positional_encoding,
)
from .optim import Adam, adam_step
from .gradcheck import grad_check
