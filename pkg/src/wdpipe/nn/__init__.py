from .ops import (
    conv2d_forward,
    conv2d_backward,
    maxpool_forward,
    maxpool_backward,
    dense_forward,
    dense_backward,
    relu,
    relu_backward,
    softmax,
    cross_entropy_loss,
    softmax_cross_entropy_logit_grad,
    sgd_step,
)
from .network import (
    LayerSpec,
    TrainConfig,
    Network,
    conv,
    max_pool,
    relu_spec,
    flatten,
    dense,
    softmax_output,
    finite_diff_gradient,
    train_network,
)

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
    "dense_forward",
    "dense_backward",
    "relu",
    "relu_backward",
    "softmax",
    "cross_entropy_loss",
    "softmax_cross_entropy_logit_grad",
    "sgd_step",
    "LayerSpec",
    "TrainConfig",
    "Network",
    "conv",
    "max_pool",
    "relu_spec",
    "flatten",
    "dense",
    "softmax_output",
    "finite_diff_gradient",
    "train_network",
]
