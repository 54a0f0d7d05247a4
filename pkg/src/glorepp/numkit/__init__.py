"""Float64 numerical core: autodiff tensors, losses, Adam and gradient checking."""

from .autograd import Tensor, as_tensor, concat, stack, where
from .functional import (
    affine,
    cross_entropy,
    entropy,
    layer_norm,
    masked_mean,
    scaled_dot_product_attention,
    sinusoidal_positions,
    soft_cross_entropy,
    softmax,
)
from .gradcheck import GradCheckReport, autograd_gradients, gradient_check
from .optim import Adam, AdamState, adam_step, noam_rate

__all__ = [
    "Tensor", "as_tensor", "concat", "stack", "where",
    "affine", "cross_entropy", "entropy", "layer_norm", "masked_mean",
    "scaled_dot_product_attention", "sinusoidal_positions", "soft_cross_entropy", "softmax",
    "GradCheckReport", "autograd_gradients", "gradient_check",
    "Adam", "AdamState", "adam_step", "noam_rate",
]
