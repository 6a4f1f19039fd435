from .layers import (
    Conv2D,
    ConvTranspose2D,
    Dense,
    Dropout,
    Relu,
    ShapeMismatch,
    Sigmoid,
    Upsample2x,
    mse,
    mse_grad,
    softmax,
    softmax_xent,
)
from .optim import Adam
from .gradcheck import numeric_grad, rel_error

__all__ = [
    "Adam",
    "Conv2D",
    "ConvTranspose2D",
    "Dense",
    "Dropout",
    "Relu",
    "ShapeMismatch",
    "Sigmoid",
    "Upsample2x",
    "mse",
    "mse_grad",
    "numeric_grad",
    "rel_error",
    "softmax",
    "softmax_xent",
]
