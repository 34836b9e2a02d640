from . import functional
from .functional import BatchNormParams, ShapeError
from .optim import SGD, Adam, adam_step, sgd_step, warmup_cosine
from .tensor import NonFiniteError, Tape, TapeError, Tensor, backward, no_grad

__all__ = [
    "Adam",
    "BatchNormParams",
    "NonFiniteError",
    "SGD",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "adam_step",
    "backward",
    "functional",
    "no_grad",
    "sgd_step",
    "warmup_cosine",
]
