"""
tensorgrad - small dense-tensor library with reverse-mode autodiff

numpy arrays underneath; the ops, layers, losses and optimizers the
defogger model needs, plus finite-difference gradient checks.
"""

from .tensor import (Tensor, Parameter, Tape, ShapeError, backward, as_tensor,
                     set_default_dtype, get_default_dtype, precision)
from . import functional
from .module import Module, Conv2d, Linear, LSTMCell, Embedding
from .optim import Adam, AdamState, SGD, adam_step, step_decay
from .checkpoint import CheckpointError, save_checkpoint, load_checkpoint
from .gradcheck import gradcheck, assert_gradcheck, numerical_gradient

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "backward",
    "as_tensor",
    "set_default_dtype",
    "get_default_dtype",
    "precision",
    "functional",

    # Layers
    "Module",
    "Conv2d",
    "Linear",
    "LSTMCell",
    "Embedding",

    # Optimization
    "Adam",
    "AdamState",
    "SGD",
    "adam_step",
    "step_decay",

    # Persistence and checks
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "gradcheck",
    "assert_gradcheck",
    "numerical_gradient",
]

__version__ = "1.0.0"
