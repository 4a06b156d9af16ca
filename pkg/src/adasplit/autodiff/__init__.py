from . import ops
from .checkpoint import CheckpointError
from .optim import Adam, clip_grad_norm
from .tensor import ShapeError, Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad

INIT_RANGE = 0.1


def uniform_param(rng, shape, name: str, scale: float = INIT_RANGE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def zeros_param(shape, name: str) -> Tensor:
    import numpy as np

    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones_param(shape, name: str) -> Tensor:
    import numpy as np

    return Tensor(np.ones(shape), requires_grad=True, name=name)


__all__ = [
    "Adam",
    "CheckpointError",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "is_grad_enabled",
    "no_grad",
    "ones_param",
    "ops",
    "uniform_param",
    "zeros_param",
]
