from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam, AdamState, adam_step
from .tensor import ContractError, DimensionError, Tensor, as_tensor, backward, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "ContractError",
    "DimensionError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "backward",
    "load_checkpoint",
    "no_grad",
    "ops",
    "save_checkpoint",
]
