from . import tensor as F
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, tensor_checksum
from .gradcheck import GradCheckResult, finite_diff_check, relative_error
from .optim import AdamW, ParamGroup, clip_grad_norm, global_grad_norm
from .tensor import ShapeError, Tensor, get_default_dtype, no_grad, precision, set_default_dtype

__all__ = [
    "F",
    "AdamW",
    "Checkpoint",
    "CheckpointError",
    "GradCheckResult",
    "ParamGroup",
    "ShapeError",
    "Tensor",
    "clip_grad_norm",
    "finite_diff_check",
    "get_default_dtype",
    "global_grad_norm",
    "load_checkpoint",
    "no_grad",
    "precision",
    "relative_error",
    "save_checkpoint",
    "set_default_dtype",
    "tensor_checksum",
]
