from .mlp import MlpParams, apply_mlp, forward_mlp, init_mlp
from .optim import OptimizerState, sgd_step
from .tensor import Tensor, finite_diff_check, grad, softmax_rows

__all__ = [
    "MlpParams",
    "OptimizerState",
    "Tensor",
    "apply_mlp",
    "finite_diff_check",
    "forward_mlp",
    "grad",
    "init_mlp",
    "sgd_step",
    "softmax_rows",
]
