"""Minimal dense-tensor engine with reverse-mode autodiff."""
from . import ops
from .core import (
    ContractError,
    Tensor,
    as_tensor,
    count_macs_ctx,
    default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)
from .gradcheck import finite_diff_check, finite_diff_check_many, module_param_check
from .nn import Conv2d, GroupNorm, LayerNorm, Linear, MLP, Module, ModuleList, Parameter
from .optim import Adam

__all__ = [
    "Adam", "Conv2d", "ContractError", "GroupNorm", "LayerNorm", "Linear", "MLP", "Module",
    "ModuleList", "Parameter", "Tensor", "as_tensor", "count_macs_ctx", "default_dtype",
    "finite_diff_check", "finite_diff_check_many", "module_param_check", "no_grad", "ops",
    "precision", "set_default_dtype",
]
