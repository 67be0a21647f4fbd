"""Parameter and multiply-accumulate counting.

MACs are tallied by the conv2d and matmul kernels themselves while a counter
is active, attributed to the module path that issued them. Norms, activations,
pooling and interpolation contribute nothing.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor import Module, Tensor, count_macs_ctx, no_grad


def count_params(model: Module) -> int:
    return model.num_params()


def count_macs(model: Module, input_size: int, run: Optional[Callable] = None) -> int:
    return profile(model, input_size, run)["macs"]


def profile(model: Module, input_size: int, run: Optional[Callable] = None) -> dict:
    """Run one zero image through ``run`` (default: ``model``) and report complexity."""
    image = Tensor(np.zeros((1, 3, input_size, input_size), dtype=np.float32))
    with no_grad(), count_macs_ctx() as counter:
        (run or model)(image)
    per_module = {}
    for path, macs in sorted(counter.per_module.items()):
        per_module[path] = per_module.get(path, 0) + macs
    params = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        params[top] = params.get(top, 0) + int(p.size)
    return {
        "params": count_params(model),
        "macs": int(counter.total),
        "input_size": int(input_size),
        "per_module": {"macs": per_module, "params": params},
    }
