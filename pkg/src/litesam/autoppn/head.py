from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..config import BackboneConfig, PpnConfig
from ..litevit import LiteViTBlock
from ..tensor import Conv2d, Module, Parameter, Tensor, ops

HEAT_PRIOR = 0.1
HEAD_STAGE = 2  # stride-16 features


class Tower(Module):
    def __init__(self, cin, hidden, cout, rng):
        super().__init__()
        self.conv = Conv2d(cin, hidden, 3, rng, padding=1)
        self.out = Conv2d(hidden, cout, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.out(ops.gelu(self.conv(x)))


class AutoPPN(Module):
    """Stem MSPM block on stride-16 features, then parallel heat and box towers."""

    def __init__(self, backbone: BackboneConfig, cfg: PpnConfig, rng: np.random.Generator):
        super().__init__()
        dim = backbone.embed_dims[HEAD_STAGE]
        self.stem = LiteViTBlock(dim, backbone, (HEAD_STAGE + 1) in backbone.attn_stages, rng)
        self.heat = Tower(dim, cfg.head_channels, 3, rng)
        self.box = Tower(dim, cfg.head_channels, 4, rng)
        # start heat near a small prior instead of 0.5
        self.heat.out.bias = Parameter(np.full(3, np.log(HEAT_PRIOR / (1 - HEAT_PRIOR))))

    def forward(self, pyramid: List[Tensor]) -> Tuple[Tensor, Tensor]:
        x = self.stem(pyramid[HEAD_STAGE])
        return ops.sigmoid(self.heat(x)), ops.relu(self.box(x))
