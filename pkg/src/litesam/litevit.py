"""LiteViT image encoder: Patch Merge downsamplers and multi-scale pooling blocks."""
from __future__ import annotations

import math
from typing import List

import numpy as np

from .config import BackboneConfig
from .tensor import Conv2d, ContractError, GroupNorm, Module, ModuleList, Parameter, Tensor, ops

STEM_KERNEL, STEM_STRIDE = 7, 4
MERGE_KERNEL, MERGE_STRIDE = 3, 2
ATTN_TOKEN_STRIDE = 4


class PatchMerge(Module):
    """Strided convolution followed by group norm."""

    def __init__(self, cin, cout, kernel, stride, rng, channels_per_group=32):
        super().__init__()
        self.stride = stride
        self.conv = Conv2d(cin, cout, kernel, rng, stride=stride, padding=kernel // 2)
        self.norm = GroupNorm(cout, channels_per_group)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ContractError(f"spatial extent {h}x{w} not divisible by stride {self.stride}")
        return self.norm(self.conv(x))


def token_stride(h: int, w: int) -> int:
    for r in (ATTN_TOKEN_STRIDE, 2, 1):
        if h % r == 0 and w % r == 0 and h >= r and w >= r:
            return r
    return 1


def pooled_self_attention(x: Tensor) -> Tensor:
    """Single-head, projection-free attention over an average-pooled token grid.

    Queries, keys and values are the pooled tokens themselves; the attended
    grid is resized back to the input extent bilinearly.
    """
    n, c, h, w = x.shape
    r = token_stride(h, w)
    pooled = ops.avg_pool2d(x, r, r) if r > 1 else x
    th, tw = pooled.shape[-2:]
    tokens = ops.transpose(ops.reshape(pooled, (n, c, th * tw)), (0, 2, 1))
    scores = ops.matmul(tokens, ops.transpose(tokens, (0, 2, 1))) * (1.0 / math.sqrt(c))
    mixed = ops.matmul(ops.softmax(scores, -1), tokens)
    grid = ops.reshape(ops.transpose(mixed, (0, 2, 1)), (n, c, th, tw))
    return ops.upsample_bilinear(grid, (h, w)) if r > 1 else grid


class MSPM(Module):
    """Multi-scale pooling token mixer.

    Sums ``avg_pool_k(x) - x`` over the configured kernel sizes and fuses the
    result with a 1x1 conv. On attention stages a per-channel-scaled pooled
    self-attention term is added.
    """

    def __init__(self, dim, pool_scales, attention, rng, attn_init=0.1):
        super().__init__()
        self.dim = dim
        self.pool_scales = list(pool_scales)
        self.fuse = Conv2d(dim, dim, 1, rng)
        self.attention = attention
        if attention:
            self.attn_scale = Parameter(np.full(dim, attn_init))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dim:
            raise ContractError(f"MSPM expects {self.dim} channels, got {x.shape[1]}")
        mixed = None
        for k in self.pool_scales:
            term = ops.avg_pool2d(x, k, 1, k // 2) - x
            mixed = term if mixed is None else mixed + term
        out = self.fuse(mixed)
        if self.attention:
            out = out + pooled_self_attention(x) * ops.reshape(self.attn_scale, (1, self.dim, 1, 1))
        return out


class ConvMLP(Module):
    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.fc1 = Conv2d(dim, hidden, 1, rng)
        self.dw = Conv2d(hidden, hidden, 3, rng, padding=1, groups=hidden)
        self.fc2 = Conv2d(hidden, dim, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.dw(self.fc1(x))))


class LiteViTBlock(Module):
    """x + MSPM(norm(x)), then y + ConvMLP(norm(y))."""

    def __init__(self, dim, cfg: BackboneConfig, attention: bool, rng):
        super().__init__()
        self.norm1 = GroupNorm(dim, cfg.channels_per_group)
        self.mixer = MSPM(dim, cfg.pool_scales, attention, rng)
        self.norm2 = GroupNorm(dim, cfg.channels_per_group)
        self.mlp = ConvMLP(dim, max(1, int(round(dim * cfg.mlp_ratio))), rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.mixer(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Stage(Module):
    def __init__(self, cin, index, cfg: BackboneConfig, rng):
        super().__init__()
        dim = cfg.embed_dims[index]
        if index == 0:
            self.merge = PatchMerge(cin, dim, STEM_KERNEL, STEM_STRIDE, rng, cfg.channels_per_group)
        else:
            self.merge = PatchMerge(cin, dim, MERGE_KERNEL, MERGE_STRIDE, rng, cfg.channels_per_group)
        attention = (index + 1) in cfg.attn_stages
        self.blocks = ModuleList(LiteViTBlock(dim, cfg, attention, rng) for _ in range(cfg.depths[index]))

    def forward(self, x: Tensor) -> Tensor:
        x = self.merge(x)
        for block in self.blocks:
            x = block(x)
        return x


class LiteViT(Module):
    """Four-stage backbone returning features at strides 4, 8, 16 and 32."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.stages = ModuleList()
        cin = 3
        for i in range(4):
            self.stages.append(Stage(cin, i, cfg, rng))
            cin = cfg.embed_dims[i]

    def forward(self, image: Tensor) -> List[Tensor]:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ContractError(f"expected N,3,S,S image, got {image.shape}")
        if image.shape[2] % 32 or image.shape[3] % 32:
            raise ContractError(f"image extent {image.shape[2:]} not divisible by 32")
        feats = []
        x = image
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def build_backbone(cfg: BackboneConfig = None, seed: int = 0) -> LiteViT:
    return LiteViT(cfg or BackboneConfig(), np.random.default_rng(seed))
