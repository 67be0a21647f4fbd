"""Two-way transformer mask decoder (desk-scale SAM decoder)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DecoderConfig
from ..tensor import Conv2d, LayerNorm, Linear, MLP, Module, ModuleList, Parameter, Tensor, ops
from .prompt import dense_pe

MASK_STRIDE = 4
DENSE_CHANNELS = 2
MASK_PRIOR_LOGIT = -2.0


@dataclass
class MaskPrediction:
    mask_logits: np.ndarray  # (Hm, Wm)
    iou_pred: float

    @property
    def mask(self) -> np.ndarray:
        return self.mask_logits > 0


class Attention(Module):
    def __init__(self, dim, heads, rng, downsample=1):
        super().__init__()
        inner = dim // downsample
        self.heads = heads
        self.q = Linear(dim, inner, rng)
        self.k = Linear(dim, inner, rng)
        self.v = Linear(dim, inner, rng)
        self.proj = Linear(inner, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        return ops.transpose(ops.reshape(x, (b, n, self.heads, c // self.heads)), (0, 2, 1, 3))

    def forward(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        q, k, v = self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v))
        d = q.shape[-1]
        attn = ops.softmax(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(d)), -1)
        out = ops.matmul(attn, v)
        b, h, n, dh = out.shape
        return self.proj(ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, n, h * dh)))


class TwoWayBlock(Module):
    def __init__(self, cfg: DecoderConfig, rng):
        super().__init__()
        d = cfg.dim
        self.self_attn = Attention(d, cfg.heads, rng)
        self.norm1 = LayerNorm(d)
        self.t2i = Attention(d, cfg.heads, rng, cfg.attn_downsample)
        self.norm2 = LayerNorm(d)
        self.mlp = MLP([d, cfg.mlp_dim, d], rng)
        self.norm3 = LayerNorm(d)
        self.i2t = Attention(d, cfg.heads, rng, cfg.attn_downsample)
        self.norm4 = LayerNorm(d)

    def forward(self, queries, keys, query_pe, key_pe):
        q = queries + query_pe
        queries = self.norm1(queries + self.self_attn(q, q, queries))
        q = queries + query_pe
        queries = self.norm2(queries + self.t2i(q, keys + key_pe, keys))
        queries = self.norm3(queries + self.mlp(queries))
        q = queries + query_pe
        k = keys + key_pe
        keys = self.norm4(keys + self.i2t(k, q, queries))
        return queries, keys


class MaskDecoder(Module):
    """Prompt tokens and image tokens attend to each other; a hypernetwork vector
    from the mask token then reads out per-pixel logits at stride 4.

    Upscaling is bilinear. Because the read-out is a channel contraction it
    commutes with interpolation, so logits are formed at token resolution and
    then resized. A stride-4 skip projection from the first backbone stage
    adds the fine detail the stride-16 grid lacks.

    Besides the sparse tokens, each prompt is rasterized (point blob, box
    coverage) and projected into the image tokens and the fine read-out.

    The read-out starts at zero and logits are multiplied by a fixed scale,
    so an untrained decoder predicts the background prior everywhere and the
    sharp logits a soft dice term needs are reachable in few small steps.
    """

    def __init__(self, embed_dim: int, skip_dim: int, cfg: DecoderConfig, rng):
        super().__init__()
        d = cfg.dim
        self.dim = d
        self.neck = Conv2d(embed_dim, d, 1, rng)
        self.output_tokens = Parameter(rng.normal(0, 1.0, size=(2, d)))  # iou, mask
        self.blocks = ModuleList(TwoWayBlock(cfg, rng) for _ in range(cfg.depth))
        self.final_attn = Attention(d, cfg.heads, rng, cfg.attn_downsample)
        self.norm_final = LayerNorm(d)
        self.upscale = Linear(d, cfg.upscale_dim, rng)
        self.skip = Conv2d(skip_dim, cfg.upscale_dim, 1, rng)
        self.hyper = MLP([d, d, cfg.upscale_dim], rng)
        last = self.hyper.layers[len(self.hyper.layers) - 1]
        last.weight.data[:] = 0
        last.bias.data[:] = 0
        self.logit_scale = cfg.logit_scale
        self.mask_prior = Parameter(np.array(MASK_PRIOR_LOGIT))
        self.dense_coarse = Linear(DENSE_CHANNELS, d, rng)
        self.dense_fine = Linear(cfg.upscale_dim, DENSE_CHANNELS, rng, bias=False)
        self.iou_head = MLP([d, d // 2, 1], rng)

    def image_tokens(self, embedding: Tensor, skip: Tensor):
        """Prompt-independent precomputation for one image: (tokens, pe, skip_feats)."""
        src = self.neck(embedding)
        _, d, h, w = src.shape
        tokens = ops.transpose(ops.reshape(src, (1, d, h * w)), (0, 2, 1))
        pe = Tensor(dense_pe(h, w, d)[None].astype(src.dtype))
        sk = self.skip(skip)
        u = sk.shape[1]
        return tokens, pe, ops.reshape(sk, (1, u, sk.shape[2] * sk.shape[3])), (h, w), sk.shape[2:]

    def forward(self, image_state, sparse: Tensor, coarse: np.ndarray, fine: np.ndarray):
        """Decode a (B, K, D) batch of prompt tokens against one image.

        ``coarse`` and ``fine`` are the (B, 2, ...) prompt rasters at token and
        mask resolution. Returns ``(logits (B, Hm, Wm), iou (B,))`` as tensors.
        """
        tokens, pe, skip, (h, w), (hm, wm) = image_state
        b = sparse.shape[0]
        d = self.dim
        dt = sparse.dtype
        out_tok = ops.broadcast_to(ops.reshape(self.output_tokens, (1, 2, d)), (b, 2, d))
        queries = ops.concat([out_tok, sparse], axis=1)
        query_pe = queries
        dense = Tensor(coarse.reshape(b, DENSE_CHANNELS, h * w).transpose(0, 2, 1).astype(dt))
        keys = tokens + self.dense_coarse(dense)
        for block in self.blocks:
            queries, keys = block(queries, keys, query_pe, pe)
        q = queries + query_pe
        queries = self.norm_final(queries + self.final_attn(q, keys + pe, keys))

        iou_tok = queries[:, 0, :]
        mask_tok = queries[:, 1, :]
        hyper = ops.reshape(self.hyper(mask_tok), (b, 1, -1))  # (B, 1, U)
        feats = ops.gelu(self.upscale(keys))  # (B, hw, U)
        low = ops.matmul(hyper, ops.transpose(feats, (0, 2, 1)))  # (B, 1, hw)
        low = ops.reshape(low, (b, h, w))
        up = ops.upsample_bilinear(low, (hm, wm))
        fine_dense = Tensor(fine.reshape(b, DENSE_CHANNELS, hm * wm).astype(dt))
        fine_out = ops.matmul(hyper, skip) + ops.matmul(self.dense_fine(hyper), fine_dense)
        logits = (up + ops.reshape(fine_out, (b, hm, wm))) * self.logit_scale + self.mask_prior
        iou = ops.sigmoid(ops.reshape(self.iou_head(iou_tok), (b,)))
        return logits, iou
