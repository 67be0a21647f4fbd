"""Finite-difference gradient suite over every differentiable op and composite.

Each check builds a small random instance from a seed and returns the max
relative error between autodiff and central differences in f64.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional

import numpy as np

from .autoppn import AutoPPN, hard_mining_mse, ppn_loss, smooth_l1_box
from .config import BackboneConfig, DecoderConfig, PpnConfig
from .litevit import MSPM, LiteViTBlock
from .segkit.decoder import MaskDecoder
from .segkit.losses import dice_loss, focal_loss, iou_mse, mask_loss, total_loss
from .segkit.prompt import Box, Point, PromptEncoder, prompt_raster
from .tensor import Tensor, finite_diff_check_many, module_param_check, ops, precision

H = 1e-4
TOL = 1e-4


def _away_from_zero(rng, shape, lo=0.2):
    return rng.uniform(lo, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _weighted(out: Tensor, rng) -> Tensor:
    """Scalarize with fixed random weights so every output coordinate matters."""
    w = rng.normal(size=out.shape)
    return ops.sum(out * Tensor(w))


def _op(f: Callable, *shapes, positive=False, nonzero=False):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        if positive:
            xs = [Tensor(rng.uniform(0.3, 2.0, size=s)) for s in shapes]
        elif nonzero:
            xs = [Tensor(_away_from_zero(rng, s)) for s in shapes]
        else:
            xs = [Tensor(rng.normal(size=s)) for s in shapes]
        wrng = np.random.default_rng(seed + 10_000)
        probe = f(*[Tensor(x.data) for x in xs])
        w = Tensor(wrng.normal(size=probe.shape))
        return finite_diff_check_many(lambda ts: ops.sum(f(*ts) * w), xs, H)
    return check


def _module_check(build: Callable, loss: Callable, max_coords: int = 12):
    """Check module parameters and inputs; ``build(rng)`` returns (module, inputs)."""
    def check(seed: int) -> float:
        with precision(np.float64):
            rng = np.random.default_rng(seed)
            module, inputs = build(rng)
            module.to(np.float64)
            leaves = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
            params = module.parameters() + leaves
            # a fresh generator per call keeps the scalarizing weights fixed
            return module_param_check(lambda: loss(module, leaves, np.random.default_rng(seed + 20_000)),
                                      params, H, max_coords, np.random.default_rng(seed + 1))
    return check


def _tiny_backbone(dim=8) -> BackboneConfig:
    return BackboneConfig(embed_dims=[dim, dim, dim, dim], depths=[1, 1, 1, 1], input_size=64,
                          channels_per_group=4)


def _block(attention: bool):
    def build(rng):
        cfg = _tiny_backbone()
        return LiteViTBlock(8, cfg, attention, rng), [rng.normal(size=(1, 8, 8, 8))]

    return _module_check(build, lambda m, xs, r: _weighted(m(xs[0]), r))


def _mspm():
    def build(rng):
        return MSPM(8, [3, 5], True, rng), [rng.normal(size=(1, 8, 8, 8))]

    return _module_check(build, lambda m, xs, r: _weighted(m(xs[0]), r))


def _ppn_head():
    def build(rng):
        cfg = _tiny_backbone()
        return AutoPPN(cfg, PpnConfig(head_channels=8), rng), [rng.normal(size=(1, 8, 4, 4))]

    def loss(m, xs, r):
        heat, box = m([None, None, xs[0]])
        t_heat = r.uniform(size=heat.shape)
        pos = r.uniform(size=heat.shape) > 0.6
        valid = r.uniform(size=(1, 4, 4)) > 0.2
        t_box = r.uniform(size=box.shape)
        return ppn_loss(heat, box, t_heat, t_box, pos, valid, 2.0, 1.0, 0.5)

    return _module_check(build, loss)


def _decoder():
    cfg = DecoderConfig(dim=16, heads=2, depth=2, mlp_dim=32, attn_downsample=2, upscale_dim=4)

    def build(rng):
        dec = MaskDecoder(8, 4, cfg, rng)
        # start from a non-zero read-out so every branch carries gradient
        last = dec.hyper.layers[len(dec.hyper.layers) - 1]
        last.weight.data[:] = rng.normal(0, 0.3, size=last.weight.shape)
        enc = PromptEncoder(16, 64, rng)
        dec.enc = enc
        return dec, [rng.normal(size=(1, 8, 4, 4)), rng.normal(size=(1, 4, 16, 16))]

    prompts = [Point(20.0, 30.0), Point(41.5, 9.0)]
    boxes = [Box(4.0, 6.0, 40.0, 50.0), Box(10.0, 12.0, 60.0, 33.0)]

    def loss(m, xs, r):
        state = m.image_tokens(xs[0], xs[1])
        total = None
        for batch in (prompts, boxes):
            sparse = m.enc(batch, 64)
            logits, iou = m(state, sparse, prompt_raster(batch, 64, 4, 4), prompt_raster(batch, 64, 16, 16))
            term = _weighted(logits, r) + _weighted(iou, r)
            total = term if total is None else total + term
        return total

    return _module_check(build, loss, max_coords=3)


def _loss_check(kind: str):
    def check(seed: int) -> float:
        rng = np.random.default_rng(seed)
        shape = (6, 6)
        gt = rng.uniform(size=shape) > 0.5
        valid = rng.uniform(size=shape) > 0.2
        z = Tensor(_away_from_zero(rng, shape, 0.05))
        if kind == "focal":
            return finite_diff_check_many(lambda ts: focal_loss(ts[0], gt, valid=valid), [z], H)
        if kind == "dice":
            return finite_diff_check_many(lambda ts: dice_loss(ops.sigmoid(ts[0]), gt), [z], H)
        if kind == "iou_mse":
            s = Tensor(rng.uniform(0.1, 0.9, size=()))
            return finite_diff_check_many(lambda ts: iou_mse(ts[0], 0.3), [s], H)
        if kind == "mask_loss":
            s = Tensor(rng.uniform(0.1, 0.9, size=()))
            return finite_diff_check_many(lambda ts: mask_loss(ts[0], ts[1], gt, valid=valid), [z, s], H)
        if kind == "hard_mining_mse":
            pred = Tensor(rng.uniform(size=(2, 3, 5, 5)))
            tgt = rng.uniform(size=(2, 3, 5, 5))
            pos = rng.uniform(size=(2, 3, 5, 5)) > 0.7
            val = rng.uniform(size=(2, 5, 5)) > 0.2
            return finite_diff_check_many(lambda ts: hard_mining_mse(ts[0], tgt, pos, val, 0.3), [pred], H)
        if kind == "smooth_l1_box":
            pred = Tensor(rng.uniform(0, 3, size=(4, 5, 5)))
            tgt = rng.uniform(0, 3, size=(4, 5, 5))
            pos = rng.uniform(size=(5, 5)) > 0.4
            return finite_diff_check_many(lambda ts: smooth_l1_box(ts[0], tgt, pos), [pred], H)
        if kind == "ppn_loss":
            heat = Tensor(rng.uniform(size=(3, 5, 5)))
            box = Tensor(rng.uniform(0, 2, size=(4, 5, 5)))
            tgt = rng.uniform(size=(3, 5, 5))
            pos = rng.uniform(size=(3, 5, 5)) > 0.7
            val = rng.uniform(size=(5, 5)) > 0.2
            tb = rng.uniform(0, 2, size=(4, 5, 5))
            return finite_diff_check_many(lambda ts: ppn_loss(ts[0], ts[1], tgt, tb, pos, val), [heat, box], H)
        if kind == "total_loss":
            heat = Tensor(rng.uniform(size=(3, 4, 4)))
            box = Tensor(rng.uniform(0, 2, size=(4, 4, 4)))
            tgt = rng.uniform(size=(3, 4, 4))
            pos = rng.uniform(size=(3, 4, 4)) > 0.7
            val = np.ones((4, 4), bool)
            tb = rng.uniform(0, 2, size=(4, 4, 4))
            s = Tensor(rng.uniform(0.1, 0.9, size=()))

            def f(ts):
                return total_loss(ppn_loss(ts[0], ts[1], tgt, tb, pos, val), mask_loss(ts[2], ts[3], gt))
            return finite_diff_check_many(f, [heat, box, z, s], H)
        raise KeyError(kind)
    return check


def _conv(stride=1, padding=0, groups=1, cin=4, cout=4, k=3):
    def f(x, w, b):
        return ops.conv2d(x, w, b, stride, padding, groups)
    return _op(f, (2, cin, 6, 6), (cout, cin // groups, k, k), (cout,))


def _gn(x, g, b):
    return ops.group_norm(x, 2, g, b)


CHECKS: Dict[str, Callable[[int], float]] = {
    "add": _op(ops.add, (3, 4), (4,)),
    "sub": _op(ops.sub, (3, 4), (3, 1)),
    "mul": _op(ops.mul, (3, 4), (3, 4)),
    "div": _op(ops.div, (3, 4), (3, 4), nonzero=True),
    "power": _op(lambda x: ops.power(x, 3), (3, 4)),
    "exp": _op(ops.exp, (3, 4)),
    "log": _op(ops.log, (3, 4), positive=True),
    "sqrt": _op(ops.sqrt, (3, 4), positive=True),
    "abs": _op(ops.abs, (3, 4), nonzero=True),
    "relu": _op(ops.relu, (3, 4), nonzero=True),
    "sigmoid": _op(ops.sigmoid, (3, 4)),
    "softplus": _op(ops.softplus, (3, 4)),
    "tanh": _op(ops.tanh, (3, 4)),
    "gelu": _op(ops.gelu, (3, 4)),
    "where": _op(lambda a, b: ops.where(np.arange(12).reshape(3, 4) % 3 == 0, a, b), (3, 4), (3, 4)),
    "sum": _op(lambda x: ops.sum(x, axis=1, keepdims=True), (3, 4)),
    "mean": _op(lambda x: ops.mean(x, axis=0), (3, 4)),
    "reshape": _op(lambda x: ops.reshape(x, (2, 6)), (3, 4)),
    "transpose": _op(lambda x: ops.transpose(x, (2, 0, 1)), (2, 3, 4)),
    "broadcast_to": _op(lambda x: ops.broadcast_to(x, (3, 2, 4)), (2, 4)),
    "getitem": _op(lambda x: ops.getitem(x, (slice(None), np.array([0, 2, 2]))), (3, 4)),
    "concat": _op(lambda a, b: ops.concat([a, b], axis=1), (2, 3), (2, 2)),
    "stack": _op(lambda a, b: ops.stack([a, b], axis=0), (2, 3), (2, 3)),
    "matmul": _op(ops.matmul, (2, 3, 4), (2, 4, 5)),
    "softmax": _op(lambda x: ops.softmax(x, -1), (3, 5)),
    "group_norm": _op(_gn, (2, 4, 3, 3), (4,), (4,)),
    "layer_norm": _op(ops.layer_norm, (3, 6), (6,), (6,)),
    "conv2d": _conv(padding=1),
    "conv2d_strided": _conv(stride=2, padding=1),
    "conv2d_1x1": _conv(k=1),
    "conv2d_depthwise": _conv(padding=1, groups=4),
    "conv2d_grouped": _conv(padding=1, groups=2, cout=6),
    "avg_pool2d": _op(lambda x: ops.avg_pool2d(x, 3, 1, 1), (1, 2, 5, 5)),
    "avg_pool2d_strided": _op(lambda x: ops.avg_pool2d(x, 2, 2, 0), (1, 2, 6, 6)),
    "upsample_bilinear": _op(lambda x: ops.upsample_bilinear(x, (7, 9)), (1, 2, 3, 4)),
    "litevit_block": _block(False),
    "litevit_block_attention": _block(True),
    "mspm": _mspm(),
    "autoppn_head": _ppn_head(),
    "mask_decoder": _decoder(),
    "focal_loss": _loss_check("focal"),
    "dice_loss": _loss_check("dice"),
    "iou_mse": _loss_check("iou_mse"),
    "mask_loss": _loss_check("mask_loss"),
    "hard_mining_mse": _loss_check("hard_mining_mse"),
    "smooth_l1_box": _loss_check("smooth_l1_box"),
    "ppn_loss": _loss_check("ppn_loss"),
    "total_loss": _loss_check("total_loss"),
}


def run_suite(seeds: Iterable[int] = range(20), names: Optional[List[str]] = None) -> Dict[str, float]:
    """Worst error per check over the given seeds."""
    seeds = list(seeds)
    out = {}
    for name in names or list(CHECKS):
        out[name] = max(CHECKS[name](s) for s in seeds)
    return out
