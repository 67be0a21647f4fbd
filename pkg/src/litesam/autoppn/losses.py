"""Prompt-proposal losses: hard-mining MSE on point heat, Smooth-L1 on boxes.

Pixels outside ``valid_mask`` are dropped by gathering, never by multiplying
with zero, so predictions there cannot influence any loss bit.
"""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor, ops


def _as_batched(pred: Tensor, *arrays):
    """Promote (C, H, W) inputs to (1, C, H, W); valid masks to (N, H, W)."""
    if pred.ndim == 3:
        pred = ops.reshape(pred, (1,) + pred.shape)
        arrays = tuple(a[None] for a in arrays)
    return (pred,) + arrays


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype))


def hard_mining_mse(pred_heat: Tensor, target_heat: np.ndarray, pos_mask: np.ndarray,
                    valid_mask: np.ndarray, mining_fraction: float = 0.1,
                    return_stats: bool = False):
    """Mean squared error over all positives plus the hardest negatives.

    For each (sample, channel) the loss averages squared errors over every
    positive valid pixel and the top ``floor(fraction * #neg)`` (at least one)
    valid negatives ranked by current error. Channel losses are averaged over
    the (sample, channel) pairs that have any valid pixel. The ranking is not
    differentiated.
    """
    if not 0 < mining_fraction <= 1:
        raise ValueError("mining_fraction must lie in (0, 1]")
    target_heat = np.asarray(target_heat)
    pos_mask = np.asarray(pos_mask, dtype=bool)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if pred_heat.shape != target_heat.shape or pred_heat.shape != pos_mask.shape:
        raise ValueError(f"shape mismatch: pred {pred_heat.shape}, target {target_heat.shape}, "
                         f"pos {pos_mask.shape}")
    pred, target, pos, valid = _as_batched(pred_heat, target_heat, pos_mask, valid_mask)
    n, c = pred.shape[:2]
    if valid.shape != (n,) + pred.shape[2:]:
        raise ValueError(f"valid mask shape {valid.shape} does not match {pred.shape}")

    err = ops.power(pred - Tensor(target.astype(pred.dtype)), 2)
    err_np = err.data
    select = np.zeros(pred.shape, dtype=bool)
    weight = np.zeros(pred.shape, dtype=pred.dtype)
    groups = 0
    for i in range(n):
        v = valid[i]
        if not v.any():
            continue
        for ch in range(c):
            p = pos[i, ch] & v
            neg = ~pos[i, ch] & v
            sel = p.copy()
            nneg = int(neg.sum())
            if nneg:
                k = max(1, int(np.floor(mining_fraction * nneg)))
                flat_idx = np.flatnonzero(neg)
                e = err_np[i, ch].reshape(-1)[flat_idx]
                # stable: ties resolve to the earlier row-major pixel
                hardest = flat_idx[np.argsort(-e, kind="stable")[:k]]
                sel.reshape(-1)[hardest] = True
            count = int(sel.sum())
            select[i, ch] = sel
            weight[i, ch][sel] = 1.0 / count
            groups += 1
    if groups == 0:
        loss = _zero(pred)
    else:
        picked = ops.getitem(err, select)
        loss = ops.sum(picked * Tensor(weight[select])) * (1.0 / groups)
    return (loss, {"groups": groups, "empty": groups == 0}) if return_stats else loss


def smooth_l1(diff: Tensor) -> Tensor:
    ad = np.abs(diff.data)
    return ops.where(ad < 1.0, ops.power(diff, 2) * 0.5, ops.abs(diff) - 0.5)


def smooth_l1_box(pred_box: Tensor, target_box: np.ndarray, pos_mask: np.ndarray,
                  return_stats: bool = False):
    """Smooth-L1 averaged over the four box channels at positive pixels.

    ``pos_mask`` is (H, W) or (N, H, W) and should already exclude invalid pixels.
    """
    target_box = np.asarray(target_box)
    if pred_box.shape != target_box.shape:
        raise ValueError(f"shape mismatch: {pred_box.shape} vs {target_box.shape}")
    pred, target, pos = _as_batched(pred_box, target_box, np.asarray(pos_mask, dtype=bool))
    sel = np.broadcast_to(pos[:, None], pred.shape)
    count = int(sel.sum())
    if count == 0:
        loss = _zero(pred)
    else:
        diff = ops.getitem(pred, sel) - Tensor(target[sel].astype(pred.dtype))
        loss = ops.mean(smooth_l1(diff))
    return (loss, {"count": count, "empty": count == 0}) if return_stats else loss


def ppn_loss(pred_heat: Tensor, pred_box: Tensor, point_heat: np.ndarray, box_reg: np.ndarray,
             pos_mask: np.ndarray, valid_mask: np.ndarray, w_point: float = 2.0,
             w_box: float = 1.0, mining_fraction: float = 0.1) -> Tensor:
    """Weighted sum of the point and box terms; defaults give the 2:1 ratio."""
    l_point = hard_mining_mse(pred_heat, point_heat, pos_mask, valid_mask, mining_fraction)
    box_pos = np.asarray(pos_mask, dtype=bool).any(axis=-3) & np.asarray(valid_mask, dtype=bool)
    l_box = smooth_l1_box(pred_box, box_reg, box_pos)
    return l_point * w_point + l_box * w_box


def combine_ppn(l_point: Tensor, l_box: Tensor, w_point: float = 2.0, w_box: float = 1.0) -> Tensor:
    return l_point * w_point + l_box * w_box
