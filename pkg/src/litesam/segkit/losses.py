"""Mask losses: focal, dice and IoU regression, and their weighted sums."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..config import LossWeights
from ..tensor import Tensor, ops

ALPHA = 0.25
GAMMA = 2.0


def _select(t: Tensor, valid: Optional[np.ndarray]) -> Tensor:
    if valid is None:
        return ops.reshape(t, (-1,))
    return ops.getitem(t, np.broadcast_to(np.asarray(valid, dtype=bool), t.shape))


def focal_loss(logits: Tensor, gt: np.ndarray, alpha: float = ALPHA, gamma: float = GAMMA,
               valid: Optional[np.ndarray] = None) -> Tensor:
    """Binary focal loss, mean over (valid) pixels; log-probs via softplus for stability."""
    gt = np.asarray(gt, dtype=bool)
    if logits.shape != gt.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {gt.shape}")
    z = _select(logits, valid)
    y = gt if valid is None else gt[np.broadcast_to(np.asarray(valid, dtype=bool), gt.shape)]
    y = y.reshape(-1)
    if y.size == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    sign = Tensor(np.where(y, 1.0, -1.0).astype(logits.dtype))
    # -log p_t = softplus(-s z), p_t = sigmoid(s z)
    nll = ops.softplus(-(z * sign))
    pt = ops.sigmoid(z * sign)
    a = Tensor(np.where(y, alpha, 1 - alpha).astype(logits.dtype))
    return ops.mean(a * ops.power(1.0 - pt, gamma) * nll)


def dice_loss(probs: Tensor, gt: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    """1 - (2|P∩G| + 1) / (|P| + |G| + 1) with soft P."""
    gt = np.asarray(gt, dtype=bool)
    if probs.shape != gt.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {gt.shape}")
    p = _select(probs, valid)
    g = gt.reshape(-1) if valid is None else gt[np.broadcast_to(np.asarray(valid, dtype=bool), gt.shape)]
    gt_t = Tensor(g.astype(probs.dtype))
    inter = ops.sum(p * gt_t)
    return 1.0 - (inter * 2.0 + 1.0) / (ops.sum(p) + float(g.sum()) + 1.0)


def binary_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    union = int((pred | gt).sum())
    if union == 0:
        return 1.0
    return int((pred & gt).sum()) / union


def iou_mse(iou_pred: Tensor, actual_iou: float) -> Tensor:
    return ops.power(iou_pred - float(actual_iou), 2)


def combine_mask(l_focal, l_dice, l_iou, w: LossWeights = None):
    w = w or LossWeights()
    return l_focal * w.focal + l_dice * w.dice + l_iou * w.iou


def mask_loss(logits: Tensor, iou_pred: Tensor, gt: np.ndarray, w: LossWeights = None,
              valid: Optional[np.ndarray] = None, return_parts: bool = False):
    """Weighted focal + dice + IoU-MSE for one prompt's prediction.

    The IoU target is measured between the thresholded prediction and ``gt``
    and is treated as a constant.
    """
    l_f = focal_loss(logits, gt, valid=valid)
    l_d = dice_loss(ops.sigmoid(logits), gt, valid=valid)
    pred_bin = logits.data > 0
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        actual = binary_iou(pred_bin & v, np.asarray(gt, dtype=bool) & v)
    else:
        actual = binary_iou(pred_bin, gt)
    l_i = iou_mse(iou_pred, actual)
    total = combine_mask(l_f, l_d, l_i, w)
    if return_parts:
        return total, {"focal": l_f.item(), "dice": l_d.item(), "iou": l_i.item(), "target_iou": actual}
    return total


def total_loss(ppn, mask):
    """Unweighted sum of the proposal and mask losses."""
    return ppn + mask
