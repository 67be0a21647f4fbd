"""Average recall over IoU thresholds and prompt-level mean IoU."""
from __future__ import annotations

from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .pipeline import mask_iou_matrix

THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)


def _matched_counts(pred_masks, scores, gt_masks, k: int) -> np.ndarray:
    """Number of gts matched at each threshold using the top-k predictions.

    Predictions are walked by descending score (ties by input order); each
    takes the unmatched gt of highest IoU at or above the threshold.
    """
    counts = np.zeros(len(THRESHOLDS), dtype=np.int64)
    if len(pred_masks) == 0 or len(gt_masks) == 0:
        return counts
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")[:k]
    preds = np.stack([np.asarray(pred_masks[i], bool) for i in order])
    gts = np.stack([np.asarray(g, bool) for g in gt_masks])
    iou = mask_iou_matrix(preds, gts)
    for t_idx, t in enumerate(THRESHOLDS):
        taken = np.zeros(len(gts), dtype=bool)
        for row in iou:
            cand = np.where(~taken & (row >= t - 1e-12), row, -1.0)
            j = int(np.argmax(cand))
            if cand[j] >= 0:
                taken[j] = True
        counts[t_idx] = int(taken.sum())
    return counts


def average_recall(pred_masks: Sequence[np.ndarray], scores: Sequence[float],
                   gt_masks: Sequence[np.ndarray], k: int = 1000) -> float:
    """AR@k for one image: recall averaged over thresholds 0.5:0.05:0.95."""
    if len(gt_masks) == 0:
        raise ValueError("average recall needs at least one ground-truth mask")
    counts = _matched_counts(pred_masks, scores, gt_masks, k)
    return float(np.mean(counts / len(gt_masks)))


def dataset_average_recall(items: Iterable[Tuple[Sequence, Sequence, Sequence]], k: int = 1000) -> float:
    """AR@k pooled over images: matched gts over all gts, per threshold."""
    matched = np.zeros(len(THRESHOLDS), dtype=np.int64)
    total = 0
    for preds, scores, gts in items:
        matched += _matched_counts(preds, scores, gts, k)
        total += len(gts)
    return float(np.mean(matched / total)) if total else 0.0


def miou_at_prompt(pairs: Iterable[Tuple[Sequence[np.ndarray], np.ndarray]]) -> float:
    """Mean over (gt, prompt) pairs of the best IoU among that prompt's predictions."""
    best: List[float] = []
    for preds, gt in pairs:
        if isinstance(preds, np.ndarray) and preds.ndim == np.asarray(gt).ndim:
            preds = [preds]
        if len(preds) == 0:
            best.append(0.0)
            continue
        iou = mask_iou_matrix(np.stack([np.asarray(p, bool) for p in preds]),
                              np.asarray(gt, bool)[None])
        best.append(float(iou.max()))
    return float(np.mean(best)) if best else 0.0
