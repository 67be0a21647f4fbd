"""SegAny and SegEvery on top of :class:`Predictor`."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..autoppn import Proposal, point_nms, topn_decode
from ..config import SegEveryConfig
from .decoder import MaskPrediction
from .model import Predictor
from .prompt import Point, PointBox, Prompt, clip_box


def seg_any(predictor: Predictor, prompt: Prompt) -> MaskPrediction:
    return predictor.predict([prompt])[0]


def grid_prompts(g: int, size: int) -> List[Point]:
    """g x g foreground points at cell centers, row-major."""
    c = (np.arange(g) + 0.5) / g * size
    return [Point(float(x), float(y)) for y in c for x in c]


def random_prompts(n: int, size: int, rng: np.random.Generator) -> List[Point]:
    xy = rng.uniform(0, size, size=(n, 2))
    return [Point(float(x), float(y)) for x, y in xy]


def autoppn_proposals(predictor: Predictor, n: int, window: int = 3) -> List[Proposal]:
    heat, box = predictor.ppn_maps()
    side = predictor.side
    stride = side // heat.shape[-1]
    return topn_decode(point_nms(heat, window), box, n, stride, (side, side))


def proposal_prompt(p: Proposal, size: int, with_box: bool = True) -> Prompt:
    point = Point(p.x, p.y)
    if with_box and p.box is not None:
        return PointBox(point, clip_box(p.box, size))
    return point


def mask_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two stacks of binary masks (n, ...) and (m, ...).

    Intersections are counted with a float32 product, exact while the pixel
    count stays below 2**24.
    """
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    dt = np.float32 if a.shape[1] < (1 << 24) else np.float64
    inter = a.astype(dt) @ b.astype(dt).T
    area_a = a.sum(1, dtype=np.int64)[:, None]
    area_b = b.sum(1, dtype=np.int64)[None, :]
    union = area_a + area_b - inter.astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.maximum(union, 1), 0.0)


def dedup_masks(masks: np.ndarray, scores: Sequence[float], iou_thr: float = 0.7) -> List[int]:
    """Greedy suppression: walk by descending score, drop a mask whose IoU with
    any kept mask exceeds ``iou_thr``. Returns kept input indices in walk order.

    Equal scores are ordered by the mask bits, so permuting tied inputs keeps
    the same surviving set.
    """
    n = len(masks)
    if n == 0:
        return []
    packed = [np.packbits(m.reshape(-1)).tobytes() for m in masks]
    order = sorted(range(n), key=lambda i: (-float(scores[i]), packed[i], i))
    iou = mask_iou_matrix(masks, masks)
    kept: List[int] = []
    for i in order:
        if kept and iou[i, kept].max() > iou_thr:
            continue
        kept.append(i)
    return kept


@dataclass
class SegEveryResult:
    masks: List[np.ndarray]  # binary, original image frame
    scores: List[float]
    prompts: List[dict]
    decoder_calls: int
    num_candidates: int
    wall_time_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        """JSON-ready summary; wall time is reported separately to keep this reproducible."""
        return {
            "decoder_calls": self.decoder_calls,
            "num_candidates": self.num_candidates,
            "num_masks": len(self.masks),
            "proposals": self.prompts,
            "scores": [round(s, 6) for s in self.scores],
        }


def _prompt_json(p: Prompt, proposal: Optional[Proposal]) -> dict:
    point = p.point if isinstance(p, PointBox) else p
    d = {"point": [round(point.x, 4), round(point.y, 4)]}
    if isinstance(p, PointBox):
        b = p.box
        d["box"] = [round(v, 4) for v in (b.x0, b.y0, b.x1, b.y1)]
    if proposal is not None:
        d["score"] = round(proposal.score, 6)
        d["group"] = proposal.group
    return d


def seg_every(predictor: Predictor, cfg: Optional[SegEveryConfig] = None, n: int = 256,
              nms_window: int = 3, prompts: Optional[List[Prompt]] = None) -> SegEveryResult:
    """Segment everything on the predictor's current image.

    ``prompts`` overrides the sampler (used for baselines such as random points).
    """
    cfg = cfg or SegEveryConfig()
    t0 = time.perf_counter()
    side = predictor.side
    proposals: List[Optional[Proposal]]
    if prompts is not None:
        proposals = [None] * len(prompts)
    elif cfg.sampler == "grid":
        prompts = grid_prompts(cfg.grid, side)
        proposals = [None] * len(prompts)
    else:
        proposals = autoppn_proposals(predictor, n, nms_window)
        prompts = [proposal_prompt(p, side, cfg.prompt_mode == "point_box") for p in proposals]

    before = predictor.decoder_calls
    preds = predictor.predict(prompts, model_frame=True)
    calls = predictor.decoder_calls - before

    low = np.stack([p.mask for p in preds]) if preds else np.zeros((0,) + predictor.mask_size, bool)
    nonempty = [i for i in range(len(preds)) if low[i].any()]
    kept_local = dedup_masks(low[nonempty], [preds[i].iou_pred for i in nonempty], cfg.dedup_iou)
    kept = [nonempty[i] for i in kept_local]
    sx, sy = predictor.scale
    masks, scores, meta = [], [], []
    for i in kept:
        masks.append(predictor.full_mask(preds[i]))
        scores.append(preds[i].iou_pred)
        d = _prompt_json(prompts[i], proposals[i])
        d["point"] = [round(d["point"][0] * sx, 4), round(d["point"][1] * sy, 4)]
        if "box" in d:
            d["box"] = [round(v * s, 4) for v, s in zip(d["box"], (sx, sy, sx, sy))]
        meta.append(d)
    return SegEveryResult(masks, scores, meta, calls, len(prompts),
                          (time.perf_counter() - t0) * 1000.0)
