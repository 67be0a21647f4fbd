"""Point-confidence and box-regression targets from instance masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..dataio.annotated import AnnotatedImage
from ..groups import group_of_box


class TargetError(ValueError):
    pass


def _column_sq_dist(fg: np.ndarray) -> np.ndarray:
    """Squared vertical distance to the nearest background pixel in each column."""
    h, w = fg.shape
    big = h + w + 1
    up = np.empty((h, w), dtype=np.int64)
    prev = np.full(w, big, dtype=np.int64)
    for i in range(h):
        prev = np.where(fg[i], prev + 1, 0)
        up[i] = prev
    down = np.empty_like(up)
    prev = np.full(w, big, dtype=np.int64)
    for i in range(h - 1, -1, -1):
        prev = np.where(fg[i], prev + 1, 0)
        down[i] = prev
    d = np.minimum(up, down)
    return d * d


def squared_edt(fg: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest background pixel.

    Columns are scanned first; each row then takes the min-plus combination
    ``min_k g[k] + (j - k)^2``. Integer arithmetic throughout.
    """
    g = _column_sq_dist(fg)
    h, w = fg.shape
    cols = np.arange(w, dtype=np.int64)
    offs = (cols[:, None] - cols[None, :]) ** 2  # (j, k)
    out = np.empty_like(g)
    chunk = max(1, (1 << 22) // max(1, w * w))
    for r0 in range(0, h, chunk):
        block = g[r0 : r0 + chunk]
        out[r0 : r0 + chunk] = (block[:, None, :] + offs[None]).min(axis=2)
    return out


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Distance of each foreground pixel to the nearest background or off-image pixel,
    divided by the mask's largest such distance. Background stays 0.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise TargetError("distance transform of an empty mask")
    h, w = mask.shape
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1, x0, x1 = rows[0], rows[-1], cols[0], cols[-1]
    # everything outside the box is background, so a one-pixel ring suffices
    crop = np.zeros((y1 - y0 + 3, x1 - x0 + 3), dtype=bool)
    crop[1:-1, 1:-1] = mask[y0 : y1 + 1, x0 : x1 + 1]
    d2 = squared_edt(crop)[1:-1, 1:-1]
    dist = np.sqrt(d2.astype(np.float64))
    out = np.zeros((h, w), dtype=np.float64)
    out[y0 : y1 + 1, x0 : x1 + 1] = dist / dist.max()
    return out


@dataclass
class PpnTargets:
    point_heat: np.ndarray  # (3, Hf, Wf) in [0, 1]; channels large/medium/small
    box_reg: np.ndarray  # (4, Hf, Wf) l, t, r, b over image width/height
    pos_mask: np.ndarray  # (3, Hf, Wf) bool
    valid_mask: np.ndarray  # (Hf, Wf) bool
    owner: np.ndarray  # (Hf, Wf) int, index of the assigned mask or -1

    @property
    def any_pos(self) -> np.ndarray:
        return self.pos_mask.any(axis=0)


def downsample_heat(dt: np.ndarray, stride: int) -> np.ndarray:
    """Area-mean pooling to feature resolution, rescaled so the peak is 1 again."""
    h, w = dt.shape
    pooled = dt.reshape(h // stride, stride, w // stride, stride).mean(axis=(1, 3))
    peak = pooled.max()
    return pooled / peak if peak > 0 else pooled


def build_point_targets(scene: AnnotatedImage, feat_size: Tuple[int, int]) -> PpnTargets:
    hf, wf = feat_size
    H, W = scene.height, scene.width
    if H % hf or W % wf or H // hf != W // wf:
        raise TargetError(f"feature size {feat_size} does not evenly divide image size {(H, W)}")
    stride = H // hf

    heat = np.zeros((3, hf, wf), dtype=np.float64)
    box = np.zeros((4, hf, wf), dtype=np.float64)
    pos = np.zeros((3, hf, wf), dtype=bool)
    owner = np.full((hf, wf), -1, dtype=np.int64)
    owner_area = np.full((hf, wf), np.iinfo(np.int64).max, dtype=np.int64)
    cy = (np.arange(hf) + 0.5)[:, None] * stride
    cx = (np.arange(wf) + 0.5)[None, :] * stride

    areas = scene.areas
    cell_heat = {}
    for idx, mask in enumerate(scene.masks):
        down = downsample_heat(distance_transform(mask), stride)
        cell_heat[idx] = down
        # strict '<' keeps the earlier mask on equal areas
        take = (down > 0) & (areas[idx] < owner_area)
        owner[take] = idx
        owner_area[take] = areas[idx]

    for idx, mask in enumerate(scene.masks):
        cells = owner == idx
        if not cells.any():
            continue
        g = group_of_box(scene.boxes[idx], W, H)
        x0, y0, x1, y1 = scene.boxes[idx]
        heat[g][cells] = cell_heat[idx][cells]
        pos[g][cells] = True
        sides = (
            np.broadcast_to((cx - x0) / W, (hf, wf)),
            np.broadcast_to((cy - y0) / H, (hf, wf)),
            np.broadcast_to((x1 + 1 - cx) / W, (hf, wf)),
            np.broadcast_to((y1 + 1 - cy) / H, (hf, wf)),
        )
        for c, side in enumerate(sides):
            box[c][cells] = np.maximum(side[cells], 0.0)

    valid = np.ones((hf, wf), dtype=bool)
    if scene.unlabeled is not None:
        touched = scene.unlabeled.reshape(hf, stride, wf, stride).any(axis=(1, 3))
        valid &= ~touched
    return PpnTargets(heat, box, pos, valid, owner)
