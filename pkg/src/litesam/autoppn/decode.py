"""Point-NMS and Top-N decoding of heatmaps into prompt proposals."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..groups import NAMES


@dataclass
class Proposal:
    x: float
    y: float
    score: float
    group: str
    box: Optional[Tuple[float, float, float, float]] = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["box"] = list(self.box) if self.box is not None else None
        return d


def _window_max(a: np.ndarray, window: int, axis: int) -> np.ndarray:
    r = window // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, constant_values=-np.inf)
    n = a.shape[axis]
    out = np.take(p, np.arange(0, n), axis=axis)
    for k in range(1, window):
        out = np.maximum(out, np.take(p, np.arange(k, k + n), axis=axis))
    return out


def point_nms(heat: np.ndarray, window: int = 3) -> np.ndarray:
    """Zero every pixel that is not the maximum of its window x window neighborhood.

    Works per channel on (..., H, W). Ties keep all maximal pixels.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("NMS window must be an odd integer >= 1")
    heat = np.asarray(heat)
    if window == 1:
        return heat.copy()
    local = _window_max(_window_max(heat, window, heat.ndim - 2), window, heat.ndim - 1)
    return np.where(heat == local, heat, 0).astype(heat.dtype)


def topn_decode(suppressed: np.ndarray, box_reg: Optional[np.ndarray], n: int = 256,
                head_stride: int = 16, image_size: Optional[Tuple[int, int]] = None) -> List[Proposal]:
    """Take the ``n`` highest positive survivors across all channels.

    Ties order by (channel, row, col). Points sit at pixel centers in image
    coordinates; boxes come from the side distances at the same pixel.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    c, h, w = suppressed.shape
    H, W = image_size or (h * head_stride, w * head_stride)
    ch, rows, cols = np.nonzero(suppressed > 0)
    scores = suppressed[ch, rows, cols]
    order = np.lexsort((cols, rows, ch, -scores))[:n]
    out = []
    for k in order:
        g, r, col = int(ch[k]), int(rows[k]), int(cols[k])
        x = (col + 0.5) * head_stride
        y = (r + 0.5) * head_stride
        box = None
        if box_reg is not None:
            l, t, rr, b = (float(v) for v in box_reg[:, r, col])
            box = (x - l * W, y - t * H, x + rr * W, y + b * H)
        out.append(Proposal(float(x), float(y), float(scores[k]), NAMES[g], box))
    return out
