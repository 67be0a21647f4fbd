from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

Box = Tuple[int, int, int, int]


def tight_box(mask: np.ndarray) -> Box:
    """Inclusive pixel bounds (x0, y0, x1, y1) of a non-empty mask."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask has no bounding box")
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


@dataclass
class AnnotatedImage:
    image_id: int
    width: int
    height: int
    masks: List[np.ndarray]
    image: Optional[np.ndarray] = None  # H x W x 3 uint8
    unlabeled: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    boxes: List[Box] = field(init=False)

    def __post_init__(self):
        masks = []
        for i, m in enumerate(self.masks):
            m = np.asarray(m, dtype=bool)
            if m.shape != (self.height, self.width):
                raise ValueError(f"mask {i} has shape {m.shape}, expected {(self.height, self.width)}")
            masks.append(m)
        self.masks = masks
        self.boxes = [tight_box(m) for m in masks]
        if self.unlabeled is not None:
            self.unlabeled = np.asarray(self.unlabeled, dtype=bool)
            if self.unlabeled.shape != (self.height, self.width):
                raise ValueError("unlabeled raster does not match image size")

    @property
    def areas(self) -> List[int]:
        return [int(m.sum()) for m in self.masks]
