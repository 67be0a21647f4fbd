"""Sparse prompt encoding: sinusoidal position code plus a learned type vector."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..tensor import Module, Parameter, Tensor, ops

FG_POINT, BG_POINT, BOX_TL, BOX_BR = range(4)
MAX_FREQ = 64.0


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    label: int = 1


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float


@dataclass(frozen=True)
class PointBox:
    """A point prompt accompanied by a box, as decoded from AutoPPN."""

    point: Point
    box: Box


Prompt = Union[Point, Box, PointBox]


def prompt_len(prompt: Prompt) -> int:
    return {Point: 1, Box: 2, PointBox: 3}[type(prompt)]


def sinusoidal_pe(xy: np.ndarray, dim: int) -> np.ndarray:
    """Encode normalized (x, y) in [0, 1] into ``dim`` features.

    Layout per coordinate: sin then cos at ``dim // 4`` geometric frequencies
    from pi to pi * MAX_FREQ.
    """
    if dim % 4:
        raise ValueError("positional encoding width must be divisible by 4")
    f = dim // 4
    freqs = np.pi * MAX_FREQ ** (np.arange(f) / max(1, f - 1))
    xy = np.asarray(xy, dtype=np.float64)
    ax = xy[..., 0:1] * freqs
    ay = xy[..., 1:2] * freqs
    return np.concatenate([np.sin(ax), np.cos(ax), np.sin(ay), np.cos(ay)], axis=-1)


def dense_pe(h: int, w: int, dim: int) -> np.ndarray:
    """Positional code of every cell center, shaped (h * w, dim) in row-major order."""
    ys, xs = np.mgrid[0:h, 0:w]
    xy = np.stack([(xs + 0.5) / w, (ys + 0.5) / h], axis=-1).reshape(-1, 2)
    return sinusoidal_pe(xy, dim)


def _axis_cover(lo: float, hi: float, n: int, stride: float) -> np.ndarray:
    edges = np.arange(n + 1) * stride
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0, None) / stride


def prompt_raster(prompts: Sequence[Prompt], size: int, h: int, w: int) -> np.ndarray:
    """Dense (B, 2, h, w) prompt maps on an h x w cell grid over a size x size image.

    Channel 0 is a Gaussian blob (sigma = one cell) at the point, signed by its
    label; channel 1 is the fraction of each cell covered by the box.
    """
    sy, sx = size / h, size / w
    out = np.zeros((len(prompts), 2, h, w), dtype=np.float64)
    cy = (np.arange(h) + 0.5) * sy
    cx = (np.arange(w) + 0.5) * sx
    for i, p in enumerate(prompts):
        point = p.point if isinstance(p, PointBox) else p if isinstance(p, Point) else None
        box = p.box if isinstance(p, PointBox) else p if isinstance(p, Box) else None
        if point is not None:
            g = np.exp(-0.5 * (((cy[:, None] - point.y) / sy) ** 2 + ((cx[None, :] - point.x) / sx) ** 2))
            out[i, 0] = g if point.label else -g
        if box is not None:
            out[i, 1] = np.outer(_axis_cover(box.y0, box.y1, h, sy), _axis_cover(box.x0, box.x1, w, sx))
    return out


class PromptEncoder(Module):
    def __init__(self, dim: int, input_size: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        self.input_size = input_size
        self.type_embed = Parameter(rng.normal(0, 1.0, size=(4, dim)))

    def _coords(self, prompt: Prompt, s: int):
        if isinstance(prompt, Point):
            pts, types = [(prompt.x, prompt.y)], [FG_POINT if prompt.label else BG_POINT]
        elif isinstance(prompt, Box):
            pts, types = [(prompt.x0, prompt.y0), (prompt.x1, prompt.y1)], [BOX_TL, BOX_BR]
        elif isinstance(prompt, PointBox):
            p, b = prompt.point, prompt.box
            pts = [(p.x, p.y), (b.x0, b.y0), (b.x1, b.y1)]
            types = [FG_POINT if p.label else BG_POINT, BOX_TL, BOX_BR]
        else:
            raise PromptError(f"unsupported prompt type {type(prompt).__name__}")
        for x, y in pts:
            if not (0 <= x <= s and 0 <= y <= s):
                raise PromptError(f"prompt coordinate ({x}, {y}) outside the {s}x{s} image")
        return np.asarray(pts, dtype=np.float64) / s, types

    def forward(self, prompts: Sequence[Prompt], size: Optional[int] = None) -> Tensor:
        """Encode prompts of equal token count into a (B, K, dim) tensor.

        ``size`` is the side of the (square) image the coordinates refer to.
        """
        size = size or self.input_size
        coords, types = [], []
        for p in prompts:
            xy, t = self._coords(p, size)
            coords.append(xy)
            types.append(t)
        if len({len(t) for t in types}) != 1:
            raise PromptError("prompts in one batch must have the same token count")
        pe = sinusoidal_pe(np.stack(coords), self.dim).astype(self.type_embed.dtype)
        type_vecs = ops.getitem(self.type_embed, np.asarray(types))
        return Tensor(pe) + type_vecs


def encode_prompt(encoder: PromptEncoder, prompt: Prompt, size: Optional[int] = None) -> Tensor:
    """Single prompt -> (K, dim) embedding."""
    return ops.reshape(encoder([prompt], size), (prompt_len(prompt), encoder.dim))


def clip_box(box: Tuple[float, float, float, float], size: int) -> Box:
    x0, y0, x1, y1 = (min(max(v, 0.0), float(size)) for v in box)
    return Box(x0, y0, x1, y1)


def as_prompt(spec: dict) -> Prompt:
    """Build a prompt from a JSON-like dict with ``point``/``box`` keys."""
    point = spec.get("point")
    box = spec.get("box")
    p = Point(float(point[0]), float(point[1]), int(spec.get("label", 1))) if point is not None else None
    b = Box(*(float(v) for v in box)) if box is not None else None
    if p and b:
        return PointBox(p, b)
    if p or b:
        return p or b
    raise PromptError("prompt needs a point or a box")
