"""Deterministic synthetic scenes standing in for SA-1B images."""
from __future__ import annotations

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..groups import LARGE, MEDIUM, SMALL, group_of_box
from .annotated import AnnotatedImage, tight_box

# target ranges for the larger relative side, per group
_RATIO_RANGE = {LARGE: (0.26, 0.5), MEDIUM: (0.08, 0.22), SMALL: (0.025, 0.05)}


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    size: int = Field(128, ge=16)
    min_count: int = Field(3, ge=1)
    max_count: int = Field(8, ge=1)
    kinds: List[Literal["disc", "rectangle", "ring"]] = Field(
        default_factory=lambda: ["disc", "rectangle", "ring"])
    overlap: Literal["random", "nested", "disjoint"] = "random"
    unlabeled: bool = False

    @model_validator(mode="after")
    def _counts(self):
        if self.max_count < self.min_count:
            raise ValueError("max_count < min_count")
        return self


def _shape_mask(kind: str, extent: float, size: int, rng, center=None) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = extent / 2
    if center is None:
        cx = rng.uniform(r, size - r)
        cy = rng.uniform(r, size - r)
    else:
        cx, cy = center
    if kind == "rectangle":
        other = extent * rng.uniform(0.4, 1.0)
        w, h = (extent, other) if rng.random() < 0.5 else (other, extent)
        return (np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    disc = d2 <= r * r
    if kind == "ring" and extent >= 12:
        inner = r * rng.uniform(0.4, 0.65)
        return disc & (d2 > inner * inner)
    return disc


def _sample_object(group: int, spec: SceneSpec, rng, kinds, center=None, inside=None) -> Optional[np.ndarray]:
    lo, hi = _RATIO_RANGE[group]
    for _ in range(60):
        extent = rng.uniform(lo, hi) * spec.size
        kind = kinds[rng.integers(len(kinds))]
        if group == SMALL and kind == "ring":
            kind = "disc"
        c = center
        if inside is not None:
            ys, xs = np.nonzero(inside)
            k = rng.integers(len(ys))
            c = (xs[k] + 0.5, ys[k] + 0.5)
        m = _shape_mask(kind, extent, spec.size, rng, c)
        if not m.any():
            continue
        if group_of_box(tight_box(m), spec.size, spec.size) != group:
            continue
        if inside is not None and (m & ~inside).any():
            continue
        return m
    return None


def _palette_color(rng, avoid: List[np.ndarray]) -> np.ndarray:
    best, best_d = None, -1.0
    for _ in range(16):
        c = rng.integers(0, 256, size=3).astype(np.float64)
        d = min((np.abs(c - a).sum() for a in avoid), default=1e9)
        if d > best_d:
            best, best_d = c, d
    return best


def make_scene(spec: SceneSpec) -> AnnotatedImage:
    """Render a scene; identical specs give bitwise-identical results.

    With three or more objects the first three cover the large, medium and
    small groups. The "nested" policy places the medium object fully inside
    the large one.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    count = int(rng.integers(spec.min_count, spec.max_count + 1))
    groups = [LARGE, MEDIUM, SMALL][:count] if count >= 3 else []
    while len(groups) < count:
        groups.append(int(rng.choice([LARGE, MEDIUM, SMALL], p=[0.2, 0.45, 0.35])))
    solid = [k for k in spec.kinds if k != "ring"] or ["disc"]

    masks: List[np.ndarray] = []
    for i, g in enumerate(groups):
        inside = None
        kinds = spec.kinds
        if spec.overlap == "nested" and i == 1 and masks:
            inside = masks[0]
        if spec.overlap == "nested" and i == 0:
            kinds = solid
        m = None
        for _ in range(20):
            m = _sample_object(g, spec, rng, kinds, inside=inside)
            if m is None or spec.overlap != "disjoint":
                break
            if not any((m & other).any() for other in masks):
                break
            m = None
        if m is not None:
            masks.append(m)

    overlaps = [(i, j) for i in range(len(masks)) for j in range(i + 1, len(masks))
                if (masks[i] & masks[j]).any()]

    # background: smooth gradient plus noise; objects painted largest first
    base = rng.integers(40, 216, size=3).astype(np.float64)
    tilt = rng.normal(0, 20, size=(2, 3))
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
    used = [base]
    for idx in sorted(range(len(masks)), key=lambda k: -int(masks[k].sum())):
        color = _palette_color(rng, used)
        used.append(color)
        img[masks[idx]] = color
    img += rng.normal(0, 4.0, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)

    unlabeled = None
    if spec.unlabeled:
        unlabeled = np.zeros((size, size), dtype=bool)
        h = int(rng.integers(size // 8, size // 4))
        w = int(rng.integers(size // 8, size // 4))
        y0 = int(rng.integers(0, size - h))
        x0 = int(rng.integers(0, size - w))
        unlabeled[y0 : y0 + h, x0 : x0 + w] = True

    scene = AnnotatedImage(spec.seed, size, size, masks, image=img, unlabeled=unlabeled)
    scene.meta["overlaps"] = overlaps
    scene.meta["groups"] = [group_of_box(b, size, size) for b in scene.boxes]
    return scene


def make_scenes(n: int, size: int, seed: int = 0, **kw) -> List[AnnotatedImage]:
    return [make_scene(SceneSpec(seed=seed * 100003 + i, size=size, **kw)) for i in range(n)]
