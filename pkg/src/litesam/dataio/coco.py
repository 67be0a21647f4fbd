"""COCO-schema annotation loading.

Polygons are filled with the even-odd rule sampled at pixel centers; RLE in
either list or compact-string form is decoded. Stored bbox fields are ignored
and boxes are recomputed from the rasters. Crowd annotations become the
image's unlabeled region.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .annotated import AnnotatedImage
from .images import read_image
from .rle import RleError, rle_decode


class AnnotationError(ValueError):
    pass


def rasterize_polygon(coords: Sequence[float], h: int, w: int) -> np.ndarray:
    """Even-odd fill of one flat [x0, y0, x1, y1, ...] polygon at pixel centers."""
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    ys = np.arange(h, dtype=np.float64)[:, None] + 0.5
    xs = np.arange(w, dtype=np.float64)[None, :] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        if y0 == y1:
            continue
        spans = (y0 > ys) != (y1 > ys)
        x_cross = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= spans & (xs < x_cross)
    return inside


def decode_segmentation(seg, h: int, w: int) -> np.ndarray:
    if isinstance(seg, list):
        mask = np.zeros((h, w), dtype=bool)
        for poly in seg:
            if len(poly) < 6 or len(poly) % 2:
                raise AnnotationError("polygon needs an even count of >= 6 coordinates")
            mask |= rasterize_polygon(poly, h, w)
        return mask
    if isinstance(seg, dict) and "counts" in seg:
        size = seg.get("size", [h, w])
        if list(size) != [h, w]:
            raise AnnotationError(f"RLE size {size} differs from image size {[h, w]}")
        return rle_decode(seg["counts"], h, w)
    raise AnnotationError("segmentation must be a polygon list or an RLE dict")


def load_annotations(path, images_dir: Optional[str] = None) -> List[AnnotatedImage]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise AnnotationError("top level must be an object")
    images = doc.get("images", [])
    anns = doc.get("annotations", [])
    if not isinstance(images, list) or not isinstance(anns, list):
        raise AnnotationError("'images' and 'annotations' must be lists")

    records = {}
    order = []
    for i, img in enumerate(images):
        try:
            iid, w, h = int(img["id"]), int(img["width"]), int(img["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"images[{i}]: missing or invalid id/width/height ({exc})") from exc
        records[iid] = {"w": w, "h": h, "masks": [], "crowd": None, "file": img.get("file_name")}
        order.append(iid)

    for i, ann in enumerate(anns):
        try:
            rec = records[int(ann["image_id"])]
        except KeyError as exc:
            raise AnnotationError(f"annotations[{i}]: unknown or missing image_id") from exc
        if "segmentation" not in ann:
            raise AnnotationError(f"annotations[{i}]: missing segmentation")
        try:
            mask = decode_segmentation(ann["segmentation"], rec["h"], rec["w"])
        except (AnnotationError, RleError) as exc:
            raise AnnotationError(f"annotations[{i}]: {exc}") from exc
        if ann.get("iscrowd", 0):
            rec["crowd"] = mask if rec["crowd"] is None else rec["crowd"] | mask
        elif mask.any():
            rec["masks"].append(mask)

    out = []
    for iid in order:
        rec = records[iid]
        raster = None
        if images_dir and rec["file"]:
            raster = read_image(Path(images_dir) / rec["file"])
        out.append(AnnotatedImage(iid, rec["w"], rec["h"], rec["masks"], image=raster, unlabeled=rec["crowd"]))
    return out
