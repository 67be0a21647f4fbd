"""Annotation ingestion, RLE codecs, synthetic scenes and image I/O."""
from .annotated import AnnotatedImage, tight_box
from .coco import AnnotationError, load_annotations, rasterize_polygon
from .rle import RleError, counts_to_string, rle_decode, rle_encode, string_to_counts
from .scenes import SceneSpec, make_scene, make_scenes

__all__ = [
    "AnnotatedImage", "AnnotationError", "RleError", "SceneSpec", "counts_to_string",
    "load_annotations", "make_scene", "make_scenes", "rasterize_polygon", "rle_decode",
    "rle_encode", "string_to_counts", "tight_box",
]
