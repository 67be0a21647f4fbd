"""Request and response models shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PromptIn(_Model):
    point: Optional[Tuple[float, float]] = None
    box: Optional[Tuple[float, float, float, float]] = None
    label: Literal[0, 1] = 1

    @model_validator(mode="after")
    def _needs_something(self):
        if self.point is None and self.box is None:
            raise ValueError("a prompt needs a point, a box, or both")
        if self.box is not None and (self.box[2] < self.box[0] or self.box[3] < self.box[1]):
            raise ValueError("box must satisfy x0 <= x1 and y0 <= y1")
        return self


class ImageIn(_Model):
    """Either a base64 PNG or a synthetic scene seed."""

    image_png: Optional[str] = None
    scene_seed: Optional[int] = Field(None, ge=0)
    scene_size: Optional[int] = Field(None, gt=0)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.image_png is None) == (self.scene_seed is None):
            raise ValueError("give exactly one of image_png or scene_seed")
        return self


class SegAnyRequest(ImageIn):
    prompt: PromptIn


class SegEveryRequest(ImageIn):
    sampler: Literal["autoppn", "grid"] = "autoppn"
    grid: int = Field(32, ge=1)
    n: int = Field(256, ge=1)
    prompt_mode: Literal["point_box", "point"] = "point_box"


class MaskOut(_Model):
    size: Tuple[int, int]  # (height, width)
    counts: str  # COCO compact RLE, column-major
    area: int
    score: float


class SegAnyResponse(_Model):
    mask: MaskOut
    iou_pred: float


class SegEveryResponse(_Model):
    sampler: str
    decoder_calls: int
    num_candidates: int
    masks: List[MaskOut]
    proposals: List[dict]
    wall_time_ms: float


class ProposalOut(_Model):
    x: float
    y: float
    score: float
    group: str
    box: Optional[Tuple[float, float, float, float]] = None


class ProposalsResponse(_Model):
    proposals: List[ProposalOut]


class HealthResponse(_Model):
    status: str
    params: int
    input_size: int


class ProfileResponse(_Model):
    params: int
    macs: int
    input_size: int
    per_module: Dict[str, Dict[str, int]]
    full_model: Dict[str, int]
