"""Configuration models. All of them round-trip through JSON unchanged."""
from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackboneConfig(_Strict):
    embed_dims: List[int] = Field(default_factory=lambda: [64, 96, 128, 256])
    depths: List[int] = Field(default_factory=lambda: [2, 2, 6, 2])
    pool_scales: List[int] = Field(default_factory=lambda: [3, 5, 7])
    # ratio 4 puts the default backbone near 3.8M params; 1 lands on the 1.16M budget
    mlp_ratio: float = Field(1.0, gt=0)
    attn_stages: List[int] = Field(default_factory=lambda: [3, 4])
    input_size: int = Field(640, gt=0)
    channels_per_group: int = Field(32, gt=0)

    @field_validator("embed_dims", "depths")
    @classmethod
    def _four_positive(cls, v):
        if len(v) != 4 or any(x <= 0 for x in v):
            raise ValueError("needs exactly 4 positive ints")
        return v

    @field_validator("pool_scales")
    @classmethod
    def _odd_increasing(cls, v):
        if not v or any(k < 1 or k % 2 == 0 for k in v):
            raise ValueError("pool scales must be odd and >= 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("pool scales must be strictly increasing")
        return v

    @field_validator("attn_stages")
    @classmethod
    def _stage_ids(cls, v):
        if any(s not in (1, 2, 3, 4) for s in v):
            raise ValueError("attention stages are numbered 1..4")
        return sorted(set(v))

    @field_validator("input_size")
    @classmethod
    def _div32(cls, v):
        if v % 32:
            raise ValueError("input size must be divisible by 32")
        return v


class PpnConfig(_Strict):
    head_channels: int = Field(64, gt=0)
    head_stride: Literal[16] = 16
    mining_fraction: float = Field(0.1, gt=0, le=1)
    w_point: float = Field(2.0, ge=0)
    w_box: float = Field(1.0, ge=0)
    nms_window: int = Field(3, ge=1)
    n: int = Field(256, ge=1)

    @field_validator("nms_window")
    @classmethod
    def _odd(cls, v):
        if v % 2 == 0:
            raise ValueError("NMS window must be odd")
        return v


class DecoderConfig(_Strict):
    dim: int = Field(128, gt=0)
    heads: int = Field(4, gt=0)
    depth: int = Field(2, gt=0)
    mlp_dim: int = Field(256, gt=0)
    attn_downsample: int = Field(2, gt=0)
    upscale_dim: int = Field(16, gt=0)
    logit_scale: float = Field(8.0, gt=0)

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.dim % self.heads or (self.dim // self.attn_downsample) % self.heads:
            raise ValueError("decoder dim (and downsampled dim) must be divisible by heads")
        return self


class LossWeights(_Strict):
    focal: float = Field(10.0, ge=0)
    dice: float = Field(1.0, ge=0)
    iou: float = Field(1.0, ge=0)


class ModelConfig(_Strict):
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    ppn: PpnConfig = Field(default_factory=PpnConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    seed: int = Field(0, ge=0)


class OptimizerConfig(_Strict):
    name: Literal["adam"] = "adam"
    lr: float = Field(4e-5, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    epochs: int = Field(4, ge=1)
    batch: int = Field(1, ge=1, le=8)
    prompts_per_image: int = Field(4, ge=1)


class DataConfig(_Strict):
    scenes: int = Field(200, ge=1)
    train_size: int = Field(128, gt=0)
    min_objects: int = Field(3, ge=1)
    max_objects: int = Field(8, ge=1)
    annotations: Optional[str] = None
    images_dir: Optional[str] = None


class SegEveryConfig(_Strict):
    sampler: Literal["autoppn", "grid"] = "autoppn"
    grid: int = Field(32, ge=1)
    dedup_iou: float = Field(0.7, gt=0, le=1)
    prompt_mode: Literal["point_box", "point"] = "point_box"
    chunk: int = Field(64, ge=1)


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossWeights = Field(default_factory=LossWeights)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    segevery: SegEveryConfig = Field(default_factory=SegEveryConfig)
    seed: int = Field(0, ge=0)
    out_dir: str = "out"
    checkpoint: Optional[str] = None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.model_validate(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
