"""The assembled model and a per-image predictor that caches backbone work."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..autoppn import AutoPPN
from ..config import ModelConfig
from ..dataio.images import resize_image, to_model_input
from ..litevit import LiteViT
from ..tensor import Module, Tensor, no_grad
from ..tensor.ops import _interp_matrix
from .decoder import MASK_STRIDE, MaskDecoder, MaskPrediction
from .prompt import Box, Point, PointBox, Prompt, PromptEncoder, prompt_len, prompt_raster

DECODER_STAGE = 2  # stride 16
SKIP_STAGE = 0  # stride 4


def _rng(seed: int, part: int) -> np.random.Generator:
    return np.random.default_rng([seed, part])


class LiteSAM(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        b = cfg.backbone
        self.backbone = LiteViT(b, _rng(cfg.seed, 0))
        self.ppn = AutoPPN(b, cfg.ppn, _rng(cfg.seed, 1))
        self.prompt_encoder = PromptEncoder(cfg.decoder.dim, b.input_size, _rng(cfg.seed, 2))
        self.decoder = MaskDecoder(b.embed_dims[DECODER_STAGE], b.embed_dims[SKIP_STAGE],
                                   cfg.decoder, _rng(cfg.seed, 3))

    def forward(self, image: Tensor):
        """Full image path: pyramid and AutoPPN heads."""
        pyramid = self.backbone(image)
        heat, box = self.ppn(pyramid)
        return pyramid, heat, box

    def image_state(self, pyramid):
        return self.decoder.image_tokens(pyramid[DECODER_STAGE], pyramid[SKIP_STAGE])

    def decode(self, state, prompts: Sequence[Prompt], size: int):
        """Decode prompts that share a token count; returns (logits, iou) tensors."""
        (h, w), (hm, wm) = state[3], state[4]
        return self.decoder(state, self.prompt_encoder(prompts, size),
                            prompt_raster(prompts, size, h, w), prompt_raster(prompts, size, hm, wm))


def build_model(cfg: Optional[ModelConfig] = None) -> LiteSAM:
    return LiteSAM(cfg or ModelConfig())


def upsample_logits(logits: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    h, w = logits.shape[-2:]
    ah = _interp_matrix(size[0], h, logits.dtype)
    aw = _interp_matrix(size[1], w, logits.dtype)
    return np.matmul(np.matmul(ah, logits), aw.T)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("LITESAM_THREADS", "1")))
    except ValueError:
        return 1


def _chunks(prompts: Sequence[Prompt], size: int) -> List[Tuple[int, int]]:
    """Split into runs of equal token count, each at most ``size`` long."""
    out, start = [], 0
    for i in range(1, len(prompts) + 1):
        if i == len(prompts) or i - start == size or prompt_len(prompts[i]) != prompt_len(prompts[start]):
            out.append((start, i))
            start = i
    return out


class Predictor:
    """Runs the backbone once per image and answers any number of prompts.

    Images that are not square with a side divisible by 32 are resized to the
    configured input size; prompts and outputs are mapped back to the
    original pixel frame.
    """

    def __init__(self, model: LiteSAM, threads: Optional[int] = None, chunk: int = 64):
        self.model = model
        self.threads = threads or default_threads()
        self.chunk = chunk
        self.backbone_calls = 0
        self.decoder_calls = 0
        self._pyramid = None
        self._state = None
        self._ppn = None

    # -- image ---------------------------------------------------------------
    def set_image(self, image: np.ndarray) -> None:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an H x W x 3 image, got shape {image.shape}")
        h, w = image.shape[:2]
        self.orig_size = (h, w)
        if h == w and h % 32 == 0:
            side = h
        else:
            side = self.model.cfg.backbone.input_size
            image = resize_image(image, side)
        self.side = side
        self.scale = (w / side, h / side)
        x = Tensor(to_model_input(image)[None])
        with no_grad():
            self._pyramid = self.model.backbone(x)
            self._state = self.model.image_state(self._pyramid)
        self.backbone_calls += 1
        self._ppn = None

    def _require_image(self):
        if self._pyramid is None:
            raise RuntimeError("call set_image first")

    def ppn_maps(self) -> Tuple[np.ndarray, np.ndarray]:
        """(heat (3, h, w), box (4, h, w)) from the AutoPPN head, computed once."""
        self._require_image()
        if self._ppn is None:
            with no_grad():
                heat, box = self.model.ppn(self._pyramid)
            self._ppn = (heat.data[0], box.data[0])
        return self._ppn

    # -- prompts -------------------------------------------------------------
    def to_model_frame(self, prompt: Prompt) -> Prompt:
        sx, sy = self.scale
        if sx == 1 and sy == 1:
            return prompt
        if isinstance(prompt, Point):
            return Point(prompt.x / sx, prompt.y / sy, prompt.label)
        if isinstance(prompt, Box):
            return Box(prompt.x0 / sx, prompt.y0 / sy, prompt.x1 / sx, prompt.y1 / sy)
        return PointBox(self.to_model_frame(prompt.point), self.to_model_frame(prompt.box))

    def _decode_range(self, prompts, lo, hi):
        with no_grad():
            logits, iou = self.model.decode(self._state, prompts[lo:hi], self.side)
        return logits.data, iou.data

    def predict(self, prompts: Sequence[Prompt], model_frame: bool = False) -> List[MaskPrediction]:
        """One decoder call per prompt, batched in chunks and fanned out to threads.

        Results come back in prompt order whatever the completion order.
        """
        self._require_image()
        prompts = list(prompts) if model_frame else [self.to_model_frame(p) for p in prompts]
        if not prompts:
            return []
        spans = _chunks(prompts, self.chunk)
        if self.threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(lambda s: self._decode_range(prompts, *s), spans))
        else:
            results = [self._decode_range(prompts, *s) for s in spans]
        self.decoder_calls += len(prompts)
        out = []
        for logits, iou in results:
            for i in range(logits.shape[0]):
                out.append(MaskPrediction(logits[i], float(iou[i])))
        return out

    def full_mask(self, pred: MaskPrediction) -> np.ndarray:
        """Binary mask in the original image frame."""
        return upsample_logits(pred.mask_logits, self.orig_size) > 0

    @property
    def mask_size(self) -> Tuple[int, int]:
        return (self.side // MASK_STRIDE, self.side // MASK_STRIDE)
