"""Inference engine shared by the HTTP service and the in-process CLI."""
from __future__ import annotations

import base64
import threading
from typing import Optional

import numpy as np

from ..config import RunConfig, SegEveryConfig
from ..dataio import SceneSpec, make_scene
from ..dataio.images import decode_png
from ..dataio.rle import counts_to_string, rle_decode, rle_encode
from ..profile import profile
from ..segkit import Predictor, as_prompt, seg_any, seg_every
from ..segkit.model import LiteSAM
from ..segkit.pipeline import autoppn_proposals
from ..segkit.prompt import Point
from ..tensor import Tensor
from .schemas import (HealthResponse, ImageIn, MaskOut, ProfileResponse, ProposalOut,
                      ProposalsResponse, SegAnyRequest, SegAnyResponse, SegEveryRequest,
                      SegEveryResponse)


def mask_out(mask: np.ndarray, score: float) -> MaskOut:
    h, w = mask.shape
    return MaskOut(size=(h, w), counts=counts_to_string(rle_encode(mask)), area=int(mask.sum()),
                   score=round(float(score), 6))


def mask_in(m: MaskOut) -> np.ndarray:
    return rle_decode(m.counts, m.size[0], m.size[1])


class Engine:
    """Owns one model and one predictor; requests are served one at a time."""

    def __init__(self, model: LiteSAM, cfg: Optional[RunConfig] = None, threads: Optional[int] = None):
        self.model = model
        self.cfg = cfg or RunConfig(model=model.cfg)
        self.predictor = Predictor(model, threads=threads, chunk=self.cfg.segevery.chunk)
        self._lock = threading.Lock()

    def image(self, req: ImageIn) -> np.ndarray:
        if req.image_png is not None:
            return decode_png(base64.b64decode(req.image_png))
        size = req.scene_size or self.model.cfg.backbone.input_size
        return make_scene(SceneSpec(seed=req.scene_seed, size=size)).image

    def health(self) -> HealthResponse:
        return HealthResponse(status="ok", params=self.model.num_params(),
                              input_size=self.model.cfg.backbone.input_size)

    def segany(self, req: SegAnyRequest) -> SegAnyResponse:
        prompt = as_prompt(req.prompt.model_dump())
        with self._lock:
            self.predictor.set_image(self.image(req))
            pred = seg_any(self.predictor, prompt)
            mask = self.predictor.full_mask(pred)
        return SegAnyResponse(mask=mask_out(mask, pred.iou_pred), iou_pred=round(pred.iou_pred, 6))

    def segevery(self, req: SegEveryRequest) -> SegEveryResponse:
        cfg = self.cfg.segevery.model_copy(update={
            "sampler": req.sampler, "grid": req.grid, "prompt_mode": req.prompt_mode})
        with self._lock:
            self.predictor.set_image(self.image(req))
            res = seg_every(self.predictor, SegEveryConfig.model_validate(cfg.model_dump()), n=req.n,
                            nms_window=self.model.cfg.ppn.nms_window)
        meta = res.metadata()
        return SegEveryResponse(
            sampler=req.sampler, decoder_calls=res.decoder_calls, num_candidates=res.num_candidates,
            masks=[mask_out(m, s) for m, s in zip(res.masks, res.scores)],
            proposals=meta["proposals"], wall_time_ms=round(res.wall_time_ms, 3))

    def proposals(self, req: ImageIn, n: Optional[int] = None) -> ProposalsResponse:
        with self._lock:
            self.predictor.set_image(self.image(req))
            props = autoppn_proposals(self.predictor, n or self.model.cfg.ppn.n,
                                      self.model.cfg.ppn.nms_window)
            sx, sy = self.predictor.scale
        out = []
        for p in props:
            box = None
            if p.box is not None:
                box = tuple(round(v * s, 4) for v, s in zip(p.box, (sx, sy, sx, sy)))
            out.append(ProposalOut(x=round(p.x * sx, 4), y=round(p.y * sy, 4),
                                   score=round(p.score, 6), group=p.group, box=box))
        return ProposalsResponse(proposals=out)

    def profile(self) -> ProfileResponse:
        return ProfileResponse(**model_profile(self.model))


def model_profile(model: LiteSAM) -> dict:
    """Backbone complexity at the configured input size plus whole-model totals.

    The whole-model MACs cover backbone, AutoPPN head and one single-point
    decoder call.
    """
    size = model.cfg.backbone.input_size
    rep = profile(model.backbone, size)

    def full(image: Tensor):
        pyramid, _, _ = model(image)
        state = model.image_state(pyramid)
        model.decode(state, [Point(size / 2, size / 2)], size)

    whole = profile(model, size, run=full)
    rep["full_model"] = {"params": whole["params"], "macs": whole["macs"]}
    return rep
