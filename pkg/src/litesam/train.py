"""Joint training of AutoPPN and the mask decoder on synthetic scenes."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .autoppn import build_point_targets, ppn_loss
from .config import LossWeights, ModelConfig, RunConfig
from .dataio import AnnotatedImage, make_scenes
from .dataio.images import to_model_input
from .segkit.losses import mask_loss, total_loss
from .segkit.model import LiteSAM
from .segkit.prompt import Box, Point, PointBox, Prompt, prompt_len
from .tensor import Adam, Tensor, ops

log = logging.getLogger(__name__)
CSV_HEADER = ("epoch", "step", "L_ppn", "L_mask", "L_total")


def box_prompt(box) -> Box:
    x0, y0, x1, y1 = box
    return Box(float(x0), float(y0), float(x1 + 1), float(y1 + 1))


def sample_prompts(scene: AnnotatedImage, k: int, rng: np.random.Generator):
    """Up to ``k`` (prompt, mask index) pairs with mixed point / box / point+box types."""
    n = len(scene.masks)
    picks = rng.permutation(n)[:k]
    out = []
    for idx in picks:
        m = scene.masks[idx]
        ys, xs = np.nonzero(m)
        j = rng.integers(len(xs))
        point = Point(float(xs[j]) + 0.5, float(ys[j]) + 0.5)
        kind = int(rng.integers(3))
        box = box_prompt(scene.boxes[idx])
        prompt = (point, box, PointBox(point, box))[kind]
        out.append((prompt, int(idx)))
    return out


def scene_loss(model: LiteSAM, scene: AnnotatedImage, prompts, weights: LossWeights):
    """(L_ppn, L_mask) tensors for one scene and its sampled prompts."""
    cfg = model.cfg
    x = Tensor(to_model_input(scene.image)[None])
    pyramid, heat, box = model(x)
    t = build_point_targets(scene, heat.shape[2:])
    l_ppn = ppn_loss(heat, box, t.point_heat[None], t.box_reg[None], t.pos_mask[None],
                     t.valid_mask[None], cfg.ppn.w_point, cfg.ppn.w_box, cfg.ppn.mining_fraction)
    if not prompts:
        return l_ppn, Tensor(np.zeros((), dtype=heat.dtype))
    state = model.image_state(pyramid)
    size = scene.width
    valid = None if scene.unlabeled is None else ~scene.unlabeled
    losses = []
    by_len = {}
    for i, (p, _) in enumerate(prompts):
        by_len.setdefault(prompt_len(p), []).append(i)
    for _, idxs in sorted(by_len.items()):
        logits, iou = model.decode(state, [prompts[i][0] for i in idxs], size)
        full = ops.upsample_bilinear(logits, (scene.height, scene.width))
        for b, i in enumerate(idxs):
            gt = scene.masks[prompts[i][1]]
            losses.append(mask_loss(full[b], iou[b], gt, weights, valid))
    l_mask = losses[0]
    for extra in losses[1:]:
        l_mask = l_mask + extra
    return l_ppn, l_mask * (1.0 / len(losses))


@dataclass
class TrainLog:
    rows: List[tuple] = field(default_factory=list)

    def add(self, epoch, step, l_ppn, l_mask, l_total):
        self.rows.append((epoch, step, l_ppn, l_mask, l_total))

    def epoch_means(self) -> List[float]:
        epochs = sorted({r[0] for r in self.rows})
        return [float(np.mean([r[4] for r in self.rows if r[0] == e])) for e in epochs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e, s, a, b, c in self.rows:
            w.writerow((e, s, f"{a:.8f}", f"{b:.8f}", f"{c:.8f}"))
        return buf.getvalue()


def train_model_config(cfg: RunConfig) -> ModelConfig:
    """The model config used for training: backbone input size follows the data size."""
    m = cfg.model.model_copy(deep=True)
    m.backbone.input_size = cfg.data.train_size
    m.seed = cfg.seed
    return m


def train(cfg: RunConfig, scenes: Optional[Sequence[AnnotatedImage]] = None,
          progress: Optional[Callable[[int, int, float], None]] = None):
    """Adam over all parameters; returns ``(model, TrainLog)``.

    Batches accumulate gradients over ``optimizer.batch`` scenes before a step.
    """
    model = LiteSAM(train_model_config(cfg))
    if scenes is None:
        d = cfg.data
        scenes = make_scenes(d.scenes, d.train_size, cfg.seed,
                             min_count=d.min_objects, max_count=d.max_objects)
    o = cfg.optimizer
    opt = Adam(model.parameters(), lr=o.lr, betas=o.betas)
    rng = np.random.default_rng([cfg.seed, 7])
    tlog = TrainLog()
    step = 0
    for epoch in range(o.epochs):
        order = rng.permutation(len(scenes))
        for start in range(0, len(order), o.batch):
            batch = order[start : start + o.batch]
            opt.zero_grad()
            sums = np.zeros(3)
            for i in batch:
                scene = scenes[int(i)]
                prompts = sample_prompts(scene, o.prompts_per_image, rng)
                l_ppn, l_mask = scene_loss(model, scene, prompts, cfg.loss)
                loss = total_loss(l_ppn, l_mask) * (1.0 / len(batch))
                loss.backward()
                sums += (l_ppn.item(), l_mask.item(), l_ppn.item() + l_mask.item())
            opt.step()
            sums /= len(batch)
            tlog.add(epoch, step, *sums)
            if progress:
                progress(epoch, step, float(sums[2]))
            step += 1
        log.info("epoch %d mean L_total %.5f", epoch, tlog.epoch_means()[-1])
    return model, tlog
