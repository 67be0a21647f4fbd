"""Command-line entry point.

Inference commands run in-process through the same engine the HTTP service
uses; ``--server URL`` sends them to a running service instead. Structured
output goes to stdout as JSON, logs go to stderr.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import base64
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import RunConfig

log = logging.getLogger("litesam")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _pair(text: str, n: int, name: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--{name} expects {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"--{name} expects {n} comma-separated numbers, got {text!r}")
    return vals


# -- configuration -------------------------------------------------------------
def load_config(args) -> RunConfig:
    """RunConfig from ``--config`` with command-line overrides applied."""
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
    else:
        data = {}
    cfg = RunConfig.model_validate(data)
    upd = cfg.model_dump()
    if getattr(args, "seed", None) is not None:
        upd["seed"] = args.seed
        upd["model"]["seed"] = args.seed
    if getattr(args, "sampler", None):
        upd["segevery"]["sampler"] = args.sampler
    if getattr(args, "grid", None) is not None:
        upd["segevery"]["grid"] = args.grid
    if getattr(args, "n", None) is not None:
        upd["model"]["ppn"]["n"] = args.n
    if getattr(args, "out", None):
        upd["out_dir"] = args.out
    if getattr(args, "checkpoint", None):
        upd["checkpoint"] = args.checkpoint
    cfg = RunConfig.model_validate(upd)
    if cfg.checkpoint and not Path(cfg.checkpoint).is_dir():
        raise UsageError(f"checkpoint directory not found: {cfg.checkpoint}")
    return cfg


def load_model(cfg: RunConfig):
    from .checkpoint import load_checkpoint
    from .segkit import build_model

    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    return build_model(cfg.model)


def _engine(cfg: RunConfig):
    from .service import Engine

    return Engine(load_model(cfg), cfg)


def _image_fields(args, cfg: RunConfig) -> dict:
    if args.image:
        path = Path(args.image)
        if not path.is_file():
            raise UsageError(f"image not found: {path}")
        from .dataio.images import png_bytes, read_image

        return {"image_png": base64.b64encode(png_bytes(read_image(path))).decode("ascii")}
    return {"scene_seed": args.scene_seed if args.scene_seed is not None else cfg.seed,
            "scene_size": args.size}


def _remote(url: str, method: str, route: str, payload: Optional[dict] = None) -> dict:
    import httpx

    with httpx.Client(base_url=url, timeout=600.0) as client:
        resp = client.request(method, route, json=payload)
    if resp.status_code == 422:
        raise UsageError(f"server rejected request: {resp.text}")
    resp.raise_for_status()
    return resp.json()


def _source_image(req, engine=None) -> np.ndarray:
    """The request's image, rebuilt locally for overlays."""
    from .dataio import SceneSpec, make_scene
    from .dataio.images import decode_png

    if req.image_png is not None:
        return decode_png(base64.b64decode(req.image_png))
    size = req.scene_size or (engine.model.cfg.backbone.input_size if engine else None)
    if size is None:
        raise UsageError("--size is required for synthetic scenes in --server mode")
    return make_scene(SceneSpec(seed=req.scene_seed, size=size)).image


# -- rendering -----------------------------------------------------------------
def label_map(masks: List[np.ndarray], shape) -> np.ndarray:
    """8-bit label map; mask k (in score order) gets label k+1, earlier masks on top."""
    labels = np.zeros(shape, dtype=np.uint8)
    for k in reversed(range(min(len(masks), 255))):
        labels[masks[k]] = k + 1
    return labels


def overlay(image: np.ndarray, labels: np.ndarray) -> np.ndarray:
    palette = np.random.default_rng(0).integers(40, 256, size=(256, 3)).astype(np.float32)
    out = image.astype(np.float32)
    fg = labels > 0
    out[fg] = 0.45 * out[fg] + 0.55 * palette[labels[fg]]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


# -- commands ------------------------------------------------------------------
def cmd_profile(args) -> dict:
    cfg = load_config(args)
    if args.server:
        return _remote(args.server, "GET", "/profile")
    from .service.engine import model_profile

    return model_profile(load_model(cfg))


def cmd_segany(args) -> dict:
    from .service.engine import mask_in
    from .service.schemas import SegAnyRequest, SegAnyResponse
    from .dataio.images import write_png

    cfg = load_config(args)
    if args.point is None and args.box is None:
        raise UsageError("segany needs --point and/or --box")
    prompt = {"label": args.label}
    if args.point is not None:
        prompt["point"] = _pair(args.point, 2, "point")
    if args.box is not None:
        prompt["box"] = _pair(args.box, 4, "box")
    req = SegAnyRequest(prompt=prompt, **_image_fields(args, cfg))
    engine = None
    if args.server:
        resp = SegAnyResponse.model_validate(
            _remote(args.server, "POST", "/segany", req.model_dump(mode="json")))
    else:
        engine = _engine(cfg)
        resp = engine.segany(req)
    out = Path(cfg.out_dir)
    mask = mask_in(resp.mask)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "mask.png", mask.astype(np.uint8) * 255)
    result = resp.model_dump(mode="json")
    _write(out / "segany.json", dump_json(result))
    return result


def cmd_segevery(args) -> dict:
    from .service.engine import mask_in
    from .service.schemas import SegEveryRequest, SegEveryResponse
    from .dataio.images import write_png

    cfg = load_config(args)
    req = SegEveryRequest(sampler=cfg.segevery.sampler, grid=cfg.segevery.grid,
                          n=cfg.model.ppn.n, prompt_mode=cfg.segevery.prompt_mode,
                          **_image_fields(args, cfg))
    engine = None
    if args.server:
        resp = SegEveryResponse.model_validate(
            _remote(args.server, "POST", "/segevery", req.model_dump(mode="json")))
    else:
        engine = _engine(cfg)
        resp = engine.segevery(req)
    image = _source_image(req, engine)
    masks = [mask_in(m) for m in resp.masks]
    labels = label_map(masks, image.shape[:2])
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(out / "labels.png", labels)
    write_png(out / "overlay.png", overlay(image, labels))
    meta = {
        "sampler": resp.sampler,
        "decoder_calls": resp.decoder_calls,
        "num_candidates": resp.num_candidates,
        "num_masks": len(resp.masks),
        "proposals": resp.proposals,
        "scores": [m.score for m in resp.masks],
        "areas": [m.area for m in resp.masks],
    }
    _write(out / "segevery.json", dump_json(meta))
    # wall time varies run to run, so it lives apart from the reproducible outputs
    _write(out / "timing.json", dump_json({"wall_time_ms": resp.wall_time_ms}))
    log.info("segevery: %d calls, %d masks, %.1f ms", resp.decoder_calls, len(masks),
             resp.wall_time_ms)
    return meta


def _dataset(args, cfg: RunConfig, size: int):
    from .dataio import load_annotations, make_scenes

    if args.annotations:
        if not Path(args.annotations).is_file():
            raise UsageError(f"annotation file not found: {args.annotations}")
        items = load_annotations(args.annotations, args.images_dir)
        for it in items:
            if it.image is None:
                raise UsageError(f"image {it.image_id} has no pixels; pass --images-dir")
        return items
    d = cfg.data
    return make_scenes(args.scenes, size, args.scene_seed if args.scene_seed is not None else cfg.seed,
                       min_count=d.min_objects, max_count=d.max_objects)


def cmd_gen_targets(args) -> dict:
    from .autoppn import build_point_targets
    from .tensor import ltsr

    cfg = load_config(args)
    stride = cfg.model.ppn.head_stride
    items = _dataset(args, cfg, args.size or cfg.data.train_size)
    out = Path(cfg.out_dir) / "targets"
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for it in items:
        if it.height % stride or it.width % stride:
            raise UsageError(f"image {it.image_id} size is not a multiple of {stride}")
        t = build_point_targets(it, (it.height // stride, it.width // stride))
        files = {}
        for name in ("point_heat", "box_reg", "pos_mask", "valid_mask", "owner"):
            rel = f"{it.image_id}_{name}.ltsr"
            ltsr.save(out / rel, getattr(t, name))
            files[name] = f"targets/{rel}"
        index.append({"image_id": it.image_id, "height": it.height, "width": it.width,
                      "objects": len(it.masks),
                      "positives": [int(v) for v in t.pos_mask.sum(axis=(1, 2))],
                      "files": files})
    result = {"stride": stride, "images": index}
    _write(Path(cfg.out_dir) / "targets.json", dump_json(result))
    return {"stride": stride, "images": len(index), "index": "targets.json"}


def cmd_train(args) -> dict:
    from .checkpoint import save_checkpoint
    from .train import train

    cfg = load_config(args)
    if args.epochs is not None or args.scenes_override is not None:
        upd = cfg.model_dump()
        if args.epochs is not None:
            upd["optimizer"]["epochs"] = args.epochs
        if args.scenes_override is not None:
            upd["data"]["scenes"] = args.scenes_override
        cfg = RunConfig.model_validate(upd)
    scenes = None
    if cfg.data.annotations:
        from .dataio import load_annotations

        scenes = load_annotations(cfg.data.annotations, cfg.data.images_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", cfg.to_json())

    def progress(epoch, step, loss):
        if step % 50 == 0:
            log.info("epoch %d step %d L_total %.5f", epoch, step, loss)

    model, tlog = train(cfg, scenes, progress)
    save_checkpoint(model, out / "checkpoint")
    _write(out / "loss.csv", tlog.to_csv())
    means = [round(m, 8) for m in tlog.epoch_means()]
    return {"epochs": len(means), "epoch_mean_L_total": means, "steps": len(tlog.rows),
            "checkpoint": "checkpoint"}


def cmd_bench_sampling(args) -> dict:
    from .segkit import Predictor, dataset_average_recall, random_prompts, seg_every
    from .config import SegEveryConfig

    cfg = load_config(args)
    model = load_model(cfg)
    size = args.size or model.cfg.backbone.input_size
    items = _dataset(args, cfg, size)
    predictor = Predictor(model, chunk=cfg.segevery.chunk)
    n = cfg.model.ppn.n
    k = args.k or n
    samplers = args.samplers.split(",")
    for s in samplers:
        if s not in ("autoppn", "grid", "random"):
            raise UsageError(f"unknown sampler {s!r}")
    rows, timing = {}, {}
    for s in samplers:
        rng = np.random.default_rng([cfg.seed, 11])
        calls, evals, elapsed = 0, [], 0.0
        for it in items:
            predictor.set_image(it.image)
            se = SegEveryConfig.model_validate({**cfg.segevery.model_dump(),
                                                "sampler": "grid" if s == "grid" else "autoppn"})
            prompts = random_prompts(n, predictor.side, rng) if s == "random" else None
            res = seg_every(predictor, se, n=n, nms_window=cfg.model.ppn.nms_window, prompts=prompts)
            calls += res.decoder_calls
            elapsed += res.wall_time_ms
            evals.append((res.masks, res.scores, it.masks))
        rows[s] = {"decoder_calls": calls, "decoder_calls_per_image": calls / len(items),
                   f"AR@{k}": round(dataset_average_recall(evals, k), 6)}
        timing[s] = {"wall_time_ms": round(elapsed, 3)}
    result = {"images": len(items), "k": k, "samplers": rows}
    out = Path(cfg.out_dir)
    _write(out / "bench_sampling.json", dump_json(result))
    _write(out / "timing.json", dump_json(timing))
    return result


def cmd_grad_check(args) -> dict:
    from .gradsuite import TOL, run_suite

    load_config(args)
    names = args.checks.split(",") if args.checks else None
    try:
        worst = run_suite(seeds=range(args.seeds), names=names)
    except KeyError as exc:
        raise UsageError(f"unknown check {exc}") from None
    report = {name: {"max_rel_error": float(f"{err:.3e}"), "pass": bool(err < TOL)}
              for name, err in sorted(worst.items())}
    result = {"seeds": args.seeds, "tolerance": TOL, "checks": report,
              "all_pass": all(r["pass"] for r in report.values())}
    if not result["all_pass"]:
        sys.stdout.write(dump_json(result))
        raise RuntimeError("gradient check failed")
    return result


def cmd_serve(args) -> dict:
    import uvicorn

    from .service.app import create_app

    cfg = load_config(args)
    uvicorn.run(create_app(_engine(cfg)), host=args.host, port=args.port, log_level="warning")
    return {}


# -- parser --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="litesam", description="Lite-SAM at desk scale.")
    p.add_argument("--version", action="version", version=f"litesam {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, image=False, data=False):
        sp.add_argument("--config", help="RunConfig JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--checkpoint", help="checkpoint directory")
        if image or data:
            sp.add_argument("--scene-seed", type=int, help="synthetic scene seed (default: --seed)")
            sp.add_argument("--size", type=int, help="synthetic scene side")
        if image:
            sp.add_argument("--image", help="input image (PNG/PPM); default is a synthetic scene")
            sp.add_argument("--server", help="send the request to a running service at this URL")
        if data:
            sp.add_argument("--annotations", help="COCO-style JSON instead of synthetic scenes")
            sp.add_argument("--images-dir")
            sp.add_argument("--scenes", type=int, default=5, help="number of synthetic scenes")
        return sp

    common(sub.add_parser("gen-targets", help="write AutoPPN targets as LTSR files"), data=True)

    sp = common(sub.add_parser("train", help="train AutoPPN and the decoder jointly"))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--scenes", dest="scenes_override", type=int)

    sp = common(sub.add_parser("segany", help="one mask for one prompt"), image=True)
    sp.add_argument("--point", help="x,y")
    sp.add_argument("--label", type=int, choices=(0, 1), default=1)
    sp.add_argument("--box", help="x0,y0,x1,y1")

    sp = common(sub.add_parser("segevery", help="masks for everything in the image"), image=True)
    sp.add_argument("--sampler", choices=("autoppn", "grid"))
    sp.add_argument("--grid", type=int)
    sp.add_argument("--n", type=int)

    sp = common(sub.add_parser("bench-sampling", help="decoder calls and AR@k per sampler"), data=True)
    sp.add_argument("--n", type=int)
    sp.add_argument("--grid", type=int)
    sp.add_argument("--k", type=int, help="AR@k cutoff (default: --n)")
    sp.add_argument("--samplers", default="autoppn,grid,random")

    sp = common(sub.add_parser("profile", help="parameter and MAC counts"))
    sp.add_argument("--server")

    sp = common(sub.add_parser("grad-check", help="finite-difference gradient suite"))
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--checks", help="comma-separated subset")

    sp = common(sub.add_parser("serve", help="run the HTTP service"))
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return p


COMMANDS = {
    "gen-targets": cmd_gen_targets, "train": cmd_train, "segany": cmd_segany,
    "segevery": cmd_segevery, "bench-sampling": cmd_bench_sampling, "profile": cmd_profile,
    "grad-check": cmd_grad_check, "serve": cmd_serve,
}


def _field_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .segkit.prompt import PromptError

    t0 = time.perf_counter()
    try:
        result = COMMANDS[args.command](args)
    except ValidationError as exc:
        print(_field_errors(exc), file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, PromptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("traceback", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.command != "serve":
        sys.stdout.write(dump_json(result))
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
