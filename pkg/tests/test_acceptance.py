"""One test per acceptance criterion, each at its stated tolerance.

Every test records a PASS/FAIL line with its measurements; the lines are
printed together in the terminal summary.
"""
import itertools
import json
import os
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

import conftest
from oracles import avg_pool_loops, conv2d_loops, dyadic, edt_brute, masked_mse, nms_brute, topn_brute


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# 1 ----------------------------------------------------------------------------
def test_criterion_1_gradient_suite():
    from litesam.gradsuite import CHECKS, H, TOL, run_suite

    t0 = time.perf_counter()
    worst = run_suite(seeds=range(20))
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v < TOL}
    ok = not bad and set(worst) == set(CHECKS) and elapsed < 300 and H == 1e-4
    record(1, ok, f"{len(worst)} checks x 20 seeds, max rel err {max(worst.values()):.2e} "
                  f"(tol {TOL:g}), {elapsed:.0f}s (limit 300s)" + (f", failing {sorted(bad)}" if bad else ""))
    assert ok


# 2 ----------------------------------------------------------------------------
def test_criterion_2_oracles():
    from litesam.autoppn import distance_transform, point_nms, topn_decode
    from litesam.dataio import rle_decode, rle_encode
    from litesam.tensor import Tensor, ops

    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    counts = dict.fromkeys(("dt", "nms", "topn", "conv", "pool", "rle"), 0)
    mismatches = []

    def dt_case(m):
        counts["dt"] += 1
        if not np.array_equal(distance_transform(m), edt_brute(m)):
            mismatches.append("dt")

    def rle_case(m):
        counts["rle"] += 1
        if not np.array_equal(rle_decode(rle_encode(m), *m.shape), m):
            mismatches.append("rle")

    # exhaustive structured cases: every mask up to 12 pixels
    for h, w in [(1, 1), (1, 4), (2, 2), (2, 3), (3, 3), (3, 4), (4, 3), (2, 6), (6, 2), (1, 12)]:
        for bits in range(1 << (h * w)):
            m = ((bits >> np.arange(h * w)) & 1).astype(bool).reshape(h, w)
            rle_case(m)
            if bits:
                dt_case(m)
    # every 3x3 tie pattern over three levels for NMS / Top-N
    for vals in itertools.product((0.0, 0.5, 1.0), repeat=9):
        heat = np.array(vals).reshape(1, 3, 3).repeat(3, 0)
        counts["nms"] += 1
        if not np.array_equal(point_nms(heat, 3), nms_brute(heat, 3)):
            mismatches.append("nms")

    for i in range(1000):
        h, w = (int(v) for v in rng.integers(1, 33, size=2))
        m = rng.random((h, w)) < rng.uniform(0.1, 0.95)
        if not m.any():
            m[0, 0] = True
        dt_case(m)
        rle_case(m)
        heat = rng.integers(0, 6 if i % 2 else 10_000, size=(3, h, w)) / 8.0
        window = (1, 3, 5)[i % 3]
        supp = point_nms(heat, window)
        counts["nms"] += 1
        if not np.array_equal(supp, nms_brute(heat, window)):
            mismatches.append("nms")
        n = int(rng.integers(1, 64))
        got = [(p.score, p.x, p.y, p.group) for p in topn_decode(supp, None, n, 16)]
        ref = [(s, (x + 0.5) * 16, (y + 0.5) * 16, ("large", "medium", "small")[c])
               for c, y, x, s in topn_brute(supp, n)]
        counts["topn"] += 1
        if got != ref:
            mismatches.append("topn")
        # convolution and pooling on extents up to 8, dyadic values so sums are exact
        ch, cw = (int(v) for v in rng.integers(1, 9, size=2))
        k = int(rng.choice([1, 3, 5]))
        pad = int(rng.integers(0, k // 2 + 1))
        stride = int(rng.integers(1, 3))
        if ch + 2 * pad < k or cw + 2 * pad < k:
            continue
        groups = int(rng.choice([1, 2]))
        cin, cout = 2 * groups, 2 * groups
        x = dyadic(rng, (1, cin, ch, cw))
        wt = dyadic(rng, (cout, cin // groups, k, k))
        b = dyadic(rng, (cout,))
        out = ops.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad, groups=groups).data
        counts["conv"] += 1
        if not np.array_equal(out, conv2d_loops(x, wt, b, stride, pad, groups)):
            mismatches.append("conv")
        counts["pool"] += 1
        if not np.array_equal(ops.avg_pool2d(Tensor(x), k, stride, pad).data, avg_pool_loops(x, k, stride, pad)):
            mismatches.append("pool")
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 120
    record(2, ok, "exact matches " + ", ".join(f"{k}={v}" for k, v in counts.items())
           + f", mismatches {len(mismatches)}, {elapsed:.0f}s (limit 120s)")
    assert ok


# 3 ----------------------------------------------------------------------------
def test_criterion_3_structure():
    from litesam.config import BackboneConfig
    from litesam.litevit import build_backbone
    from litesam.profile import count_macs, count_params

    default = count_params(build_backbone())
    pruned = count_params(build_backbone(BackboneConfig(embed_dims=[32, 64, 96, 128])))
    conv_only = build_backbone(BackboneConfig(attn_stages=[], input_size=64))
    ratios = [count_macs(conv_only, 2 * s) / count_macs(conv_only, s) for s in (64, 128, 320)]
    ok = (abs(default - 1.16e6) <= 0.15 * 1.16e6 and abs(pruned - 0.54e6) <= 0.15 * 0.54e6
          and all(r == 4 for r in ratios))
    record(3, ok, f"default params {default} (1.16M +-15%), pruned {pruned} (0.54M +-15%), "
                  f"MAC ratios for doubled side {ratios}")
    assert ok


# 4 ----------------------------------------------------------------------------
def test_criterion_4_loss_semantics():
    from litesam.autoppn import build_point_targets, hard_mining_mse, ppn_loss, smooth_l1_box
    from litesam.config import LossWeights, PpnConfig
    from litesam.dataio import SceneSpec, make_scene
    from litesam.segkit import dice_loss, focal_loss, iou_mse, mask_loss, total_loss
    from litesam.tensor import Tensor

    t = lambda a: Tensor(np.asarray(a, dtype=np.float64))
    w, p = LossWeights(), PpnConfig()
    weights_ok = (w.focal, w.dice, w.iou) == (10, 1, 1) and (p.w_point, p.w_box) == (2, 1)

    scene = make_scene(SceneSpec(seed=4, unlabeled=True))
    tg = build_point_targets(scene, (8, 8))
    g = scene.masks[0]
    perfect = t(np.where(g, 1000.0, -1000.0))
    zeros = [
        focal_loss(perfect, g).item(), dice_loss(t(g.astype(float)), g).item(), iou_mse(t(1.0), 1.0).item(),
        mask_loss(perfect, t(1.0), g).item(),
        hard_mining_mse(t(tg.point_heat[None]), tg.point_heat[None], tg.pos_mask[None], tg.valid_mask[None]).item(),
        smooth_l1_box(t(tg.box_reg[None]), tg.box_reg[None], tg.any_pos[None]).item(),
        ppn_loss(t(tg.point_heat[None]), t(tg.box_reg[None]), tg.point_heat[None], tg.box_reg[None],
                 tg.pos_mask[None], tg.valid_mask[None]).item(),
    ]
    zeros.append(float(total_loss(t(0.0), t(0.0)).item()))
    zeros_ok = all(z == 0 for z in zeros)

    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        h, wd = rng.integers(1, 17, size=2)
        pred = rng.random((1, 3, h, wd))
        target = rng.random((1, 3, h, wd)) * (rng.random((1, 3, h, wd)) < 0.3)
        valid = rng.random((1, h, wd)) < 0.8
        if not valid.any():
            continue
        got = hard_mining_mse(t(pred), target, target > 0, valid, 1.0).item()
        # per-channel masked MSE averaged over channels
        ref = np.mean([masked_mse(pred[:, c], target[:, c], valid) for c in range(3)])
        worst = max(worst, abs(got - ref))
    ok = weights_ok and zeros_ok and worst <= 1e-12
    record(4, ok, f"weights (10,1,1)/(2,1) {weights_ok}, losses on perfect predictions {zeros}, "
                  f"fraction-1 vs masked MSE max diff {worst:.1e} (tol 1e-12)")
    assert ok


# 5 ----------------------------------------------------------------------------
def test_criterion_5_grouping_and_targets():
    from litesam.autoppn import build_point_targets, ppn_loss
    from litesam.dataio import AnnotatedImage, SceneSpec, make_scene
    from litesam.groups import LARGE, MEDIUM, SMALL, group_of_box, group_of_ratio
    from litesam.segkit import mask_loss
    from litesam.tensor import Tensor

    t = lambda a: Tensor(np.asarray(a, dtype=np.float64))
    partition = all(group_of_ratio(float(r)) == (LARGE if r >= 0.25 else SMALL if r <= 0.05 else MEDIUM)
                    for r in np.round(np.linspace(0, 1, 10001), 4))
    bounds = (group_of_ratio(0.05) == SMALL and group_of_ratio(0.25) == LARGE
              and group_of_box((0, 0, 49, 0), 1000, 1000) == SMALL
              and group_of_box((0, 0, 249, 0), 1000, 1000) == LARGE)

    rng = np.random.default_rng(5)
    smallest_ok, pairs = True, 0
    yy, xx = np.mgrid[0:64, 0:64] + 0.5
    while pairs < 100:
        disc = lambda: (yy - rng.uniform(8, 56)) ** 2 + (xx - rng.uniform(8, 56)) ** 2 <= rng.uniform(5, 24) ** 2
        a, b = disc(), disc()
        if not (a & b).any() or a.sum() == b.sum():
            continue
        pairs += 1
        small = a if a.sum() < b.sum() else b
        both = build_point_targets(AnnotatedImage(0, 64, 64, [a, b]), (4, 4))
        alone = build_point_targets(AnnotatedImage(0, 64, 64, [small]), (4, 4))
        cells = alone.any_pos
        smallest_ok &= bool(np.array_equal(both.point_heat[:, cells], alone.point_heat[:, cells])
                            and np.array_equal(both.box_reg[:, cells], alone.box_reg[:, cells]))

    invariant, trials = True, 0
    for seed in range(20):
        scene = make_scene(SceneSpec(seed=seed, unlabeled=True))
        tg = build_point_targets(scene, (8, 8))
        inv = ~tg.valid_mask
        heat, box = rng.random((1, 3, 8, 8)), rng.random((1, 4, 8, 8))
        args = (tg.point_heat[None], tg.box_reg[None], tg.pos_mask[None], tg.valid_mask[None])
        base = ppn_loss(t(heat), t(box), *args).item()
        heat[:, :, inv] += rng.normal(size=(1, 3, int(inv.sum()))) * 10
        box[:, :, inv] += rng.random((1, 4, int(inv.sum()))) * 10
        invariant &= ppn_loss(t(heat), t(box), *args).item() == base
        valid = ~scene.unlabeled
        for g in scene.masks[:3]:
            z = rng.normal(size=g.shape)
            ref = mask_loss(t(z), t(0.5), g, valid=valid).item()
            z[scene.unlabeled] = rng.normal(size=int(scene.unlabeled.sum())) * 100
            invariant &= mask_loss(t(z), t(0.5), g, valid=valid).item() == ref
            trials += 1
    ok = partition and bounds and smallest_ok and invariant
    record(5, ok, f"partition over 10001 ratios {partition}, closed boundaries {bounds}, "
                  f"smallest-area rule on {pairs} overlapping pairs {smallest_ok}, "
                  f"unlabeled perturbation bitwise invariant ({20} ppn + {trials} mask cases) {invariant}")
    assert ok


# 6 ----------------------------------------------------------------------------
def test_criterion_6_proposal_economics():
    from litesam.config import ModelConfig, SegEveryConfig
    from litesam.dataio import SceneSpec, make_scene
    from litesam.segkit import Predictor, build_model, seg_every

    model = build_model(ModelConfig())
    grid_calls, ppn_calls, grid_ms, ppn_ms = [], [], 0.0, 0.0
    for seed in range(5):
        image = make_scene(SceneSpec(seed=seed, size=640)).image
        pred = Predictor(model)
        pred.set_image(image)
        g = seg_every(pred, SegEveryConfig(sampler="grid", grid=32))
        pred.set_image(image)
        a = seg_every(pred, SegEveryConfig(sampler="autoppn"), n=256)
        grid_calls.append(g.decoder_calls)
        ppn_calls.append(a.decoder_calls)
        grid_ms += g.wall_time_ms
        ppn_ms += a.wall_time_ms
    ratio = ppn_ms / grid_ms
    ok = all(c == 1024 for c in grid_calls) and all(c <= 256 for c in ppn_calls) and ratio <= 0.5
    record(6, ok, f"grid calls {grid_calls}, autoppn calls {ppn_calls}, wall time autoppn {ppn_ms:.0f}ms "
                  f"vs grid {grid_ms:.0f}ms (ratio {ratio:.3f}, limit 0.5)")
    assert ok


# 7 ----------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_7_learning_sanity():
    from litesam.config import RunConfig
    from litesam.dataio import make_scenes
    from litesam.segkit import Predictor, dataset_average_recall, random_prompts, seg_every
    from litesam.train import train

    cfg = RunConfig()
    assert (cfg.data.scenes, cfg.data.train_size, cfg.optimizer.epochs, cfg.optimizer.lr) == (200, 128, 4, 4e-5)
    t0 = time.perf_counter()
    model, log = train(cfg)
    means = log.epoch_means()
    drop = (means[0] - means[-1]) / means[0]

    held_out = make_scenes(50, cfg.data.train_size, seed=cfg.seed + 1)
    pred = Predictor(model)
    ppn_items, rnd_items, ppn_calls = [], [], 0
    rng = np.random.default_rng([cfg.seed, 50])
    for scene in held_out:
        pred.set_image(scene.image)
        a = seg_every(pred, cfg.segevery, n=256)
        ppn_calls += a.decoder_calls
        ppn_items.append((a.masks, a.scores, scene.masks))
        r = seg_every(pred, cfg.segevery, prompts=random_prompts(256, pred.side, rng))
        rnd_items.append((r.masks, r.scores, scene.masks))
    ar_ppn = dataset_average_recall(ppn_items, 256)
    ar_rnd = dataset_average_recall(rnd_items, 256)
    elapsed = time.perf_counter() - t0
    drop_ok = drop >= 0.5
    ar_ok = ar_ppn >= 1.5 * ar_rnd and ar_ppn > 0
    ok = drop_ok and ar_ok and elapsed < 1800
    record(7, ok, f"epoch-mean L_total {[round(m, 4) for m in means]}, drop {drop:.1%} (need >= 50%); "
                  f"AR@256 autoppn {ar_ppn:.4f} ({ppn_calls} calls) vs random {ar_rnd:.4f} "
                  f"(need >= 1.5x); {elapsed:.0f}s (limit 1800s)")
    assert ok


# 8 ----------------------------------------------------------------------------
def test_criterion_8_cli_determinism(tmp_path):
    cfg = {"model": {"backbone": {"input_size": 64}}, "data": {"scenes": 2, "train_size": 64},
           "optimizer": {"epochs": 1, "prompts_per_image": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    commands = {
        "profile": ["profile", "--config", "c.json"],
        "segany": ["segany", "--config", "c.json", "--point", "20,30"],
        "segevery-grid": ["segevery", "--config", "c.json", "--sampler", "grid", "--grid", "16"],
        "segevery-autoppn": ["segevery", "--config", "c.json", "--sampler", "autoppn"],
        "gen-targets": ["gen-targets", "--config", "c.json", "--scenes", "3", "--size", "64"],
        "bench-sampling": ["bench-sampling", "--config", "c.json", "--scenes", "2", "--n", "16", "--grid", "4"],
        "train": ["train", "--config", "c.json"],
        "grad-check": ["grad-check", "--seeds", "1", "--checks", "conv2d,softmax,mask_loss"],
    }
    differing = []
    for name, args in commands.items():
        out = tmp_path / name
        runs = []
        for threads in ("1", "4"):
            shutil.rmtree(out, ignore_errors=True)
            env = dict(os.environ, LITESAM_THREADS=threads)
            r = subprocess.run([sys.executable, "-m", "litesam.cli", *args, "--seed", "7", "--out", str(out)],
                               cwd=tmp_path, env=env, capture_output=True)
            files = {}
            if out.exists():
                files = {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*"))
                         if p.is_file() and p.name != "timing.json"}
            runs.append((r.returncode, r.stdout, files))
        if runs[0] != runs[1] or runs[0][0] != 0:
            differing.append(name)
    ok = not differing
    record(8, ok, f"{len(commands)} commands rerun with LITESAM_THREADS=1 and 4, byte-identical stdout and "
                  f"outputs (wall-time file excluded)" + (f"; differing {differing}" if differing else ""))
    assert ok
