"""Acceptance checks; each test prints one PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import csv
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import box_count_dimension  # noqa: E402

from texton.cli import main  # noqa: E402
from texton.config import RunConfig  # noqa: E402
from texton.data import five_crop, split_random  # noqa: E402
from texton.ensemble import (METHODS, PROPOSED, EnsembleConfig, MethodSelection,  # noqa: E402
                             TextureEnsemble, aggregate_bilinear)
from texton.experiments import published_fmd_design, rf_importance  # noqa: E402
from texton.fractal import fractal_dimension_map  # noqa: E402
from texton.gradcheck import layer_suite  # noqa: E402
from texton.layers import EncodingLayer  # noqa: E402
from texton.synth import SyntheticTextureSpec, fbm, synth_generate  # noqa: E402
from texton.tensor import Tensor, default_dtype  # noqa: E402
from texton.training import TrainConfig, lr_schedule  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
# Proposed-cell accuracy bound, confirmed by a desk pilot (97.5% on 4 classes x 40 images).
PROPOSED_MIN_ACC = 90.0


def emit(request, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}"
    capman = request.config.pluginmanager.getplugin("capturemanager") if request else None
    if capman is not None:
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


def test_criterion_1_shape_law(request):
    t = time.time()
    want = {("deepten", "histogram", "fap"): 272, METHODS: 320, ("deepten", "gap"): 176}
    got = {}
    rng = np.random.default_rng(0)
    for methods, width in want.items():
        cfg = EnsembleConfig(MethodSelection.from_methods(methods), n_classes=10)
        model = TextureEnsemble(cfg, rng)
        got[methods] = model.head.in_features
    # one real forward pass at full resolution confirms the constructed widths
    model = TextureEnsemble(EnsembleConfig(PROPOSED, n_classes=10), rng)
    x = Tensor(rng.standard_normal((2, 3, 224, 224)).astype(np.float32))
    fwd = model.aggregate(model.features(x)).shape[1]
    ok = got == want and fwd == 272 and time.time() - t < 60
    detail = ", ".join(f"{'+'.join(k)}={v}" for k, v in got.items())
    emit(request, 1, "aggregated widths", ok,
         f"{detail}; forward width {fwd}; {time.time() - t:.1f}s")


def test_criterion_2_bilinear_law(request):
    rng = np.random.default_rng(2)
    pairs = rng.integers(1, 300, (20, 2))
    widths_ok = all(aggregate_bilinear(Tensor(np.ones((1, i))), Tensor(np.ones((1, j)))).shape[1]
                    == i * j for i, j in pairs)
    ineq_ok = all(i * j >= i + j for i in range(2, 300) for j in range(2, 300))
    emit(request, 2, "bilinear width", widths_ok and ineq_ok,
         f"20 random pairs width=I*J: {widths_ok}; I*J>=I+J for 2<=I,J<300: {ineq_ok}")


def test_criterion_3_gradient_suite(request):
    t = time.time()
    reports = layer_suite(n_coords=100, h=1e-5, tolerance=1e-4)
    ok = all(r.passed and r.n_checked >= 100 for r in reports) and len(reports) == 6
    detail = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in reports)
    emit(request, 3, "gradient checks (float64, h=1e-5, tol 1e-4)", ok,
         f"{detail}; {time.time() - t:.1f}s")


def test_criterion_4_encoding_invariants(request):
    rng = np.random.default_rng(4)
    with default_dtype(np.float64):
        layer = EncodingLayer(32, rng, n_codes=8, out_features=16)
        x = Tensor(rng.standard_normal((4, 32, 7, 7)))
        weights, _ = layer.assign(x)
        row_err = float(np.abs(weights.data.sum(axis=2) - 1).max())
        norm_err = float(np.abs(np.linalg.norm(layer.encode(x).data, axis=1) - 1).max())
        single, _ = EncodingLayer(32, rng, n_codes=1, out_features=4).assign(x)
        ones = bool((single.data == 1.0).all())
    ok = row_err <= 1e-6 and norm_err <= 1e-6 and ones
    emit(request, 4, "encoding invariants", ok,
         f"row-sum err {row_err:.1e}, norm err {norm_err:.1e}, one codeword all ones: {ones}")


def test_criterion_5_fractal_oracle(request):
    t = time.time()
    with default_dtype(np.float64):
        def layer_dim(img):
            return fractal_dimension_map(Tensor(img[None, None])).data[0, 0]

        flat = layer_dim(np.full((64, 64), 0.3))
        flat_oracle = box_count_dimension(np.full((32, 32), 0.3))
        ordered_layer = ordered_oracle = 0
        max_diff = 0.0
        for seed in range(20):
            rough = fbm(64, np.random.default_rng(seed), hurst=0.2)
            smooth = fbm(64, np.random.default_rng(seed), hurst=0.8)
            lr_, ls_ = layer_dim(rough), layer_dim(smooth)
            orr, ors = box_count_dimension(rough), box_count_dimension(smooth)
            max_diff = max(max_diff, np.abs(lr_ - orr).max(), np.abs(ls_ - ors).max())
            ordered_layer += lr_.mean() > ls_.mean()
            ordered_oracle += orr.mean() > ors.mean()
    flat_ok = abs(flat.mean() - 2.0) <= 0.1 and abs(flat_oracle.mean() - 2.0) <= 0.1
    ok = flat_ok and ordered_layer == 20 and ordered_oracle == 20 and max_diff < 1e-6
    emit(request, 5, "fractal dimension", ok,
         f"constant -> {flat.mean():.3f} (oracle {flat_oracle.mean():.3f}); H=0.2 > H=0.8 in "
         f"{ordered_layer}/20 seeds (oracle {ordered_oracle}/20); layer vs oracle max diff "
         f"{max_diff:.1e}; {time.time() - t:.0f}s")


def test_criterion_6_ablation_grid(request, tmp_path):
    t = time.time()
    data, out = tmp_path / "synth", tmp_path / "results"
    assert main(["synth", "--out", str(data), "--samples-per-class", "40",
                 "--image-size", "64", "--seed", "0"]) == 0
    code = main(["ablate", "--dataset", str(data), "--out", str(out), "--scale", "desk"])
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    proposed = [r for r in rows if (r["deepten"], r["gap"], r["histogram"], r["fap"])
                == ("1", "0", "1", "1")]
    acc = float(proposed[0]["mean_acc"]) if proposed else float("nan")
    minutes = (time.time() - t) / 60
    ok = code == 0 and len(rows) == 15 and acc >= PROPOSED_MIN_ACC and minutes < 60
    emit(request, 6, "ablation grid (desk scale, 4 classes, 64x64, 15 epochs)", ok,
         f"{len(rows)} cells; deepten+histogram+fap test acc {acc:.1f}% "
         f"(bound {PROPOSED_MIN_ACC:.0f}%); {minutes:.1f} min")


def test_criterion_7_feature_importance(request):
    X, y = published_fmd_design()
    rep = rf_importance(X, y, n_trees=200, seeds=range(10))
    rank = rep.majority_ranking
    ok = rank[0] == "gap" and rank[1] == "deepten" and set(rank[2:]) == {"histogram", "fap"}
    votes = sum(r == rank for r in rep.rankings)
    emit(request, 7, "feature importance of the published grid", ok,
         f"majority ranking {' > '.join(rank)} ({votes}/10 seeds); importances "
         + ", ".join(f"{m} {v:.3f}" for m, v in zip(rep.methods, rep.importances)))


def test_criterion_8_protocol_fidelity(request):
    m = synth_generate(SyntheticTextureSpec(samples_per_class=25, image_size=16))
    split_random(m, 10, 0.75, seed=0)
    splits_ok = len(m.splits) == 10 and all(
        len(tr) == 75 and len(te) == 25 and not np.intersect1d(tr, te).size for tr, te in m.splits)
    crops = five_crop(np.zeros((3, 256, 341), np.float32), 224)
    crops_ok = len(crops) == 5 and all(c.shape == (3, 224, 224) for c in crops)
    worst = 0.0
    for sched in ("cosine", "cosine_warm_restarts"):
        cfg = TrainConfig(epochs=30, lr=1e-3, scheduler=sched)
        steps = 7
        period, start = 10 * steps, 0
        for t in range(30 * steps):
            if sched == "cosine":
                ref = 0.5 * 1e-3 * (1 + math.cos(math.pi * t / (30 * steps)))
            else:
                while t >= start + period:
                    start, period = start + period, period * 2
                ref = 0.5 * 1e-3 * (1 + math.cos(math.pi * (t - start) / period))
            worst = max(worst, abs(lr_schedule(t, cfg, steps) - ref))
    ok = splits_ok and crops_ok and worst <= 1e-9
    emit(request, 8, "protocol fidelity", ok,
         f"10 splits at 75/25: {splits_ok}; five crops of 224: {crops_ok}; "
         f"max schedule deviation {worst:.1e}")


def test_criterion_9_determinism(request, tmp_path):
    data = tmp_path / "synth"
    assert main(["synth", "--out", str(data), "--samples-per-class", "8",
                 "--image-size", "64"]) == 0
    args = ["train", "--dataset", str(data), "--scale", "desk", "--seed", "11",
            "--workers", "1", "--set", "train.epochs=3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    emit(request, 9, "determinism", a == b and len(a) > 0,
         f"metrics.csv bit-identical across two runs: {a == b} ({len(a)} bytes)")


def test_criterion_10_full_scale_documented(request):
    readme = (ROOT / "README.md").read_text()
    cfg = RunConfig()
    bb = cfg.backbone
    shapes_ok = (bb.out_channels == 512 and bb.output_size() == 7 and cfg.augment.crop == 224
                 and cfg.augment.resize == 256 and cfg.train.momentum == 0.9)
    documented = "not reproducible at desk scale" in readme.lower()
    emit(request, 10, "full-scale benchmark numbers", shapes_ok and documented,
         "not reproduced here (needs pretrained weights and licensed datasets); README states "
         f"this: {documented}; paper-scale shapes configured: {shapes_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
