"""One test per acceptance criterion; each records a PASS/FAIL line for the terminal summary."""

import filecmp
import math
import time

import numpy as np
import pytest

from oracles import reference_metrics
from rafanet import tensor as T
from rafanet.attention import attention_matrix, init_attention_params
from rafanet.augment import EraseConfig, augment_pipeline, random_erase
from rafanet.cli import main
from rafanet.data import generate_synthetic, load_dataset
from rafanet.ffn import PyramidConfig, spatial_pyramid_pool
from rafanet.metrics import compute_cir, compute_metrics
from rafanet.model import VARIANTS, ModelConfig, gradient_check_model
from rafanet.refine import attention_weights, gaussian_dropout, init_gating_params
from rafanet.rng import Rng
from rafanet.tensor import Tensor
from rafanet.train import TrainConfig, evaluate, train

SEEDS = (0, 1, 2)


def test_full_model_gradient_check(acceptance):
    start = time.perf_counter()
    report = gradient_check_model(seed=0, eps=1e-6, tol=1e-4, variant="full")
    elapsed = time.perf_counter() - start
    ok = report.passed and elapsed < 120
    acceptance(1, "full-model gradient check", ok,
               f"{len(report.errors)} groups, max rel err {report.max_error:.2e}, {elapsed:.1f}s")
    assert report.passed, report.failing
    assert elapsed < 120


def test_attention_rows_and_phi_sum_to_one(acceptance):
    rng = Rng(2024)
    worst = 0.0
    for draw in range(1000):
        c = int(rng.integers(1, 9))
        side = int(rng.integers(1, 5))
        batch = (int(rng.integers(1, 3)),) if draw % 2 else ()
        params = {**init_attention_params(c, rng.derive(draw, 0)), **init_gating_params(c, rng.derive(draw, 1))}
        for p in params.values():
            p.data = p.data + rng.normal(0.0, 1.0, p.shape)
        x = Tensor(rng.normal(0.0, 3.0, batch + (side * side, c)))
        m = attention_matrix(x, params).data
        _, phi = attention_weights(x, params, return_weights=True)
        worst = max(worst, np.max(np.abs(m.sum(axis=-1) - 1.0)), np.max(np.abs(phi.data.sum(axis=-1) - 1.0)))
    ok = worst <= 1e-12
    acceptance(2, "attention normalisation", ok, f"max |row sum - 1| = {worst:.1e} over 1000 draws")
    assert ok


def test_pyramid_fixed_length_and_convexity(acceptance):
    rng = Rng(7)
    rows, convex = set(), True
    for draw in range(200):
        side = (3, 6)[draw % 2]
        mode = ("mean", "max")[(draw // 2) % 2]
        x = rng.normal(0.0, 5.0, (side * side, int(rng.integers(1, 6))))
        out = spatial_pyramid_pool(Tensor(x), PyramidConfig((1, 2, 3), mode)).data
        rows.add((side, out.shape[0]))
        convex &= bool(np.all(out >= x.min(axis=0) - 1e-12) and np.all(out <= x.max(axis=0) + 1e-12))
    ok = rows == {(3, 14), (6, 14)} and convex
    acceptance(3, "pyramid fixed length", ok, f"rows per side {sorted(rows)}, convex on all draws: {convex}")
    assert ok


def test_random_erase_statistics(acceptance):
    cfg = EraseConfig(crop_h=64, crop_w=64)
    rng = Rng(99)
    blank = np.zeros((64, 64, 3), dtype=np.uint8)
    fracs = np.empty(100_000)
    rectangular = True
    for i in range(fracs.size):
        mask = random_erase(blank, cfg, rng) == 127
        rows, cols = np.nonzero(mask[:, :, 0])
        fracs[i] = rows.size / (64 * 64)
        box = (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1)
        rectangular &= box == rows.size and bool(np.all(mask.all(axis=2) == mask[:, :, 0]))
    img = Rng(5).integers(0, 256, (80, 80, 3)).astype(np.uint8)
    a = augment_pipeline(img, cfg, None, training=False)
    b = augment_pipeline(img, cfg, Rng(1), training=False)
    inference_ok = np.array_equal(a, b) and np.array_equal(a, img[8:72, 8:72])
    ok = (
        fracs.min() >= 0.04
        and fracs.max() <= 0.49
        and abs(fracs.mean() - 0.2025) <= 0.005
        and rectangular
        and inference_ok
    )
    acceptance(4, "random-erase statistics", ok,
               f"fraction range [{fracs.min():.4f}, {fracs.max():.4f}], mean {fracs.mean():.4f}, "
               f"fill-127 rectangles: {rectangular}, inference centre crop deterministic: {inference_ok}")
    assert ok


def test_gaussian_dropout_noise(acceptance):
    ones = Tensor(np.ones(1_000_000))
    std25 = float(np.std(gaussian_dropout(ones, 0.25, True, Rng(11)).data))
    std50 = float(np.std(gaussian_dropout(ones, 0.5, True, Rng(12)).data))
    x = Tensor(Rng(13).normal(0.0, 1.0, (64, 32)))
    passthrough = gaussian_dropout(x, 0.25, False)
    identical = passthrough.data.tobytes() == x.data.tobytes()
    ok = abs(std25 - 0.5774) <= 0.01 and abs(std50 - 1.0) <= 0.01 and identical
    acceptance(5, "gaussian dropout", ok, f"std q=0.25 {std25:.4f}, q=0.5 {std50:.4f}, inference identical: {identical}")
    assert ok


@pytest.fixture(scope="module")
def ladder(synth_root):
    """Test top-1 and wall time of every variant over three seeds, 30 epochs, drop at 15."""
    train_set = load_dataset(synth_root / "train")
    val_set = load_dataset(synth_root / "val")
    test_set = load_dataset(synth_root / "test")
    aug = EraseConfig(crop_h=64, crop_w=64)
    results = {}
    for seed in SEEDS:
        for variant in VARIANTS:
            start = time.perf_counter()
            cfg = TrainConfig(epochs=30, batch_size=8, lr_initial=0.008, lr_drop_epoch=15, variant=variant, seed=seed)
            model_cfg = ModelConfig(variant=variant, num_classes=4)
            result = train(train_set, cfg, model_cfg, val_set, aug)
            top1 = evaluate(result.params, model_cfg, test_set, aug).top1
            results[seed, variant] = (top1, time.perf_counter() - start)
    return {"sizes": (len(train_set), len(test_set)), "runs": results}


def test_end_to_end_training(ladder, acceptance):
    top1, seconds = ladder["runs"][0, "full"]
    sizes = ladder["sizes"]
    ok = sizes == (280, 80) and top1 >= 0.95 and seconds < 600
    acceptance(6, "end-to-end training", ok,
               f"full variant test top-1 {top1:.4f} on {sizes[0]} train / {sizes[1]} test, {seconds:.0f}s")
    assert ok


def test_ablation_direction(ladder, acceptance):
    runs = ladder["runs"]
    monotone = []
    for seed in SEEDS:
        scores = [runs[seed, v][0] for v in VARIANTS]
        monotone.append(all(b >= a - 0.01 for a, b in zip(scores, scores[1:])))
    full_beats_base = runs[0, "full"][0] >= runs[0, "baseline"][0]
    ok = full_beats_base and sum(monotone) >= 2
    table = "; ".join(
        f"seed {s}: " + " -> ".join(f"{runs[s, v][0]:.4f}" for v in VARIANTS) for s in SEEDS
    )
    acceptance(7, "ablation direction", ok, f"{table}; monotone seeds {sum(monotone)}/3")
    assert ok


def test_metrics_match_brute_force(acceptance):
    rng = Rng(31)
    k = 10
    probs = rng.uniform(0.0, 1.0, (500, k))
    probs[::7, 3] = probs[::7, 5]  # ties exercise the tie-break
    probs /= probs.sum(axis=1, keepdims=True)
    labels = rng.integers(0, k, 500)
    got = compute_metrics(probs, labels, k, topk=5)
    ref = reference_metrics(probs.tolist(), labels.tolist(), k, 5)
    same = (
        got.top1 == ref["top1"]
        and got.top5 == ref["topk"]
        and got.precision == ref["precision"]
        and got.recall == ref["recall"]
        and got.f1 == ref["f1"]
        and got.confusion.tolist() == ref["confusion"]
    )
    cir = compute_cir([10, 100])
    ok = same and cir == 0.1
    acceptance(8, "metrics oracle", ok, f"exact match on 500 pairs: {same}, CIR(10, 100) = {cir}")
    assert ok


def test_training_is_deterministic(tmp_path, acceptance):
    generate_synthetic(tmp_path / "data", num_classes=4, per_class=10, seed=3)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["train", "--data", str(tmp_path / "data"), "--out", str(out), "--epochs", "2",
                "--lr-drop-epoch", "1", "--seed", "5"]
        assert main(argv) == 0
        first = (out / "train_log.csv").read_text().splitlines()[1].split(",")
        runs.append((first[2], out / "checkpoint.rafa"))
    same_loss = runs[0][0] == runs[1][0]
    same_ckpt = filecmp.cmp(runs[0][1], runs[1][1], shallow=False)
    ok = same_loss and same_ckpt
    acceptance(9, "determinism", ok, f"epoch-1 loss {runs[0][0]} vs {runs[1][0]}, checkpoints identical: {same_ckpt}")
    assert ok


def test_layer_norm_contract(acceptance):
    rng = Rng(17)
    worst_mean = worst_std = worst_shift = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 64))
        # spreads well above the eps inside the square root, which caps the std accuracy
        x = rng.normal(0.0, 1.0, n) * 10.0 ** rng.uniform(-2, 2) + rng.uniform(-100, 100)
        if np.ptp(x) == 0:
            continue
        gain, bias = Tensor(np.ones(n)), Tensor(np.zeros(n))
        y = T.layer_norm(Tensor(x), gain, bias).data
        shifted = T.layer_norm(Tensor(x + rng.uniform(-50, 50)), gain, bias).data
        worst_mean = max(worst_mean, abs(float(y.mean())))
        worst_std = max(worst_std, abs(float(y.std()) - 1.0))
        worst_shift = max(worst_shift, float(np.max(np.abs(y - shifted))))
    ok = worst_mean <= 1e-9 and worst_std <= 1e-6 and worst_shift <= 1e-9
    acceptance(10, "layer norm contract", ok,
               f"max |mean| {worst_mean:.1e}, max |std - 1| {worst_std:.1e}, max shift drift {worst_shift:.1e}")
    assert ok
