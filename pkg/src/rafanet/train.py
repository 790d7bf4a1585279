"""SGD training loop with a step learning-rate schedule, and dataset evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np

from rafanet.augment import EraseConfig, augment_pipeline
from rafanet.checkpoint import save_tensors
from rafanet.data import Dataset
from rafanet.errors import ConfigError, ContractError, ManifestError
from rafanet.metrics import Metrics, compute_metrics
from rafanet.model import VARIANTS, ModelConfig, RafaParams, forward, init_params
from rafanet.refine import cross_entropy
from rafanet.rng import Rng
from rafanet.tensor import Tensor

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "lr", "train_loss", "train_top1", "val_top1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr_initial: float = 0.008
    lr_drop_epoch: int = 50
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    seed: int = 0
    variant: str = "full"
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}")
        if self.lr_initial < 0:
            raise ConfigError(f"lr_initial must be non-negative, got {self.lr_initial}")
        if self.lr_drop_epoch > self.epochs:
            raise ConfigError(f"lr_drop_epoch {self.lr_drop_epoch} exceeds epochs {self.epochs}")
        if self.lr_drop_factor <= 0:
            raise ConfigError(f"lr_drop_factor must be positive, got {self.lr_drop_factor}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for zero-based ``epoch``."""
    if epoch < cfg.lr_drop_epoch:
        return cfg.lr_initial
    return cfg.lr_initial / cfg.lr_drop_factor


class SGD:
    """Heavy-ball SGD: ``v = momentum * v + grad; p -= lr * v``."""

    def __init__(self, params: Mapping[str, Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        sgd_step(self.params, lr, self.momentum, self.velocity)


def sgd_step(params: Mapping[str, Tensor], lr: float, momentum: float, state: Dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise ContractError(f"trainable parameter {name} has no gradient")
    for name, p in params.items():
        if not p.requires_grad:
            continue
        v = state.get(name)
        v = p.grad.copy() if v is None else momentum * v + p.grad
        state[name] = v
        p.data -= lr * v
        p.grad = None


def _prepare_batch(data: Dataset, idx: np.ndarray, aug: Optional[EraseConfig], training: bool, rng: Optional[Rng]):
    if aug is None:
        return data.inputs[idx]
    imgs = [
        augment_pipeline(data.inputs[i], aug, rng.derive(int(i)) if training else None, training)
        for i in idx
    ]
    return np.stack(imgs)


def predict_proba(
    params: Mapping[str, Tensor], model_cfg: ModelConfig, data: Dataset, aug: Optional[EraseConfig], batch_size: int = 64
) -> np.ndarray:
    """Inference-mode class probabilities for every sample."""
    out = []
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        out.append(forward(_prepare_batch(data, idx, aug, False, None), params, model_cfg).probs.data)
    return np.concatenate(out)


def evaluate(
    params: Mapping[str, Tensor],
    model_cfg: ModelConfig,
    data: Dataset,
    aug: Optional[EraseConfig] = None,
    topk: int = 5,
    batch_size: int = 64,
) -> Metrics:
    """Metrics in inference mode: no augmentation beyond the centre crop, no dropout."""
    if len(data) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    if np.any(data.labels >= model_cfg.num_classes):
        raise ManifestError(f"dataset has labels >= {model_cfg.num_classes} classes")
    probs = predict_proba(params, model_cfg, data, aug, batch_size)
    return compute_metrics(probs, data.labels, model_cfg.num_classes, topk)


@dataclass
class TrainResult:
    params: RafaParams  # best-by-validation parameters, latest on ties (last epoch without validation data)
    log: List[dict]
    final_params: RafaParams


def _snapshot(params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(snapshot: Mapping[str, np.ndarray]) -> RafaParams:
    out = {}
    for name, arr in snapshot.items():
        t = Tensor(arr, requires_grad=True)
        t.name = name
        out[name] = t
    return out


def write_log(path, rows: List[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def train(
    train_data: Dataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    val_data: Optional[Dataset] = None,
    aug: Optional[EraseConfig] = None,
    out_dir=None,
    params: Optional[RafaParams] = None,
) -> TrainResult:
    """Train ``cfg.variant`` on ``train_data``.

    ``aug`` enables on-the-fly augmentation of image inputs (``None`` for
    feature-grid datasets). When ``out_dir`` is given, ``train_log.csv`` is
    rewritten after every epoch and ``checkpoint.rafa`` holds the best
    parameters by validation top-1 so far (latest on ties).
    """
    if len(train_data) == 0:
        raise ManifestError("training manifest is empty")
    model_cfg = replace(model_cfg, variant=cfg.variant)
    if np.any(train_data.labels >= model_cfg.num_classes):
        raise ManifestError(f"training labels must be < {model_cfg.num_classes}")
    if aug is not None:
        aug.check_input_size(*train_data.inputs.shape[1:3])
        bb = model_cfg.backbone
        if (aug.crop_h, aug.crop_w) != (bb.input_h, bb.input_w):
            raise ConfigError(f"crop {aug.crop_h}x{aug.crop_w} must equal the backbone input {bb.input_h}x{bb.input_w}")
    if params is None:
        params = init_params(model_cfg, cfg.seed)
    optimizer = SGD(params, cfg.momentum)
    base = Rng(cfg.seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows: List[dict] = []
    best_score, best = -math.inf, None
    n = len(train_data)
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = base.derive(1, epoch).permutation(n)
        aug_rng = base.derive(2, epoch)
        loss_sum, correct = 0.0, 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = _prepare_batch(train_data, idx, aug, True, aug_rng)
            labels = train_data.labels[idx]
            pred = forward(batch, params, model_cfg, training=True, rng=base.derive(3, epoch, step))
            loss = cross_entropy(pred.probs, labels)
            loss.backward()
            optimizer.step(lr)
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum(pred.predicted_class == labels))

        val_top1 = math.nan
        if val_data is not None and len(val_data):
            val_top1 = evaluate(params, model_cfg, val_data, aug, batch_size=cfg.eval_batch_size).top1
        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_top1": correct / n,
            "val_top1": val_top1,
        }
        rows.append(row)
        log.info("epoch %d lr %.5g loss %.4f train %.3f val %.3f", *row.values())

        score = val_top1 if not math.isnan(val_top1) else -math.inf
        # ties go to the later epoch: a saturated validation set should not pin an early, high-lr snapshot
        if best is None or score >= best_score or math.isnan(val_top1):
            best_score, best = score, _snapshot(params)
            if out is not None:
                save_tensors(out / "checkpoint.rafa", best)
        if out is not None:
            write_log(out / "train_log.csv", rows)

    return TrainResult(params=_restore(best), log=rows, final_params=params)
