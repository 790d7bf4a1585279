"""Classification metrics: top-k accuracy, confusion matrix, macro P/R/F1, class-imbalance ratio."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Sequence

import numpy as np

from rafanet.errors import ContractError


@dataclass
class Metrics:
    top1: float
    top5: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # rows: true class, cols: predicted class
    cir: float
    extra_topk: Dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["confusion"] = self.confusion.astype(int).tolist()
        extra = out.pop("extra_topk")
        for k, v in sorted(extra.items()):
            out[f"top{k}"] = v
        return out


def compute_cir(counts: Sequence[int]) -> float:
    """Smallest class count over largest class count."""
    counts = np.asarray(counts)
    if counts.size == 0 or np.any(counts <= 0):
        raise ContractError(f"class counts must all be positive, got {counts.tolist()}")
    return float(counts.min() / counts.max())


def confusion_matrix(labels, predicted, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labels, predicted), 1)
    return m


def topk_accuracy(probs: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose label is among the ``k`` highest probabilities.

    Ties are broken towards the lower class index.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(ranked == labels[:, None], axis=1)))


def macro_scores(confusion: np.ndarray):
    """Macro precision, recall and F1; a class with an empty denominator scores 0."""
    confusion = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(confusion)
    predicted = confusion.sum(axis=0)
    actual = confusion.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    # correctly rounded sums: the result does not depend on summation order
    k = len(tp)
    return math.fsum(precision) / k, math.fsum(recall) / k, math.fsum(f1) / k


def compute_metrics(probs: np.ndarray, labels, num_classes: int, topk: int = 5) -> Metrics:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ContractError("cannot evaluate an empty dataset")
    if probs.shape != (labels.size, num_classes):
        raise ContractError(f"probabilities {probs.shape} do not match {labels.size} labels x {num_classes} classes")
    predicted = np.argsort(-probs, axis=1, kind="stable")[:, 0]
    confusion = confusion_matrix(labels, predicted, num_classes)
    precision, recall, f1 = macro_scores(confusion)
    counts = np.bincount(labels, minlength=num_classes)
    extra = {topk: topk_accuracy(probs, labels, topk)} if topk not in (1, 5) else {}
    return Metrics(
        top1=topk_accuracy(probs, labels, 1),
        top5=topk_accuracy(probs, labels, 5),
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=confusion,
        cir=compute_cir(counts[counts > 0]),
        extra_topk=extra,
    )
