"""Attention-weighted refinement, context gating, Gaussian dropout, classifier and loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from rafanet import tensor as T
from rafanet.errors import ConfigError, ContractError, DimensionError
from rafanet.rng import Rng
from rafanet.tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class Prediction:
    probs: Tensor
    predicted_class: np.ndarray = field(init=False)  # int array for batched input

    def __post_init__(self):
        self.predicted_class = np.argmax(self.probs.data, axis=-1)


def init_gating_params(c: int, rng: Rng) -> Dict[str, Tensor]:
    bound = 1.0 / math.sqrt(c)
    return {
        "refine.w_phi": Tensor(rng.uniform(-bound, bound, c), requires_grad=True),
        "refine.b_phi": Tensor(0.0, requires_grad=True),
    }


def init_classifier_params(c: int, num_classes: int, rng: Rng, layer_norms: int = 2) -> Dict[str, Tensor]:
    """Classifier weights plus ``layer_norms`` (0-2) LayerNorms applied before it."""
    params = {}
    names = ["refine.final_ln", "refine.pre_cls_ln"][:layer_norms]
    for name in names:
        params[f"{name}.gain"] = Tensor(np.ones(c), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(c), requires_grad=True)
    bound = 1.0 / math.sqrt(c)
    params["refine.classifier.W"] = Tensor(rng.uniform(-bound, bound, (c, num_classes)), requires_grad=True)
    params["refine.classifier.b"] = Tensor(np.zeros(num_classes), requires_grad=True)
    return params


def attention_weights(t_map: Tensor, p: Mapping[str, Tensor], return_weights: bool = False):
    """Softmax-over-positions weighted sum of the rows of ``[..., R, c]``."""
    if t_map.ndim < 2 or t_map.shape[-1] != p["refine.w_phi"].shape[0]:
        raise DimensionError(f"attention_weights: map {t_map.shape} vs w_phi {p['refine.w_phi'].shape}")
    phi = T.softmax(t_map @ p["refine.w_phi"] + p["refine.b_phi"], axis=-1)  # [..., R]
    lead = phi.shape
    pooled = (phi.reshape(lead[:-1] + (1, lead[-1])) @ t_map).reshape(t_map.shape[:-2] + t_map.shape[-1:])
    return (pooled, phi) if return_weights else pooled


def context_gate(x: Tensor, gate: Tensor) -> Tensor:
    """Residual plus sigmoid-gated copy: ``x + x * sigmoid(gate)``."""
    if x.shape != gate.shape:
        raise DimensionError(f"context_gate: {x.shape} vs {gate.shape}")
    return x + x * T.sigmoid(gate)


def dropout_std(q: float) -> float:
    if not 0.0 <= q < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {q}")
    return math.sqrt(q / (1.0 - q))


def gaussian_dropout(x: Tensor, q: float, training: bool, rng: Optional[Rng] = None) -> Tensor:
    """Multiply by Normal(1, sqrt(q / (1 - q))) noise while training; identity otherwise."""
    std = dropout_std(q)
    if not training or q == 0.0:
        return x
    if rng is None:
        raise ContractError("gaussian_dropout in training mode needs an Rng")
    return x * Tensor(rng.normal(1.0, std, x.shape))


def classify(
    features: Tensor, p: Mapping[str, Tensor], q: float, training: bool, rng: Optional[Rng] = None
) -> Prediction:
    """Dropout, then whichever LayerNorms are present in ``p``, an affine map to K logits and softmax."""
    x = gaussian_dropout(features, q, training, rng)
    for name in ("refine.final_ln", "refine.pre_cls_ln"):
        if f"{name}.gain" in p:
            x = T.layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"])
    logits = x @ p["refine.classifier.W"] + p["refine.classifier.b"]
    return Prediction(T.softmax(logits, axis=-1))


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean of ``-log(max(p[label], 1e-12))`` over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    k = probs.shape[-1]
    if labels.shape != probs.shape[:-1]:
        raise DimensionError(f"cross_entropy: labels {labels.shape} vs probs {probs.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractError(f"class index out of range for {k} classes: {labels}")
    if probs.ndim == 1:
        picked = probs[int(labels)]
    else:
        picked = probs[np.arange(labels.shape[0]), labels]
    return T.neg(T.log(T.clamp_min(picked, PROB_FLOOR))).mean()
