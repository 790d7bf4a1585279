"""The classification head assembled from its parts, as a ladder of variants.

``baseline``       backbone -> global average -> classifier
``roi_attention``  + upsampling, region pooling and region attention
``roi_ffn``        + the two pooled feed-forward paths and their fusion
``full``           + attention-weighted context gating
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from rafanet import tensor as T
from rafanet.attention import init_attention_params, pool_regions, region_attention
from rafanet.backbone import BackboneConfig, bilinear_upsample, init_backbone_params, tiny_cnn_forward
from rafanet.errors import ConfigError, DimensionError
from rafanet.ffn import PyramidConfig, fuse_paths, init_ffn_params, path_a, path_b, pyramid_bins
from rafanet.refine import (
    Prediction,
    attention_weights,
    classify,
    context_gate,
    dropout_std,
    init_classifier_params,
    init_gating_params,
)
from rafanet.rng import Rng
from rafanet.tensor import Tensor

VARIANTS = ("baseline", "roi_attention", "roi_ffn", "full")

RafaParams = Dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    num_classes: int = 4
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    region_size: int = 4
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    dropout: float = 0.25
    second_ln: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        dropout_std(self.dropout)
        if self.variant == "baseline":
            return
        target = self.backbone.upsample_target
        if self.region_size < 1 or target % self.region_size:
            raise ConfigError(f"grid side {target} is not divisible by region size {self.region_size}")
        if self.backbone.kind == "tiny_cnn":
            h, w, _ = self.backbone.grid_shape()
            if target < max(h, w):
                raise ConfigError(f"upsample target {target} is smaller than backbone grid {h}x{w}")
        pyramid_bins(self.grid_side, self.pyramid.levels)

    @property
    def channels(self) -> int:
        return self.backbone.channels

    @property
    def grid_side(self) -> int:
        """Side G of the region grid; R = G * G."""
        return self.backbone.upsample_target // self.region_size

    @property
    def num_regions(self) -> int:
        return self.grid_side**2


def init_params(cfg: ModelConfig, seed: int = 0) -> RafaParams:
    """Fresh parameters for ``cfg.variant``; only the modules it uses are created."""
    rng = Rng(seed, 0xBEEF)
    c = cfg.channels
    params: RafaParams = {}
    params.update(init_backbone_params(cfg.backbone, rng.derive(0)))
    if cfg.variant != "baseline":
        params.update(init_attention_params(c, rng.derive(1)))
    if cfg.variant in ("roi_ffn", "full"):
        params.update(init_ffn_params(c, rng.derive(2)))
    if cfg.variant == "full":
        params.update(init_gating_params(c, rng.derive(3)))
    norms = 0 if cfg.variant == "baseline" else (2 if cfg.second_ln else 1)
    params.update(init_classifier_params(c, cfg.num_classes, rng.derive(4), layer_norms=norms))
    for name, p in params.items():
        p.name = name
        p.requires_grad = True
    return params


def backbone_features(inputs, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    if cfg.backbone.kind == "tiny_cnn":
        return tiny_cnn_forward(inputs, params, cfg.backbone)
    feats = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=np.float64))
    if feats.shape[-1] != cfg.channels:
        raise DimensionError(f"feature grid {feats.shape} does not have {cfg.channels} channels")
    return feats


def head_features(grid: Tensor, params: Mapping[str, Tensor], cfg: ModelConfig, trace: Optional[dict] = None) -> Tensor:
    """Everything between the backbone grid and the classifier: returns ``[..., c]``."""
    if cfg.variant == "baseline":
        return grid.mean(axis=(-3, -2))
    upsampled = bilinear_upsample(grid, cfg.backbone.upsample_target)
    regions = pool_regions(upsampled, cfg.region_size)
    attended, m = region_attention(regions, params, return_matrix=True)
    if trace is not None:
        trace.update(regions=regions, attention=m, attended=attended)
    if cfg.variant == "roi_attention":
        return attended.mean(axis=-2)
    s_hat = path_a(attended, cfg.pyramid, params)
    t_map, t_hat = path_b(attended, params)
    fused = fuse_paths(s_hat, t_hat, params)
    if trace is not None:
        trace.update(s_hat=s_hat, t_map=t_map, t_hat=t_hat, fused=fused)
    if cfg.variant == "roi_ffn":
        return fused
    pooled, phi = attention_weights(t_map, params, return_weights=True)
    if trace is not None:
        trace.update(phi=phi, t_attn=pooled)
    return context_gate(fused, pooled)


def forward(
    inputs,
    params: Mapping[str, Tensor],
    cfg: ModelConfig,
    training: bool = False,
    rng: Optional[Rng] = None,
    trace: Optional[dict] = None,
) -> Prediction:
    """Class probabilities for a batch ``[N, ...]`` or a single input."""
    grid = backbone_features(inputs, params, cfg)
    feats = head_features(grid, params, cfg, trace)
    return classify(feats, params, cfg.dropout, training, rng)


def desk_instance(seed: int = 0, variant: str = "full", batch: int = 2):
    """Small random problem for gradient checks: 16x16 images -> 4x4x16 grid -> 12x12, R=9, K=4.

    Parameters are jittered away from their initial values so LayerNorm gains,
    biases and scalar weights are not checked at a symmetric point.
    """
    cfg = ModelConfig(
        variant=variant,
        num_classes=4,
        backbone=BackboneConfig(conv_stages=((8, 2), (16, 2)), input_h=16, input_w=16, upsample_target=12),
        region_size=4,
    )
    params = init_params(cfg, seed)
    rng = Rng(seed, 0xC0FFEE)
    for p in params.values():
        p.data = np.asarray(p.data + rng.normal(0.0, 0.1, p.shape))
    images = rng.integers(0, 256, (batch, 16, 16, 3)).astype(np.uint8)
    labels = rng.integers(0, cfg.num_classes, batch)
    return cfg, params, images, labels


def gradient_check_model(seed: int = 0, eps: float = 1e-6, tol: float = 1e-4, variant: str = "full"):
    """Finite-difference check of every parameter group on :func:`desk_instance`."""
    from rafanet.gradcheck import gradient_check
    from rafanet.refine import cross_entropy

    cfg, params, images, labels = desk_instance(seed, variant)
    return gradient_check(lambda: cross_entropy(forward(images, params, cfg).probs, labels), params, eps, tol)
