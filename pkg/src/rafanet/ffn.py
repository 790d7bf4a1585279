"""Dual pooled feed-forward paths over attended region descriptors.

Path A pools the region grid with a spatial pyramid, path B with a local
sliding average; each then runs a separable 1-D convolution and a global
average, and the two summaries are fused by addition and LayerNorm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from rafanet import tensor as T
from rafanet.attention import region_grid_side
from rafanet.errors import ConfigError, DimensionError
from rafanet.rng import Rng
from rafanet.tensor import Tensor


@dataclass(frozen=True)
class PyramidConfig:
    levels: Tuple[int, ...] = (1, 2, 3)
    mode: str = "mean"

    def __post_init__(self):
        if not self.levels or any(n < 1 for n in self.levels):
            raise ConfigError(f"pyramid levels must be a nonempty list of ints >= 1, got {self.levels}")
        if self.mode not in ("mean", "max"):
            raise ConfigError(f"pyramid mode must be 'mean' or 'max', got {self.mode!r}")

    @property
    def bins(self) -> int:
        return sum(n * n for n in self.levels)


def pyramid_bins(side: int, levels) -> List[np.ndarray]:
    """Region indices of every bin, level-major then row-major.

    Cell ``k`` of ``n`` spans ``[floor(side*k/n), ceil(side*(k+1)/n))`` so
    every region lands in at least one bin per level; neighbouring cells
    overlap when ``n`` does not divide ``side``.
    """
    out = []
    for n in levels:
        if n > side:
            raise ConfigError(f"pyramid level {n} exceeds region grid side {side}")
        spans = [(side * k // n, -(-side * (k + 1) // n)) for k in range(n)]
        for r0, r1 in spans:
            for c0, c1 in spans:
                out.append(np.array([r * side + c for r in range(r0, r1) for c in range(c0, c1)]))
    return out


def spatial_pyramid_pool(regions: Tensor, cfg: PyramidConfig) -> Tensor:
    """``[..., R, c]`` -> ``[..., B, c]`` with B fixed by the pyramid levels."""
    side = region_grid_side(regions.shape[-2])
    bins = pyramid_bins(side, cfg.levels)
    if cfg.mode == "max":
        return T.bin_max(regions, bins)
    m = np.zeros((len(bins), side * side))
    for row, idx in enumerate(bins):
        m[row, idx] = 1.0 / len(idx)
    return T.linear_along(regions, m, axis=-2)


def init_ffn_params(c: int, rng: Rng) -> Dict[str, Tensor]:
    params = {}
    for path in ("A", "B"):
        params[f"ffn.sepconv_{path}.depthwise"] = Tensor(
            rng.uniform(-1 / math.sqrt(3), 1 / math.sqrt(3), (3, c)), requires_grad=True
        )
        params[f"ffn.sepconv_{path}.pointwise"] = Tensor(
            rng.uniform(-math.sqrt(6.0 / c), math.sqrt(6.0 / c), (c, c)), requires_grad=True
        )
        params[f"ffn.sepconv_{path}.bias"] = Tensor(np.zeros(c), requires_grad=True)
    params["ffn.fuse_ln.gain"] = Tensor(np.ones(c), requires_grad=True)
    params["ffn.fuse_ln.bias"] = Tensor(np.zeros(c), requires_grad=True)
    return params


def _sepconv(x: Tensor, p: Mapping[str, Tensor], path: str) -> Tensor:
    return T.conv1d_separable(
        x,
        p[f"ffn.sepconv_{path}.depthwise"],
        p[f"ffn.sepconv_{path}.pointwise"],
        p[f"ffn.sepconv_{path}.bias"],
    )


def path_a(regions: Tensor, cfg: PyramidConfig, p: Mapping[str, Tensor]) -> Tensor:
    """Pyramid pool -> separable conv over the bin sequence -> mean over bins."""
    return _sepconv(spatial_pyramid_pool(regions, cfg), p, "A").mean(axis=-2)


def path_b(regions: Tensor, p: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """Sliding 3-window average -> separable conv; returns the ``[..., R, c]`` map and its mean."""
    seq = _sepconv(T.avgpool1d(regions, 3, 1, "same"), p, "B")
    return seq, seq.mean(axis=-2)


def fuse_paths(s_hat: Tensor, t_hat: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    if s_hat.shape != t_hat.shape:
        raise DimensionError(f"fuse_paths: summaries differ in shape, {s_hat.shape} vs {t_hat.shape}")
    return T.layer_norm(s_hat + t_hat, p["ffn.fuse_ln.gain"], p["ffn.fuse_ln.bias"])
