"""Region pooling and additive region attention.

A region sequence is a tensor ``[..., R, c]`` whose R rows are the
row-major cells of a square ``G x G`` region grid.
"""

from __future__ import annotations

import math
from typing import Dict, Mapping, Tuple

import numpy as np

from rafanet import tensor as T
from rafanet.errors import ConfigError, DimensionError
from rafanet.rng import Rng
from rafanet.tensor import Tensor, layer_norm

__all__ = ["pool_regions", "region_grid_side", "attention_matrix", "region_attention", "layer_norm"]


def region_grid_side(num_regions: int) -> int:
    side = math.isqrt(num_regions)
    if side * side != num_regions or side < 1:
        raise ConfigError(f"region count {num_regions} is not a perfect square")
    return side


def region_layout(num_regions: int) -> list:
    """Sequence index -> (grid row, grid col)."""
    side = region_grid_side(num_regions)
    return [divmod(i, side) for i in range(num_regions)]


def pool_regions(grid: Tensor, delta: int) -> Tensor:
    """Mean-pool non-overlapping ``delta x delta`` patches into ``[..., R, c]``."""
    if grid.ndim < 3:
        raise DimensionError(f"pool_regions: need [..., h, w, c], got {grid.shape}")
    h, w, c = grid.shape[-3:]
    if delta < 1 or h % delta or w % delta:
        raise ConfigError(f"grid side {h}x{w} is not divisible by region size {delta}")
    if h // delta != w // delta:
        raise ConfigError(f"regions of size {delta} on a {h}x{w} grid do not form a square layout")
    rows = np.kron(np.eye(h // delta), np.full((1, delta), 1.0 / delta))
    cols = np.kron(np.eye(w // delta), np.full((1, delta), 1.0 / delta))
    pooled = T.linear_along(T.linear_along(grid, rows, axis=-3), cols, axis=-2)
    return pooled.reshape(grid.shape[:-3] + ((h // delta) * (w // delta), c))


def init_attention_params(c: int, rng: Rng) -> Dict[str, Tensor]:
    bound = 1.0 / math.sqrt(c)

    def u(*shape):
        return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)

    return {
        "attention.W_G": u(c, c),
        "attention.W_Gp": u(c, c),
        "attention.b_G": Tensor(np.zeros(c), requires_grad=True),
        "attention.W_H": u(1, c),
        "attention.b_H": Tensor(0.0, requires_grad=True),
        "attention.W_M": Tensor(rng.uniform(-1.0, 1.0), requires_grad=True),
        "attention.b_M": Tensor(0.0, requires_grad=True),
        "attention.ln_gain": Tensor(np.ones(c), requires_grad=True),
        "attention.ln_bias": Tensor(np.zeros(c), requires_grad=True),
    }


def attention_matrix(regions: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Row-stochastic ``[..., R, R]`` matrix; row i scores region i against every j."""
    if regions.ndim < 2:
        raise DimensionError(f"region_attention: need [..., R, c], got {regions.shape}")
    *lead, r, c = regions.shape
    if p["attention.W_G"].shape != (c, c) or p["attention.W_Gp"].shape != (c, c):
        raise DimensionError(
            f"region_attention: regions {regions.shape} vs W_G {p['attention.W_G'].shape}, "
            f"W_Gp {p['attention.W_Gp'].shape}"
        )
    lead = tuple(lead)
    query = (regions @ p["attention.W_G"].T).reshape(lead + (r, 1, c))
    key = (regions @ p["attention.W_Gp"].T).reshape(lead + (1, r, c))
    hidden = T.tanh(query + key + p["attention.b_G"])  # [..., R, R, c]
    score = T.sigmoid(hidden @ p["attention.W_H"].T + p["attention.b_H"]).reshape(lead + (r, r))
    return T.softmax(score * p["attention.W_M"] + p["attention.b_M"], axis=-1)


def region_attention(regions: Tensor, p: Mapping[str, Tensor], return_matrix: bool = False):
    """Attention-weighted mixing of region descriptors followed by a shared LayerNorm."""
    m = attention_matrix(regions, p)
    mixed = m @ regions
    out = layer_norm(mixed, p["attention.ln_gain"], p["attention.ln_bias"])
    return (out, m) if return_matrix else out
