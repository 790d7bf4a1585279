"""Base feature extraction: a small trainable CNN or precomputed feature files,
followed by bilinear upsampling of the feature grid.

Feature grids are tensors shaped ``[h, w, c]`` or ``[N, h, w, c]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from rafanet import tensor as T
from rafanet.checkpoint import PathLike, load_tensors, save_tensors
from rafanet.errors import ConfigError, ContractError, DimensionError, FormatError
from rafanet.rng import Rng
from rafanet.tensor import Tensor

BACKBONE_KINDS = ("tiny_cnn", "file_features")


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "tiny_cnn"
    conv_stages: Tuple[Tuple[int, int], ...] = ((8, 2), (16, 2), (32, 2))
    input_h: int = 64
    input_w: int = 64
    upsample_target: int = 12
    in_channels: int = 3
    # subtracted from the [0, 1]-scaled pixels; centred inputs keep SGD well conditioned
    pixel_offset: float = 0.5
    # only used by kind="file_features"
    feature_channels: int = 32

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}; choose from {BACKBONE_KINDS}")
        if self.kind == "tiny_cnn":
            self.grid_shape()  # validates the stride chain

    def grid_shape(self) -> Tuple[int, int, int]:
        """``(h, w, c)`` of the grid before upsampling."""
        if self.kind == "file_features":
            raise ConfigError("grid shape of file features is read from the files")
        if not self.conv_stages:
            raise ConfigError("tiny_cnn needs at least one conv stage")
        h, w = self.input_h, self.input_w
        for out_ch, stride in self.conv_stages:
            if out_ch < 1 or stride < 1:
                raise ConfigError(f"bad conv stage ({out_ch}, {stride})")
            if h % stride or w % stride:
                raise ConfigError(f"stride {stride} does not divide feature size {h}x{w}")
            h, w = h // stride, w // stride
        return h, w, self.conv_stages[-1][0]

    @property
    def channels(self) -> int:
        if self.kind == "file_features":
            return self.feature_channels
        return self.conv_stages[-1][0]


def init_backbone_params(cfg: BackboneConfig, rng: Rng) -> Dict[str, Tensor]:
    params: Dict[str, Tensor] = {}
    if cfg.kind != "tiny_cnn":
        return params
    cin = cfg.in_channels
    for i, (cout, _) in enumerate(cfg.conv_stages):
        bound = math.sqrt(6.0 / (9 * cin))  # relu follows: keep activation variance
        params[f"backbone.conv{i}.weight"] = Tensor(rng.uniform(-bound, bound, (3, 3, cin, cout)), requires_grad=True)
        params[f"backbone.conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    return params


def images_to_tensor(images: np.ndarray, offset: float = 0.0) -> Tensor:
    """uint8 ``[N, h, w, 3]`` (or one ``[h, w, 3]`` image) scaled to ``[0, 1]``, minus ``offset``."""
    return Tensor(np.asarray(images, dtype=np.float64) / 255.0 - offset)


def tiny_cnn_forward(images, params: Dict[str, Tensor], cfg: BackboneConfig) -> Tensor:
    """Stack of (3x3 conv, stride, relu) stages.

    ``images`` may be raw uint8 pixels or an already-scaled :class:`Tensor`
    (which is used as is, without ``cfg.pixel_offset``).
    """
    x = images if isinstance(images, Tensor) else images_to_tensor(images, cfg.pixel_offset)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    if x.shape[1:] != (cfg.input_h, cfg.input_w, cfg.in_channels):
        raise DimensionError(
            f"tiny_cnn: expected images {(cfg.input_h, cfg.input_w, cfg.in_channels)}, got {x.shape[1:]}"
        )
    for i, (_, stride) in enumerate(cfg.conv_stages):
        x = T.relu(T.conv2d(x, params[f"backbone.conv{i}.weight"], stride) + params[f"backbone.conv{i}.bias"])
    return x.reshape(x.shape[1:]) if single else x


def save_feature_grid(path: PathLike, grid) -> None:
    data = grid.data if isinstance(grid, Tensor) else np.asarray(grid, dtype=np.float64)
    save_tensors(path, {"features": data})


def load_feature_grid(path: PathLike) -> Tensor:
    """Load a single rank-3 ``[h, w, c]`` tensor (no gradient tracking)."""
    tensors = load_tensors(path)
    if len(tensors) != 1:
        raise FormatError(f"{path}: feature file must hold exactly one tensor, found {len(tensors)}")
    (arr,) = tensors.values()
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise FormatError(f"{path}: feature grid must be rank-3 [h, w, c], got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: feature grid has non-finite values")
    return Tensor(arr)


def upsample_matrix(src: int, dst: int) -> np.ndarray:
    """``[dst, src]`` bilinear weights, half-pixel centres, edge-clamped."""
    if dst < src:
        raise ContractError(f"upsample target {dst} is smaller than source side {src}")
    scale = dst / src
    coord = np.clip((np.arange(dst) + 0.5) / scale - 0.5, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    m = np.zeros((dst, src))
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_upsample(grid: Tensor, target: int) -> Tensor:
    """Upsample the two spatial axes of ``[..., h, w, c]`` to ``target x target``."""
    if grid.ndim < 3:
        raise DimensionError(f"bilinear_upsample: need [..., h, w, c], got {grid.shape}")
    h, w = grid.shape[-3], grid.shape[-2]
    if target == h and target == w:
        return grid
    out = T.linear_along(grid, upsample_matrix(h, target), axis=-3)
    return T.linear_along(out, upsample_matrix(w, target), axis=-2)
