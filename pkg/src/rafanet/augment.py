"""Hybrid random-erasing augmentation: local erase, then global rotate/scale/crop.

Images are ``uint8`` arrays of shape ``[h, w, 3]``. Every function is a pure
function of its inputs and the supplied :class:`~rafanet.rng.Rng`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from rafanet.errors import ConfigError, ContractError
from rafanet.rng import Rng


@dataclass(frozen=True)
class EraseConfig:
    frac_lo: float = 0.2
    frac_hi: float = 0.7
    fill: int = 127
    rotation_deg: float = 25.0
    scale_frac: float = 0.25
    crop_h: int = 224
    crop_w: int = 224
    apply_prob: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.frac_lo <= self.frac_hi <= 1.0:
            raise ConfigError(f"need 0 < frac_lo <= frac_hi <= 1, got {self.frac_lo}, {self.frac_hi}")
        if not 0 <= self.fill <= 255:
            raise ConfigError(f"fill value {self.fill} outside [0, 255]")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"apply_prob {self.apply_prob} outside [0, 1]")
        if not 0.0 <= self.scale_frac < 1.0:
            raise ConfigError(f"scale_frac {self.scale_frac} outside [0, 1)")
        if self.rotation_deg < 0:
            raise ConfigError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ConfigError(f"crop size must be positive, got {self.crop_h}x{self.crop_w}")

    def check_input_size(self, h: int, w: int) -> None:
        if self.crop_h > h or self.crop_w > w:
            raise ConfigError(f"crop {self.crop_h}x{self.crop_w} does not fit {h}x{w} images")


def _check_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ContractError(f"expected a non-empty [h, w, 3] image, got shape {img.shape}")


def _extent(frac: float, side: int, cfg: EraseConfig) -> int:
    """``frac * side`` rounded, kept within ``[ceil(lo * side), floor(hi * side)]`` when that range is nonempty."""
    n = int(math.floor(frac * side + 0.5))
    lo, hi = math.ceil(cfg.frac_lo * side - 1e-9), math.floor(cfg.frac_hi * side + 1e-9)
    if lo <= hi:
        n = min(max(n, lo), hi)
    return min(side, max(1, n))


def draw_erase_box(h: int, w: int, cfg: EraseConfig, rng: Rng) -> Tuple[int, int, int, int]:
    """Draw ``(s_x, s_y, dh, dw)``: row/col origin and extent of the rectangle."""
    dh = _extent(rng.uniform(cfg.frac_lo, cfg.frac_hi), h, cfg)
    dw = _extent(rng.uniform(cfg.frac_lo, cfg.frac_hi), w, cfg)
    # rejection keeps the origin uniform over all admissible positions
    while True:
        sx = int(rng.integers(0, h))
        sy = int(rng.integers(0, w))
        if sx + dh <= h and sy + dw <= w:
            return sx, sy, dh, dw


def _erase(img: np.ndarray, cfg: EraseConfig, rng: Rng) -> Tuple[np.ndarray, float]:
    _check_image(img)
    out = img.copy()
    if cfg.apply_prob < 1.0 and (cfg.apply_prob == 0.0 or rng.uniform() >= cfg.apply_prob):
        return out, 0.0
    h, w = img.shape[:2]
    sx, sy, dh, dw = draw_erase_box(h, w, cfg, rng)
    out[sx : sx + dh, sy : sy + dw, :] = cfg.fill
    return out, dh * dw / (h * w)


def random_erase(img: np.ndarray, cfg: EraseConfig, rng: Rng) -> np.ndarray:
    return _erase(img, cfg, rng)[0]


def affine_warp(img: np.ndarray, angle_deg: float, scale: float, fill: int) -> np.ndarray:
    """Rotate counter-clockwise (as displayed) and zoom about the image centre.

    The output keeps the input size. Each output pixel is bilinearly sampled
    from the inverse-mapped source position; neighbours outside the source
    contribute ``fill``.
    """
    _check_image(img)
    h, w = img.shape[:2]
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    src_x = cx + (cos * dx - sin * dy) / scale
    src_y = cy + (sin * dx + cos * dy) / scale

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    wy = (src_y - y0)[..., None]
    wx = (src_x - x0)[..., None]
    src = img.astype(np.float64)

    def gather(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = src[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(inside[..., None], vals, float(fill))

    out = (
        gather(y0, x0) * (1 - wy) * (1 - wx)
        + gather(y0, x0 + 1) * (1 - wy) * wx
        + gather(y0 + 1, x0) * wy * (1 - wx)
        + gather(y0 + 1, x0 + 1) * wy * wx
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def crop(img: np.ndarray, top: int, left: int, h: int, w: int) -> np.ndarray:
    return img[top : top + h, left : left + w, :].copy()


def center_crop(img: np.ndarray, h: int, w: int) -> np.ndarray:
    H, W = img.shape[:2]
    if h > H or w > W:
        raise ConfigError(f"crop {h}x{w} does not fit {H}x{W} image")
    return crop(img, (H - h) // 2, (W - w) // 2, h, w)


def global_transform(img: np.ndarray, cfg: EraseConfig, rng: Rng) -> np.ndarray:
    """Random rotation in ``±rotation_deg``, zoom in ``1 ± scale_frac``, then a random crop."""
    _check_image(img)
    H, W = img.shape[:2]
    cfg.check_input_size(H, W)
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    scale = rng.uniform(1.0 - cfg.scale_frac, 1.0 + cfg.scale_frac)
    if angle == 0.0 and scale == 1.0:
        warped = img
    else:
        warped = affine_warp(img, angle, scale, cfg.fill)
    top = int(rng.integers(0, H - cfg.crop_h + 1))
    left = int(rng.integers(0, W - cfg.crop_w + 1))
    return crop(warped, top, left, cfg.crop_h, cfg.crop_w)


def augment_with_info(
    img: np.ndarray, cfg: EraseConfig, rng: Rng, training: bool
) -> Tuple[np.ndarray, Optional[float]]:
    """Like :func:`augment_pipeline` but also returns the erased area fraction (``None`` at inference)."""
    if not training:
        _check_image(img)
        return center_crop(img, cfg.crop_h, cfg.crop_w), None
    erased, frac = _erase(img, cfg, rng)
    return global_transform(erased, cfg, rng), frac


def augment_pipeline(img: np.ndarray, cfg: EraseConfig, rng: Rng, training: bool) -> np.ndarray:
    """Erase then globally transform when training; deterministic centre crop otherwise."""
    return augment_with_info(img, cfg, rng, training)[0]


class AugmentPipeline:
    """Pipeline bound to a config and input size, validated once up front."""

    def __init__(self, cfg: EraseConfig, input_h: int, input_w: int):
        cfg.check_input_size(input_h, input_w)
        self.cfg = cfg
        self.input_shape = (input_h, input_w)

    def __call__(self, img: np.ndarray, rng: Rng, training: bool) -> np.ndarray:
        if img.shape[:2] != self.input_shape:
            raise ContractError(f"pipeline built for {self.input_shape} images, got {img.shape[:2]}")
        return augment_pipeline(img, self.cfg, rng, training)
