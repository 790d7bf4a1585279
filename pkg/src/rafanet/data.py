"""Datasets on disk (``manifest.csv`` + PPM images) and the synthetic texture generator."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rafanet.backbone import load_feature_grid
from rafanet.errors import FormatError, ManifestError
from rafanet.ppm import read_ppm, write_ppm
from rafanet.rng import Rng

MANIFEST = "manifest.csv"


@dataclass
class Dataset:
    inputs: np.ndarray  # uint8 [N, h, w, 3] images, or float [N, h, w, c] feature grids
    labels: np.ndarray
    paths: List[str]

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


def manifest_path(root) -> Path:
    root = Path(root)
    return root if root.is_file() else root / MANIFEST


def read_manifest(root) -> List[Tuple[str, int]]:
    path = manifest_path(root)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["path", "label"]:
                raise ManifestError(f"{path}: expected header 'path,label', got {header}")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise ManifestError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
                try:
                    label = int(row[1])
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
                if label < 0:
                    raise ManifestError(f"{path}:{lineno}: negative label {label}")
                rows.append((row[0], label))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return rows


def write_manifest(root, rows: Sequence[Tuple[str, int]]) -> None:
    with open(Path(root) / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label"])
        writer.writerows(rows)


def load_dataset(root, num_classes: Optional[int] = None, features: bool = False) -> Dataset:
    """Load every item listed in ``root``'s manifest into memory.

    With ``features=True`` the entries are RAFA1 feature grids instead of PPM images.
    """
    path = manifest_path(root)
    rows = read_manifest(path)
    if not rows:
        raise ManifestError(f"{path}: manifest lists no samples")
    base = path.parent
    items, labels = [], []
    for rel, label in rows:
        if num_classes is not None and label >= num_classes:
            raise ManifestError(f"{path}: label {label} for {rel} is out of range for {num_classes} classes")
        full = base / rel
        try:
            item = load_feature_grid(full).data if features else read_ppm(full)
        except (OSError, FormatError) as exc:
            raise ManifestError(f"cannot read {full}: {exc}") from exc
        if items and item.shape != items[0].shape:
            raise ManifestError(f"{full}: shape {item.shape} differs from {items[0].shape}")
        items.append(item)
        labels.append(label)
    return Dataset(np.stack(items), np.asarray(labels, dtype=np.int64), [r for r, _ in rows])


# ---------------------------------------------------------------------------
# synthetic textures

TEXTURES = ("hstripes", "checker", "blob", "gradient", "vstripes", "diagonal", "rings", "dots")


def _texture(kind: str, size: int, rng: Rng) -> np.ndarray:
    """A ``[size, size]`` pattern in [0, 1] with randomised phase/frequency/position."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    period = rng.uniform(0.12, 0.22)
    phase = rng.uniform(0, 2 * np.pi)
    if kind == "hstripes":
        return 0.5 + 0.5 * np.sin(2 * np.pi * yy / period + phase)
    if kind == "vstripes":
        return 0.5 + 0.5 * np.sin(2 * np.pi * xx / period + phase)
    if kind == "diagonal":
        return 0.5 + 0.5 * np.sin(2 * np.pi * (xx + yy) / (1.4 * period) + phase)
    if kind == "checker":
        oy, ox = rng.uniform(0, period, 2)
        return ((np.floor((yy + oy) / period) + np.floor((xx + ox) / period)) % 2).astype(np.float64)
    if kind == "blob":
        cy, cx = rng.uniform(0.3, 0.7, 2)
        radius = rng.uniform(0.15, 0.3)
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
    if kind == "gradient":
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)
        return np.clip(ramp + 0.5, 0.0, 1.0)
    if kind == "rings":
        cy, cx = rng.uniform(0.35, 0.65, 2)
        r = np.hypot(yy - cy, xx - cx)
        return 0.5 + 0.5 * np.sin(2 * np.pi * r / period + phase)
    if kind == "dots":
        oy, ox = rng.uniform(0, period, 2)
        fy = ((yy + oy) / period) % 1.0 - 0.5
        fx = ((xx + ox) / period) % 1.0 - 0.5
        return (np.hypot(fy, fx) < 0.25).astype(np.float64)
    raise ValueError(f"unknown texture {kind!r}")


def synth_image(label: int, size: int, rng: Rng, noise: float = 20.0) -> np.ndarray:
    kind = TEXTURES[label % len(TEXTURES)]
    pattern = _texture(kind, size, rng)
    # classes beyond the texture families reuse them with a shifted palette
    palette_shift = (label // len(TEXTURES)) * 0.37
    fg = (rng.uniform(0.45, 1.0, 3) + palette_shift) % 1.0 * 255
    bg = (rng.uniform(0.0, 0.45, 3) + palette_shift) % 1.0 * 255
    img = bg + pattern[..., None] * (fg - bg)
    img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def split_counts(n: int, fractions: Sequence[float]) -> List[int]:
    counts = [int(round(n * f)) for f in fractions[:-1]]
    counts.append(n - sum(counts))
    if counts[-1] < 0:
        raise ValueError(f"split fractions {fractions} exceed 1")
    return counts


def generate_synthetic(
    out_dir,
    num_classes: int = 4,
    per_class: int = 100,
    seed: int = 0,
    size: int = 64,
    fractions: Sequence[float] = (0.7, 0.1, 0.2),
    noise: float = 20.0,
) -> dict:
    """Write a stratified train/val/test texture dataset; returns ``{split: count}``.

    Layout: ``out_dir/manifest.csv`` lists every image; ``out_dir/<split>/manifest.csv``
    lists that split with paths relative to the split directory.
    """
    if num_classes < 1 or per_class < 1:
        raise ValueError("need at least one class and one image per class")
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be three non-negative numbers, got {fractions}")
    out = Path(out_dir)
    splits = ("train", "val", "test")
    for split in splits:
        (out / split).mkdir(parents=True, exist_ok=True)
    rows = {split: [] for split in splits}
    base = Rng(seed)
    for label in range(num_classes):
        order = base.derive(label, 0).permutation(per_class)
        counts = split_counts(per_class, fractions)
        assignment = np.repeat(np.arange(3), counts)[order]
        for idx in range(per_class):
            split = splits[assignment[idx]]
            name = f"c{label:02d}_{idx:05d}.ppm"
            write_ppm(out / split / name, synth_image(label, size, base.derive(label, 1, idx), noise))
            rows[split].append((name, label))
    for split in splits:
        write_manifest(out / split, rows[split])
    write_manifest(out, [(f"{split}/{name}", label) for split in splits for name, label in rows[split]])
    return {split: len(rows[split]) for split in splits}


def dataset_exists(root) -> bool:
    return os.path.isfile(manifest_path(root))
