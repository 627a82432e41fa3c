"""Malaria cell image ingestion, deterministic splitting, batching, and a synthetic stand-in corpus."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, LayoutError

log = logging.getLogger(__name__)

CLASSES = ("uninfected", "parasitized")
CLASS_DIRS = {"Uninfected": 0, "Parasitized": 1}
DATA_ENV = "MALARIA_DATA_DIR"

# Philox key high words keep the split, shuffle and dropout streams disjoint
_SPLIT_STREAM = 2
_SHUFFLE_STREAM = 1


def _philox(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    key = (seed & 0xFFFFFFFFFFFFFFFF) | (stream << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, counter]))


@dataclass
class LabeledImage:
    pixels: np.ndarray  # [H, W, 3] float32 in [0, 1]
    label: int          # 1 = parasitized, 0 = uninfected
    source_id: str


@dataclass
class SkippedFile:
    source_id: str
    reason: str


def _axis_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, edge-clamped: output i samples input coordinate (i + 0.5) * src / dst - 0.5
    pos = np.clip((np.arange(dst) + 0.5) * (src / dst) - 0.5, 0, src - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, (pos - lo).astype(np.float32)


def resize_bilinear(img: np.ndarray, size: Sequence[int]) -> np.ndarray:
    """Plain (non-antialiased) bilinear interpolation of an [H, W, C] float image."""
    h, w = int(size[0]), int(size[1])
    if img.shape[:2] == (h, w):
        return img
    r0, r1, fr = _axis_weights(img.shape[0], h)
    c0, c1, fc = _axis_weights(img.shape[1], w)
    fr, fc = fr[:, None, None], fc[None, :, None]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def decode_png(path: str | os.PathLike, target_size: Sequence[int]) -> np.ndarray:
    """Decode to RGB (alpha dropped), scale to [0, 1] and bilinear-resize to ``(H, W)``."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / np.float32(255.0)
    return np.clip(resize_bilinear(arr, target_size), 0.0, 1.0).astype(np.float32)


def load_image_dataset(root: str | os.PathLike, target_size: Sequence[int] = (128, 128),
                       workers: int = 4, skipped: list[SkippedFile] | None = None,
                       fraction: float = 1.0, seed: int = 0) -> list[LabeledImage]:
    """Read ``<root>/Parasitized/*.png`` and ``<root>/Uninfected/*.png``.

    Records come back sorted by ``source_id`` (relative POSIX path) regardless
    of filesystem order. Undecodable files are appended to ``skipped`` and left
    out. ``fraction`` < 1 keeps a seeded subset of the file list before decoding.
    """
    root = Path(root)
    files = []
    for dirname, label in CLASS_DIRS.items():
        d = root / dirname
        if not d.is_dir():
            raise LayoutError(f"expected directory {d} (layout: <root>/Parasitized, <root>/Uninfected)")
        files.extend((p.relative_to(root).as_posix(), p, label)
                     for p in d.iterdir() if p.suffix.lower() == ".png")
    files.sort(key=lambda f: f[0])
    if fraction < 1.0:
        keep = max(1, int(round(len(files) * fraction)))
        idx = np.sort(_philox(seed, _SPLIT_STREAM, 1).permutation(len(files))[:keep])
        files = [files[i] for i in idx]

    def load(item):
        sid, path, label = item
        try:
            return LabeledImage(decode_png(path, target_size), label, sid)
        except Exception as exc:  # any decoder failure means skip-and-report
            return SkippedFile(sid, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(load, files))
    records = [r for r in results if isinstance(r, LabeledImage)]
    bad = [r for r in results if isinstance(r, SkippedFile)]
    if bad:
        log.warning("skipped %d undecodable files", len(bad))
        if skipped is not None:
            skipped.extend(bad)
    return records


@dataclass
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_811(n_records: int, seed: int = 0) -> DatasetSplit:
    """Seeded permutation: first ceil(n/10) to test, next ceil(n/10) to validation, rest to train.

    Rounding the held-out tenth up gives 22,046 / 2,756 / 2,756 for the
    27,558-image corpus.
    """
    if n_records < 10:
        raise ConfigError(f"need at least 10 records to split 8:1:1, got {n_records}")
    perm = _philox(seed, _SPLIT_STREAM).permutation(n_records)
    tenth = -(-n_records // 10)
    return DatasetSplit(train=np.sort(perm[2 * tenth:]), validation=np.sort(perm[tenth:2 * tenth]),
                        test=np.sort(perm[:tenth]), seed=seed)


def onehot(labels: Sequence[int], dtype=np.float32) -> np.ndarray:
    """[1, 0] = uninfected, [0, 1] = parasitized."""
    return np.eye(2, dtype=dtype)[np.asarray(labels, dtype=np.int64)]


def class_counts(records: Sequence[LabeledImage], indices: Sequence[int]) -> dict[str, int]:
    labels = np.array([records[i].label for i in indices], dtype=np.int64)
    return {name: int(np.sum(labels == k)) for k, name in enumerate(CLASSES)}


def epoch_order(indices: Sequence[int], seed: int, epoch: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    return indices[_philox(seed, _SHUFFLE_STREAM, epoch).permutation(len(indices))]


def batch_iter(records: Sequence[LabeledImage], indices: Sequence[int], batch_size: int = 32,
               seed: int = 0, epoch: int = 0, shuffle: bool = True
               ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images [B, H, W, 3], onehot [B, 2])``; the last batch may be short."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = epoch_order(indices, seed, epoch) if shuffle else np.asarray(indices, dtype=np.int64)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        x = np.stack([records[i].pixels for i in chunk])
        y = onehot([records[i].label for i in chunk])
        yield x, y


def _smooth_background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.array([0.86, 0.62, 0.66]) + rng.uniform(-0.06, 0.06, size=3)
    field = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.02, 0.12, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += rng.uniform(0.01, 0.04) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    img = base + field[..., None] * np.array([1.0, 0.8, 0.9])
    return img + rng.normal(0, 0.015, size=(h, w, 3))


def synthetic_dataset(n: int, size: Sequence[int] = (32, 32), seed: int = 0) -> list[LabeledImage]:
    """Balanced two-class images standing in for stained blood-cell crops.

    Class 0 ("uninfected"): a pink base colour with a few low-frequency
    sinusoidal ripples plus pixel noise. Class 1 ("parasitized"): the same kind
    of background with 1-3 dark purple discs of radius 8-15% of the image side,
    blended with a soft one-pixel edge. Labels alternate 0/1 before a seeded
    shuffle, so each class has exactly n/2 members.
    """
    if n % 2 or n < 2:
        raise ConfigError(f"synthetic dataset size must be a positive even number, got {n}")
    h, w = int(size[0]), int(size[1])
    if h < 16 or w < 16:
        raise ConfigError("synthetic images must be at least 16x16")
    rng = np.random.default_rng(seed)
    labels = np.tile([0, 1], n // 2)[rng.permutation(n)]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    stain = np.array([0.36, 0.16, 0.46])
    side = min(h, w)
    records = []
    for i, label in enumerate(labels):
        img = _smooth_background(rng, h, w)
        if label == 1:
            for _ in range(rng.integers(1, 4)):
                r = rng.uniform(0.08, 0.15) * side
                cy = rng.uniform(0.2 * h, 0.8 * h)
                cx = rng.uniform(0.2 * w, 0.8 * w)
                dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
                alpha = np.clip(r - dist + 0.5, 0.0, 1.0)[..., None] * rng.uniform(0.75, 0.95)
                img = img * (1 - alpha) + stain * alpha
        records.append(LabeledImage(np.clip(img, 0.0, 1.0).astype(np.float32), int(label), f"synthetic/{i:06d}"))
    return records
