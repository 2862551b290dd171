"""Dataset manifests, directory ingestion, random splits and augmentation."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functional import interp_matrix
from .pnm import PNMError, read_pnm, to_float

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".ppm")
SPLITS_DIR = "splits"


@dataclass
class ImageSample:
    pixels: np.ndarray  # (3, H, W) float32 in [0, 1]
    label: int
    source: str = ""


@dataclass
class DatasetManifest:
    samples: list[ImageSample]
    class_names: list[str]
    splits: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    load_errors: list[tuple[str, str]] = field(default_factory=list)
    dataset_id: str = ""

    def __len__(self):
        return len(self.samples)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def validate(self) -> None:
        n = len(self.samples)
        for s in self.samples:
            if not 0 <= s.label < self.n_classes:
                raise ValueError(f"label {s.label} out of range for {s.source}")
        for k, (tr, te) in enumerate(self.splits):
            if np.intersect1d(tr, te).size or np.union1d(tr, te).size != n:
                raise ValueError(f"split {k} is not a disjoint cover of the dataset")


def load_dataset(root) -> DatasetManifest:
    """Read ``<root>/<class_name>/<image>.pgm|ppm``; class labels follow sorted names.

    Unreadable images are logged and collected in ``load_errors``.  Optional
    ``<root>/splits/<k>_train.txt`` / ``<k>_test.txt`` files list relative
    image paths and become the manifest's splits.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    class_names = sorted(d.name for d in root.iterdir() if d.is_dir() and d.name != SPLITS_DIR)
    samples, errors = [], []
    for label, name in enumerate(class_names):
        for path in sorted((root / name).iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                raw, maxval = read_pnm(path)
            except (OSError, PNMError) as exc:
                errors.append((str(path), str(exc)))
                continue
            samples.append(ImageSample(to_float(raw, maxval), label,
                                       str(path.relative_to(root))))
    if errors:
        log.warning("%d image(s) under %s could not be read", len(errors), root)
    manifest = DatasetManifest(samples, class_names, load_errors=errors, dataset_id=root.name)
    manifest.splits = read_split_files(root, manifest)
    return manifest


def read_split_files(root: Path, manifest: DatasetManifest) -> list[tuple[np.ndarray, np.ndarray]]:
    split_dir = Path(root) / SPLITS_DIR
    if not split_dir.is_dir():
        return []
    index = {s.source.replace(os.sep, "/"): i for i, s in enumerate(manifest.samples)}
    splits = []
    k = 0
    while (split_dir / f"{k}_train.txt").exists():
        parts = []
        for kind in ("train", "test"):
            lines = (split_dir / f"{k}_{kind}.txt").read_text().split()
            missing = [p for p in lines if p not in index]
            if missing:
                raise ValueError(f"split {k} {kind} lists unknown images, e.g. {missing[0]}")
            parts.append(np.array(sorted(index[p] for p in lines), dtype=np.int64))
        splits.append((parts[0], parts[1]))
        k += 1
    return splits


def split_random(manifest: DatasetManifest, n_splits: int = 10, train_fraction: float = 0.75,
                 seed: int = 0) -> DatasetManifest:
    """Attach ``n_splits`` independently seeded random train/test partitions."""
    n = len(manifest.samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    if n_splits < 1 or not 0.0 < train_fraction < 1.0:
        raise ValueError("n_splits must be >= 1 and 0 < train_fraction < 1")
    n_train = min(max(int(np.floor(n * train_fraction + 0.5)), 1), n - 1)
    splits = []
    for k in range(n_splits):
        perm = np.random.default_rng([seed, k]).permutation(n)
        splits.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    manifest.splits = splits
    return manifest


# -- augmentation ----------------------------------------------------------
@dataclass
class AugmentConfig:
    resize: int = 256
    crop: int = 224
    flip_p: float = 0.5
    five_crop: bool = False
    mean: list[float] | None = None
    std: list[float] | None = None

    @classmethod
    def desk(cls, crop: int = 64) -> "AugmentConfig":
        return cls(resize=int(round(crop * 256 / 224)), crop=crop)


def resize_short_side(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) image so the shorter side equals ``size``."""
    _, h, w = img.shape
    if h <= w:
        nh, nw = size, int(size * w / h)
    else:
        nh, nw = int(size * h / w), size
    if (nh, nw) == (h, w):
        return img
    ah = interp_matrix(h, nh, "bilinear", img.dtype)
    aw = interp_matrix(w, nw, "bilinear", img.dtype)
    return (ah @ img @ aw.T).astype(img.dtype)


def _check_crop(img: np.ndarray, size: int) -> None:
    if size > img.shape[1] or size > img.shape[2]:
        raise ValueError(f"crop {size} larger than image {img.shape[1]}x{img.shape[2]}")


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    _check_crop(img, size)
    _, h, w = img.shape
    top, left = (h - size) // 2, (w - size) // 2
    return img[:, top:top + size, left:left + size]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    _check_crop(img, size)
    _, h, w = img.shape
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[:, top:top + size, left:left + size]


def five_crop(img: np.ndarray, size: int) -> list[np.ndarray]:
    """Top-left, top-right, bottom-left, bottom-right and centre crops."""
    _check_crop(img, size)
    _, h, w = img.shape
    return [img[:, :size, :size], img[:, :size, w - size:], img[:, h - size:, :size],
            img[:, h - size:, w - size:], center_crop(img, size)]


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, :, ::-1]


def normalize(img: np.ndarray, mean, std) -> np.ndarray:
    if mean is None or std is None:
        return img
    m = np.asarray(mean, dtype=img.dtype).reshape(-1, 1, 1)
    s = np.asarray(std, dtype=img.dtype).reshape(-1, 1, 1)
    return (img - m) / s


def augment_train(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator,
                  resized: bool = False) -> list[np.ndarray]:
    """Resize, random flip, random (or five-) crop, normalize.  Returns 1 or 5 views."""
    if img.shape[1] < 1 or img.shape[2] < 1:
        raise ValueError("empty image")
    x = img if resized else resize_short_side(img, cfg.resize)
    if rng.random() < cfg.flip_p:
        x = hflip(x)
    crops = five_crop(x, cfg.crop) if cfg.five_crop else [random_crop(x, cfg.crop, rng)]
    return [np.ascontiguousarray(normalize(c, cfg.mean, cfg.std)) for c in crops]


def eval_views(img: np.ndarray, cfg: AugmentConfig, five: bool = False,
               resized: bool = False) -> list[np.ndarray]:
    x = img if resized else resize_short_side(img, cfg.resize)
    crops = five_crop(x, cfg.crop) if five else [center_crop(x, cfg.crop)]
    return [np.ascontiguousarray(normalize(c, cfg.mean, cfg.std)) for c in crops]


def channel_stats(manifest: DatasetManifest, indices) -> tuple[list[float], list[float]]:
    """Per-channel mean and (population) std over the given samples' pixels."""
    if len(indices) == 0:
        raise ValueError("no samples to compute statistics from")
    total = np.zeros(3)
    sq = np.zeros(3)
    count = 0
    for i in indices:
        px = manifest.samples[i].pixels.astype(np.float64)
        total += px.sum(axis=(1, 2))
        sq += (px * px).sum(axis=(1, 2))
        count += px.shape[1] * px.shape[2]
    mean = total / count
    std = np.sqrt(np.maximum(sq / count - mean * mean, 1e-12))
    return mean.tolist(), std.tolist()
