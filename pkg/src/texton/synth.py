"""Procedural grayscale texture classes for desk-scale experiments."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, ImageSample
from .pnm import to_uint8, write_pnm

KINDS = ("grating", "checkerboard", "fbm", "voronoi")

DEFAULT_PARAMS = {
    "grating": {"frequency": (3.0, 8.0), "contrast": (0.6, 1.0)},
    "checkerboard": {"cell": (4.0, 12.0), "contrast": (0.6, 1.0)},
    "fbm": {"hurst": (0.3, 0.7)},
    "voronoi": {"cells": (10.0, 40.0)},
}


@dataclass
class ClassSpec:
    kind: str
    params: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown texture kind {self.kind!r}; choose from {KINDS}")
        merged = dict(DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged
        if not self.name:
            self.name = self.kind


@dataclass
class SyntheticTextureSpec:
    classes: list[ClassSpec] = field(default_factory=lambda: [ClassSpec(k) for k in KINDS])
    samples_per_class: int = 50
    image_size: int = 64
    seed: int = 0
    noise: float = 0.02


def _uniform(rng, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def grating(n: int, rng: np.random.Generator, frequency=(3.0, 8.0), contrast=(0.6, 1.0)):
    f = _uniform(rng, frequency)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:n, 0:n] / n
    wave = np.sin(2 * np.pi * f * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    return 0.5 + 0.5 * _uniform(rng, contrast) * wave


def checkerboard(n: int, rng: np.random.Generator, cell=(4.0, 12.0), contrast=(0.6, 1.0)):
    size = _uniform(rng, cell)
    oy, ox = rng.uniform(0.0, 2 * size, 2)
    yy, xx = np.mgrid[0:n, 0:n]
    parity = (np.floor((yy + oy) / size) + np.floor((xx + ox) / size)) % 2
    c = _uniform(rng, contrast)
    return 0.5 + c * (parity - 0.5)


def fbm(n: int, rng: np.random.Generator, hurst=(0.3, 0.7)):
    """Spectral synthesis: amplitude ~ |k|^-(H+1), i.e. power ~ |k|^-(2H+2)."""
    h = _uniform(rng, hurst) if isinstance(hurst, (tuple, list)) else float(hurst)
    kx = np.fft.fftfreq(n)[:, None]
    ky = np.fft.rfftfreq(n)[None, :]
    k = np.hypot(kx, ky)
    k[0, 0] = 1.0
    amp = k ** -(h + 1.0)
    amp[0, 0] = 0.0
    spec = amp * (rng.standard_normal(amp.shape) + 1j * rng.standard_normal(amp.shape))
    surf = np.fft.irfft2(spec, s=(n, n))
    lo, hi = surf.min(), surf.max()
    return (surf - lo) / (hi - lo) if hi > lo else np.full((n, n), 0.5)


def voronoi(n: int, rng: np.random.Generator, cells=(10.0, 40.0)):
    """Piecewise-constant cells with a random gray level per site (toroidal distance)."""
    m = max(int(round(_uniform(rng, cells))), 2)
    sites = rng.uniform(0, n, (m, 2))
    levels = rng.uniform(0.1, 0.9, m)
    yy, xx = np.mgrid[0:n, 0:n]
    dy = np.abs(yy[..., None] - sites[:, 0])
    dx = np.abs(xx[..., None] - sites[:, 1])
    dy, dx = np.minimum(dy, n - dy), np.minimum(dx, n - dx)
    return levels[np.argmin(dy * dy + dx * dx, axis=-1)]


_GENERATORS = {"grating": grating, "checkerboard": checkerboard, "fbm": fbm, "voronoi": voronoi}


def render(spec: ClassSpec, n: int, rng: np.random.Generator, noise: float = 0.0) -> np.ndarray:
    """One (H, W) uint8 texture of class ``spec``."""
    img = _GENERATORS[spec.kind](n, rng, **spec.params)
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return to_uint8(np.clip(img, 0.0, 1.0))


def synth_generate(spec: SyntheticTextureSpec) -> DatasetManifest:
    """Deterministic labelled texture set; each image has its own seeded stream."""
    names = [c.name for c in spec.classes]
    if len(set(names)) != len(names):
        raise ValueError("class names must be unique")
    order = sorted(range(len(names)), key=lambda i: names[i])
    samples = []
    for label, ci in enumerate(order):
        cls = spec.classes[ci]
        for j in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, ci, j])
            raw = render(cls, spec.image_size, rng, spec.noise)
            px = np.repeat((raw.astype(np.float32) / 255.0)[None], 3, axis=0)
            samples.append(ImageSample(px, label, f"{cls.name}/{j:04d}.pgm"))
    return DatasetManifest(samples, sorted(names), dataset_id=f"synth-{spec.seed}")


def write_dataset(manifest: DatasetManifest, root) -> Path:
    """Write the class-directory layout plus ``manifest.csv`` (path,label,class_name)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in manifest.samples:
        write_pnm(root / s.source, to_uint8(s.pixels))
        rows.append((s.source, s.label, manifest.class_names[s.label]))
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "class_name"])
        writer.writerows(rows)
    return root
