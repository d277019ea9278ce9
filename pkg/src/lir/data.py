"""Paired datasets, crop/flip augmentation and Gaussian noise synthesis."""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .io import list_pngs, read_png

SIGMA_MAX = 50.0


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise, sigma in 8-bit units (applied as sigma/255)."""

    mode: str = "blind"
    sigma: float = 25.0
    sigma_range: Tuple[float, float] = (0.0, SIGMA_MAX)

    def __post_init__(self):
        if self.mode not in ("fixed", "blind"):
            raise ValueError(f"noise mode must be 'fixed' or 'blind', got {self.mode!r}")
        lo, hi = self.sigma_range
        if not 0.0 <= lo <= hi <= SIGMA_MAX:
            raise ValueError(f"sigma range {self.sigma_range} outside [0, {SIGMA_MAX}]")
        if self.mode == "fixed" and not 0.0 <= self.sigma <= SIGMA_MAX:
            raise ValueError(f"sigma {self.sigma} outside [0, {SIGMA_MAX}]")

    @classmethod
    def parse(cls, text: str) -> "NoiseSpec":
        """``"blind"`` or ``"sigma=<n>"``."""
        if text == "blind":
            return cls("blind")
        if text.startswith("sigma="):
            return cls("fixed", float(text[len("sigma="):]))
        raise ValueError(f"cannot parse noise spec {text!r}; use 'blind' or 'sigma=<n>'")

    def draw_sigma(self, rng: np.random.Generator) -> float:
        if self.mode == "fixed":
            return self.sigma
        return float(rng.uniform(*self.sigma_range))

    @property
    def eval_sigma(self) -> float:
        return self.sigma


def add_gaussian_noise(clean: np.ndarray, spec: NoiseSpec, rng: np.random.Generator,
                       sigma: Optional[float] = None) -> np.ndarray:
    """``clip(x + n, 0, 1)`` with ``n ~ N(0, (sigma/255)^2)`` i.i.d."""
    if sigma is None:
        sigma = spec.draw_sigma(rng)
    if not 0.0 <= sigma <= SIGMA_MAX:
        raise ValueError(f"sigma {sigma} outside [0, {SIGMA_MAX}]")
    if clean.size and (clean.min() < 0.0 or clean.max() > 1.0):
        raise ValueError("clean image values must lie in [0, 1]")
    if sigma == 0:
        return clean.copy()
    noise = rng.standard_normal(clean.shape) * (sigma / 255.0)
    return np.clip(clean + noise, 0.0, 1.0).astype(clean.dtype)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def crop_window(h: int, w: int, patch: int, rng: np.random.Generator) -> Tuple[int, int]:
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than patch {patch}")
    return int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1))


def augment(clean: np.ndarray, degraded: np.ndarray, patch: int,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Identical random crop and horizontal flip applied to both images."""
    if clean.shape != degraded.shape:
        raise ValueError(f"pair shapes differ: {clean.shape} vs {degraded.shape}")
    top, left = crop_window(clean.shape[-2], clean.shape[-1], patch, rng)
    sl = (..., slice(top, top + patch), slice(left, left + patch))
    c, d = clean[sl], degraded[sl]
    if rng.random() < 0.5:
        return hflip(c), hflip(d)
    return c.copy(), d.copy()


class PairedDataset:
    """Clean images with either stored degraded partners or on-the-fly noise."""

    def __init__(self, clean: Sequence[np.ndarray], degraded: Optional[Sequence[np.ndarray]] = None,
                 noise: Optional[NoiseSpec] = None, names: Optional[Sequence[str]] = None):
        if not clean:
            raise ValueError("dataset is empty")
        if degraded is None and noise is None:
            raise ValueError("need degraded images or a noise spec")
        if degraded is not None:
            if len(degraded) != len(clean):
                raise ValueError("clean and degraded counts differ")
            for i, (c, d) in enumerate(zip(clean, degraded)):
                if c.shape != d.shape:
                    raise ValueError(f"pair {i} shapes differ: {c.shape} vs {d.shape}")
        self.clean = list(clean)
        self.degraded = list(degraded) if degraded is not None else None
        self.noise = noise
        self.names = list(names) if names is not None else [f"{i:04d}" for i in range(len(clean))]

    def __len__(self) -> int:
        return len(self.clean)

    def sample_batch(self, batch: int, patch: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Uniform sampling with replacement; returns ``(degraded, clean)`` stacks."""
        idx = rng.integers(0, len(self.clean), size=batch)
        xs, ys = [], []
        for i in idx:
            c = self.clean[i]
            d = self.degraded[i] if self.degraded is not None else c
            c, d = augment(c, d, patch, rng)
            if self.degraded is None:
                d = add_gaussian_noise(c, self.noise, rng)
            xs.append(d)
            ys.append(c)
        return np.stack(xs), np.stack(ys)

    def fixed_pairs(self, seed: int = 1234) -> List[Tuple[np.ndarray, np.ndarray]]:
        """Deterministic (degraded, clean) pairs; noise uses the evaluation sigma."""
        if self.degraded is not None:
            return list(zip(self.degraded, self.clean))
        rng = np.random.default_rng(seed)
        return [(add_gaussian_noise(c, self.noise, rng, sigma=self.noise.eval_sigma), c) for c in self.clean]


def load_dirs(clean_dir: str, degraded_dir: Optional[str] = None,
              noise: Optional[NoiseSpec] = None) -> PairedDataset:
    """Read filename-matched PNGs from ``clean_dir`` (and ``degraded_dir``)."""
    clean_files = list_pngs(clean_dir)
    if not clean_files:
        raise ValueError(f"no PNG files in {clean_dir}")
    names = list(clean_files)
    clean = [read_png(clean_files[n]) for n in names]
    degraded = None
    if degraded_dir is not None:
        deg_files = list_pngs(degraded_dir)
        missing = [n for n in names if n not in deg_files]
        if missing:
            raise ValueError(f"{len(missing)} clean files lack a degraded partner, e.g. {missing[0]}")
        degraded = [read_png(deg_files[n]) for n in names]
    return PairedDataset(clean, degraded, noise, names)


def tile_images(images: Sequence[np.ndarray], size: int, stride: Optional[int] = None) -> List[np.ndarray]:
    """Cut non-overlapping (or strided) ``size`` x ``size`` tiles from ``(3, H, W)`` images."""
    stride = stride or size
    tiles = []
    for img in images:
        h, w = img.shape[-2:]
        for top in range(0, h - size + 1, stride):
            for left in range(0, w - size + 1, stride):
                tiles.append(np.ascontiguousarray(img[:, top:top + size, left:left + size]))
    return tiles


def sample_photos() -> List[Tuple[str, np.ndarray]]:
    """Public-domain / CC0 photographs bundled with scikit-image, as ``(3, H, W)`` floats."""
    import skimage
    from PIL import Image

    root = os.path.join(os.path.dirname(skimage.__file__), "data")
    names = ["astronaut.png", "chelsea.png", "coffee.png", "rocket.jpg", "motorcycle_left.png",
             "motorcycle_right.png", "hubble_deep_field.jpg", "ihc.png", "retina.jpg",
             "camera.png", "moon.png", "coins.png", "brick.png", "grass.png", "gravel.png"]
    out = []
    for n in names:
        path = os.path.join(root, n)
        if not os.path.exists(path):
            continue
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        out.append((n.rsplit(".", 1)[0], (arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()))
    return out
