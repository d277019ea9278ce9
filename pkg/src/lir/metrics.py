"""PSNR and single-scale SSIM on images in [0, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _check(x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """``10 log10(1 / MSE)``; identical inputs (MSE < 1e-10) report 100 dB."""
    x, y = _check(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    return np.tensordot(sliding_window_view(img, (k, k), axis=(-2, -1)), win, axes=([-2, -1], [0, 1]))


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM over valid window positions and channels.

    Accepts ``(H, W)`` or ``(C, H, W)`` arrays with values in [0, 1].
    """
    x, y = _check(x, y)
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()
    c1, c2 = K1 ** 2, K2 ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    names: List[str] = field(default_factory=list)
    psnr: List[float] = field(default_factory=list)
    ssim: List[float] = field(default_factory=list)

    def add(self, name: str, p: float, s: float) -> None:
        self.names.append(name)
        self.psnr.append(p)
        self.ssim.append(s)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def lines(self) -> List[str]:
        return [f"file={n} psnr={p:.4f} ssim={s:.6f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]

    def table(self) -> str:
        width = max([len(n) for n in self.names] + [4])
        rows = [f"{'file':<{width}}  {'PSNR (dB)':>10}  {'SSIM':>8}", "-" * (width + 22)]
        rows += [f"{n:<{width}}  {p:>10.4f}  {s:>8.4f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        rows += ["-" * (width + 22), f"{'mean':<{width}}  {self.mean_psnr:>10.4f}  {self.mean_ssim:>8.4f}"]
        return "\n".join(rows)
