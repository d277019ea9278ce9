"""Matplotlib figures for training logs and evaluation reports (Agg backend)."""
from __future__ import annotations

import math
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import MetricReport  # noqa: E402


def moving_average(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing mean over at most ``window`` samples (same length as input)."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1 or v.size == 0:
        return v.copy()
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def plot_training_log(rows: List[Dict[str, float]], path: str, window: int = 25) -> None:
    """Loss (raw and smoothed) on the left axis, validation PSNR on the right."""
    if not rows:
        raise ValueError("training log is empty")
    it = np.array([r["iter"] for r in rows])
    loss = np.array([r["loss"] for r in rows])
    fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
    ax.plot(it, loss, color="0.75", lw=0.8, label="L1 loss")
    ax.plot(it, moving_average(loss, window), color="C0", lw=1.6, label=f"L1 loss ({window}-step mean)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("L1 loss")
    ax.set_yscale("log")
    val = [(r["iter"], r["val_psnr"]) for r in rows if not math.isnan(r.get("val_psnr", math.nan))]
    handles, labels = ax.get_legend_handles_labels()
    if val:
        ax2 = ax.twinx()
        vi, vp = zip(*val)
        ax2.plot(vi, vp, "o-", color="C3", ms=3, lw=1.2, label="val PSNR")
        ax2.set_ylabel("validation PSNR (dB)")
        h2, l2 = ax2.get_legend_handles_labels()
        handles, labels = handles + h2, labels + l2
    ax.legend(handles, labels, loc="upper right", frameon=False, fontsize=8)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_metric_report(report: MetricReport, path: str, reference_psnr: float = None) -> None:
    """Per-file PSNR bars with SSIM markers; optional horizontal reference line."""
    if not report.names:
        raise ValueError("metric report is empty")
    n = len(report.names)
    x = np.arange(n)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.35 * n + 2.0), 4.0), constrained_layout=True)
    # the 100 dB identity cap would flatten every other bar
    shown = np.minimum(report.psnr, 60.0)
    ax.bar(x, shown, color="C0", alpha=0.8, label="PSNR")
    if reference_psnr is not None:
        ax.axhline(reference_psnr, color="k", ls="--", lw=1.0, label=f"reference {reference_psnr:.2f} dB")
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks(x)
    ax.set_xticklabels(report.names, rotation=60, ha="right", fontsize=7)
    ax2 = ax.twinx()
    ax2.plot(x, report.ssim, "s", color="C1", ms=4, label="SSIM")
    ax2.set_ylim(min(0.0, min(report.ssim)), 1.05)
    ax2.set_ylabel("SSIM")
    ax.set_title(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}", fontsize=9)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="lower right", frameon=False, fontsize=8)
    fig.savefig(path, dpi=120)
    plt.close(fig)
