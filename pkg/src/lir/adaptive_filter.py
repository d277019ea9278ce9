"""Adaptive Filter: a learnable weighting of fixed 3x3 differential kernels.

Each branch applies the same fixed kernel to every channel (depthwise,
zero padding 1) and the branch outputs are mixed with one learnable scalar
per kernel.  Because every branch is linear and shares the 3x3 frame, the
trained filter folds into one depthwise 3x3 kernel for inference.
"""
from __future__ import annotations

from collections import OrderedDict
from typing import Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .nn import Module, parameter
from .tensor import Tensor, mul, reshape, sum_

GAUSSIAN_3X3 = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0


def _embed_2x2(k) -> np.ndarray:
    out = np.zeros((3, 3))
    out[:2, :2] = k
    return out


def _delta() -> np.ndarray:
    d = np.zeros((3, 3))
    d[1, 1] = 1.0
    return d


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SCHARR_X = np.array([[-3, 0, 3], [-10, 0, 10], [-3, 0, 3]], dtype=np.float64)

# Correlation-form kernels; identity comes first so its alpha starts at 1.
KERNELS = OrderedDict([
    ("identity", _delta()),
    ("roberts_x", _embed_2x2([[1, 0], [0, -1]])),
    ("roberts_y", _embed_2x2([[0, 1], [-1, 0]])),
    ("sobel_x", _SOBEL_X),
    ("sobel_y", _SOBEL_X.T.copy()),
    ("laplacian4", np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64)),
    ("laplacian8", np.array([[1, 1, 1], [1, -8, 1], [1, 1, 1]], dtype=np.float64)),
    ("highpass", _delta() - GAUSSIAN_3X3),
    ("scharr_x", _SCHARR_X),
    ("scharr_y", _SCHARR_X.T.copy()),
])

DEFAULT_BANK = tuple(KERNELS)
BANK_WITHOUT_SCHARR = tuple(k for k in KERNELS if not k.startswith("scharr"))


def kernel_bank(names: Sequence[str] = DEFAULT_BANK) -> np.ndarray:
    """Stack the named kernels into a ``(len(names), 3, 3)`` float64 array.

    Raises if a non-identity kernel does not sum to zero or identity does
    not sum to one.
    """
    bank = np.stack([KERNELS[n] for n in names])
    for name, k in zip(names, bank):
        expected = 1.0 if name == "identity" else 0.0
        if abs(k.sum() - expected) > 1e-12:
            raise ValueError(f"kernel {name} sums to {k.sum()}, expected {expected}")
    return bank


def init_alpha(names: Sequence[str] = DEFAULT_BANK) -> np.ndarray:
    return np.array([1.0 if n == "identity" else 0.0 for n in names])


def depthwise(x: Tensor, kernel) -> Tensor:
    """Apply one fixed 3x3 kernel to every channel of ``x`` (zero padding 1)."""
    k = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel)
    c = x.shape[-3]
    weight = Tensor(np.broadcast_to(k.astype(x.dtype), (c, 1, 3, 3)).copy())
    return F.conv2d(x, weight, None, 1, 1, groups=c)


def multi_branch(x: Tensor, alpha: Tensor, bank: np.ndarray) -> Tensor:
    """``sum_i alpha_i * (K_i * x)`` with every branch output materialised."""
    if alpha.shape != (bank.shape[0],):
        raise ValueError(f"alpha of shape {alpha.shape} for a bank of {bank.shape[0]} kernels")
    shape = x.shape
    n = int(np.prod(shape[:-2]))
    h, w = shape[-2:]
    flat = reshape(x, (n, 1, h, w))
    weight = Tensor(bank[:, None].astype(x.dtype))
    branches = F.conv2d(flat, weight, None, 1, 1)  # (n, K, h, w)
    mixed = sum_(mul(branches, reshape(alpha, (1, -1, 1, 1))), axis=1)
    return reshape(mixed, shape)


def fuse(alpha: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """Fold the bank into one 3x3 kernel ``sum_i alpha_i K_i``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (bank.shape[0],):
        raise ValueError(f"{alpha.shape} weights for a bank of {bank.shape[0]}")
    return np.tensordot(alpha, bank, axes=1)


def fuse_split(alpha: np.ndarray, names: Sequence[str], bank: np.ndarray) -> Tuple[np.ndarray, float]:
    """Two-operator export: a 3x3 kernel for every branch except high-pass,
    plus the high-pass weight (applied as ``x - G*x``)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    keep = np.array([n != "highpass" for n in names])
    k3 = np.tensordot(alpha[keep], bank[keep], axes=1)
    hp = float(alpha[~keep].sum()) if (~keep).any() else 0.0
    return k3, hp


def apply_split(x: Tensor, kernel: np.ndarray, hp_weight: float) -> Tensor:
    out = depthwise(x, kernel)
    if hp_weight:
        out = out + (x - depthwise(x, GAUSSIAN_3X3)) * hp_weight
    return out


class AdaptiveFilter(Module):
    """Learnable mix of a fixed kernel bank; ``fuse()`` switches to one 3x3 kernel."""

    _buffers = ("fused",)

    def __init__(self, names: Sequence[str] = DEFAULT_BANK, dtype=np.float32):
        self.names = tuple(names)
        self.bank = kernel_bank(self.names)
        self.alpha = parameter(init_alpha(self.names).astype(dtype), no_decay=False)
        self.fused: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        if self.fused is not None:
            return depthwise(x, self.fused)
        return multi_branch(x, self.alpha, self.bank)

    def fused_kernel(self) -> np.ndarray:
        if self.fused is not None:
            return self.fused.data
        return fuse(self.alpha.data, self.bank)

    def fuse(self) -> None:
        """Replace the learnable weights by their folded kernel (inference only)."""
        if self.fused is None:
            self.fused = Tensor(self.fused_kernel().astype(self.alpha.dtype))
            self.alpha = None
