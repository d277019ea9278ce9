"""Convolution, transposed convolution and patch reshaping on :class:`Tensor`.

Layouts follow the usual deep-learning conventions: feature maps are
``(N, C, H, W)`` (a bare ``(C, H, W)`` map is accepted and returned without
the batch axis), conv kernels are ``(C_out, C_in // groups, kh, kw)`` and
transposed-conv kernels are ``(C_in, C_out // groups, kh, kw)``.  Convolution
is cross-correlation (no kernel flip) with zero padding.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _record, reshape


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise ValueError(f"kernel {k} larger than padded input {size + 2 * padding}")
    return span // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int, groups: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    ho, wo = _out_size(h, kh, stride, padding), _out_size(wd, kw, stride, padding)
    xp = _pad(x, padding)
    if groups == 1:
        win = _windows(xp, kh, kw, stride, ho, wo)
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if cg == 1 and o == c:
        out = np.zeros((n, c, ho, wo), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
                out += sl * w[:, 0, i, j][None, :, None, None]
        return out
    win = _windows(xp, kh, kw, stride, ho, wo).reshape(n, groups, cg, ho, wo, kh, kw)
    wg = w.reshape(groups, o // groups, cg, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", win, wg)
    return out.reshape(n, o, ho, wo)


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_shape: tuple, stride: int, padding: int,
                     groups: int) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to its input."""
    n, c, h, wd = in_shape
    o, cg, kh, kw = w.shape
    _, _, ho, wo = g.shape
    gp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.result_type(g, w))
    if groups == 1:
        cols = np.tensordot(g, w, axes=([1], [0]))  # n, ho, wo, c, kh, kw
        cols = cols.transpose(0, 3, 1, 2, 4, 5)
    elif cg == 1 and o == c:
        cols = g[:, :, :, :, None, None] * w[None, :, 0, None, None, :, :]
    else:
        gg = g.reshape(n, groups, o // groups, ho, wo)
        wg = w.reshape(groups, o // groups, cg, kh, kw)
        cols = np.einsum("ngohw,gocij->ngchwij", gg, wg).reshape(n, c, ho, wo, kh, kw)
    for i in range(kh):
        for j in range(kw):
            gp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += cols[..., i, j]
    if padding:
        gp = gp[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(gp)


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, w_shape: tuple, stride: int, padding: int,
                      groups: int) -> np.ndarray:
    """Adjoint of :func:`_conv_forward` with respect to its kernel."""
    n, c, h, wd = x.shape
    o, cg, kh, kw = w_shape
    _, _, ho, wo = g.shape
    xp = _pad(x, padding)
    if groups == 1:
        win = _windows(xp, kh, kw, stride, ho, wo)
        return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    if cg == 1 and o == c:
        out = np.empty(w_shape, dtype=np.result_type(x, g))
        for i in range(kh):
            for j in range(kw):
                sl = xp[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]
                out[:, 0, i, j] = (g * sl).sum(axis=(0, 2, 3))
        return out
    win = _windows(xp, kh, kw, stride, ho, wo).reshape(n, groups, cg, ho, wo, kh, kw)
    gg = g.reshape(n, groups, o // groups, ho, wo)
    return np.einsum("ngohw,ngchwij->gocij", gg, win).reshape(w_shape)


def _check_positive(stride: int, padding: int, groups: int) -> None:
    if stride < 1 or groups < 1 or padding < 0:
        raise ValueError("stride and groups must be positive, padding non-negative")


def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    _check_positive(stride, padding, groups)
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    o, cg, kh, kw = weight.shape
    if c % groups or o % groups:
        raise ValueError(f"groups={groups} does not divide channels ({c} in, {o} out)")
    if c // groups != cg:
        raise ValueError(f"kernel expects {cg * groups} input channels, got {c}")
    xd, wdata = x.data, weight.data
    out = _conv_forward(xd, wdata, stride, padding, groups)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gx = _conv_input_grad(g, wdata, xd.shape, stride, padding, groups) if x.requires_grad else None
        gw = _conv_weight_grad(xd, g, wdata.shape, stride, padding, groups) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    y = _record(out, parents, bw, "conv2d")
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0, groups: int = 1) -> Tensor:
    _check_positive(stride, padding, groups)
    if not 0 <= output_padding < stride:
        raise ValueError("output_padding must be smaller than stride")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    ci, og, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"kernel expects {ci} input channels, got {c}")
    if c % groups:
        raise ValueError(f"groups={groups} does not divide {c} channels")
    o = og * groups
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (wd - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise ValueError("transposed convolution output would be empty")
    xd, wdata = x.data, weight.data
    # the conv2d whose adjoint this is maps (o channels) -> (c channels) with kernel `weight`
    out = _conv_input_grad(xd, wdata, (n, o, ho, wo), stride, padding, groups)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"bias shape {bias.shape} does not match {o} output channels")
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gx = _conv_forward(g, wdata, stride, padding, groups) if x.requires_grad else None
        gw = _conv_weight_grad(g, xd, wdata.shape, stride, padding, groups) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    y = _record(out, parents, bw, "conv_transpose2d")
    return reshape(y, y.shape[1:]) if squeeze else y


def patchify(x: Tensor, ph: int, pw: int) -> Tensor:
    """Split ``(N, C, H, W)`` into non-overlapping patches.

    Returns ``(N, H*W/(ph*pw), ph*pw*C)``; patches are enumerated row-major over
    the patch grid and each row holds the patch's values in ``(C, ph, pw)`` order.
    A ``(C, H, W)`` input yields a 2-D ``(patches, row_length)`` result.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    if h % ph or w % pw:
        raise ValueError(f"patch grid {ph}x{pw} does not divide feature map {h}x{w}")
    nh, nw = h // ph, w // pw
    out = xd.reshape(n, c, nh, ph, nw, pw).transpose(0, 2, 4, 1, 3, 5).reshape(n, nh * nw, c * ph * pw)
    if squeeze:
        out = out[0]
    shape = x.shape

    def bw(g):
        g4 = g.reshape(n, nh, nw, c, ph, pw).transpose(0, 3, 1, 4, 2, 5)
        return (g4.reshape(shape),)

    return _record(np.ascontiguousarray(out), (x,), bw, "patchify")


def unpatchify(p: Tensor, c: int, h: int, w: int, ph: int, pw: int) -> Tensor:
    """Exact inverse of :func:`patchify`."""
    if h % ph or w % pw:
        raise ValueError(f"patch grid {ph}x{pw} does not divide feature map {h}x{w}")
    squeeze = p.ndim == 2
    pd = p.data[None] if squeeze else p.data
    n = pd.shape[0]
    nh, nw = h // ph, w // pw
    if pd.shape[1:] != (nh * nw, c * ph * pw):
        raise ValueError(f"patch tensor {p.shape} inconsistent with map ({c}, {h}, {w})")
    out = pd.reshape(n, nh, nw, c, ph, pw).transpose(0, 3, 1, 4, 2, 5).reshape(n, c, h, w)
    if squeeze:
        out = out[0]
    shape = p.shape

    def bw(g):
        g4 = g.reshape(n, c, nh, ph, nw, pw).transpose(0, 2, 4, 1, 3, 5)
        return (g4.reshape(shape),)

    return _record(np.ascontiguousarray(out), (p,), bw, "unpatchify")
