"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_elems: Optional[int] = None, rng: Optional[np.random.Generator] = None,
               extended: bool = False) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds a scalar loss from the current values of ``params``.
    The error for each checked element is
    ``|analytic - fd| / max(|analytic|, |fd|, 1e-12)``.  With ``max_elems``
    only that many randomly chosen elements per tensor are perturbed.

    The analytic gradients are always computed at 64-bit.  ``extended=True``
    evaluates the finite differences in long double instead, which lowers the
    rounding floor of the oracle by about three orders of magnitude; every
    tensor the loss depends on should then be in ``params``.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("grad_check needs float64 tensors")
        p.grad = None
    backward(fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = rng or np.random.default_rng(0)
    fd_dtype = np.longdouble if extended else np.float64
    saved = [p.data for p in params]
    worst = 0.0
    try:
        for p in params:
            p.data = p.data.astype(fd_dtype)
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_elems is not None and flat.size > max_elems:
                idx = rng.choice(flat.size, size=max_elems, replace=False)
            for i in idx:
                orig = flat[i]
                with no_grad():
                    flat[i] = orig + fd_dtype(step)
                    fp = fn().data.reshape(-1)[0]
                    flat[i] = orig - fd_dtype(step)
                    fm = fn().data.reshape(-1)[0]
                flat[i] = orig
                fd = float((fp - fm) / (2 * fd_dtype(step)))
                a = ga.reshape(-1)[i]
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
                worst = max(worst, err)
    finally:
        for p, data in zip(params, saved):
            p.data = data
    return worst
