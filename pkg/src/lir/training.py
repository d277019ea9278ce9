"""L1 training with AdamW, cosine annealing and progressive patch sizes."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import PairedDataset
from .metrics import psnr
from .model import LIR, restore_array
from .tensor import NonFiniteError, Tensor, abs_, backward, mean

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr_max: float = 3e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return mean(abs_(pred - target))


def cosine_lr(t: int, total: int, cfg: OptimizerConfig = OptimizerConfig()) -> float:
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    if t == 0:
        return cfg.lr_max
    if t == total:
        return cfg.lr_min
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / total))


class ProgressiveSchedule:
    """Piecewise-constant ``(patch, batch)`` over cumulative iteration counts."""

    def __init__(self, phases: Sequence[Tuple[int, int, int]]):
        phases = [tuple(int(v) for v in p) for p in phases]
        if not phases:
            raise ValueError("schedule needs at least one phase")
        for patch, batch, iters in phases:
            if patch % 16 or patch <= 0:
                raise ValueError(f"patch size {patch} is not a positive multiple of 16")
            if batch <= 0 or iters <= 0:
                raise ValueError("batch sizes and iteration counts must be positive")
        self.phases = phases
        self.bounds = np.cumsum([p[2] for p in phases]).tolist()

    @classmethod
    def default(cls) -> "ProgressiveSchedule":
        return cls([(128, 32, 250_000), (160, 16, 250_000), (256, 8, 250_000)])

    @property
    def total(self) -> int:
        return self.bounds[-1]

    def __call__(self, t: int) -> Tuple[int, int]:
        if not 0 <= t < self.total:
            raise ValueError(f"iteration {t} beyond schedule of {self.total}")
        for (patch, batch, _), end in zip(self.phases, self.bounds):
            if t < end:
                return patch, batch
        raise AssertionError("unreachable")

    def truncated(self, total: int) -> "ProgressiveSchedule":
        out, left = [], total
        for patch, batch, iters in self.phases:
            if left <= 0:
                break
            out.append((patch, batch, min(iters, left)))
            left -= iters
        if left > 0:
            patch, batch, iters = out[-1]
            out[-1] = (patch, batch, iters + left)
        return ProgressiveSchedule(out)

    def to_list(self) -> List[List[int]]:
        return [list(p) for p in self.phases]


@dataclass
class TrainState:
    """Optimizer moments, step counter and sampler RNG state."""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    total: int = 0
    seed: int = 0
    rng_state: Optional[dict] = None

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        return out

    def to_dict(self) -> dict:
        return {"t": self.t, "total": self.total, "seed": self.seed, "rng_state": self.rng_state}

    @classmethod
    def from_dict(cls, d: dict, tensors: Dict[str, np.ndarray]) -> "TrainState":
        m = {k[2:]: a.copy() for k, a in tensors.items() if k.startswith("m.")}
        v = {k[2:]: a.copy() for k, a in tensors.items() if k.startswith("v.")}
        return cls(m, v, d["t"], d["total"], d["seed"], d.get("rng_state"))


def clip_grad_norm(params: Sequence[Tuple[str, Tensor]], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in params if p.grad is not None))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, p.grad.dtype)
    return norm


def adamw_step(params: Sequence[Tuple[str, Tensor]], state: TrainState, lr: float,
               cfg: OptimizerConfig = OptimizerConfig()) -> None:
    """One decoupled-weight-decay Adam update; parameters are updated in place.

    Tensors flagged ``no_decay`` (biases, gains) skip the decay term.
    """
    for name, p in params:
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise TrainingError(f"non-finite gradient for parameter {name}")
    step = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if cfg.weight_decay and not p.no_decay:
            update = update + cfg.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype)
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
    state.t = step


@dataclass
class TrainConfig:
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig()
    val_every: int = 200
    ckpt_every: int = 500
    clip_grad_norm: Optional[float] = None


def format_record(it: int, lr: float, loss: float, val_psnr: float) -> str:
    return f"iter={it} lr={lr:.6e} loss={loss:.6f} val_psnr={val_psnr:.4f}"


def parse_log(path: str) -> List[Dict[str, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            fields = dict(kv.split("=", 1) for kv in line.split())
            rows.append({k: (int(v) if k == "iter" else float(v)) for k, v in fields.items()})
    return rows


def validate(model: LIR, pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> float:
    scores = [psnr(np.clip(restore_array(model, deg), 0, 1), clean) for deg, clean in pairs]
    return float(np.mean(scores))


def train(model: LIR, data: PairedDataset, schedule: ProgressiveSchedule, out_path: Optional[str],
          cfg: TrainConfig = TrainConfig(), val_pairs: Optional[Sequence] = None,
          state: Optional[TrainState] = None, log_path: Optional[str] = None,
          stop_at: Optional[int] = None,
          on_step: Optional[Callable[[int, float], None]] = None) -> TrainState:
    """Run (or resume) the training loop.

    Writes one ``iter=.. lr=.. loss=.. val_psnr=..`` line per iteration to
    ``log_path`` (``val_psnr`` is ``nan`` on iterations without validation),
    periodic checkpoints to ``out_path`` and a final one on completion.
    ``stop_at`` ends the loop early (after that many total steps) without
    altering the schedule, which is how resumption is exercised.
    """
    from .io import save_checkpoint

    total = schedule.total
    if state is None:
        state = TrainState(total=total, seed=cfg.seed)
    if state.total != total:
        raise TrainingError(f"state was created for {state.total} iterations, schedule has {total}")
    rng = np.random.default_rng(cfg.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    multiple = model.cfg.pad_multiple
    for patch, _, _ in schedule.phases:
        if patch % multiple:
            raise TrainingError(f"training patch {patch} is not a multiple of {multiple} required by the model")

    params = list(model.named_parameters())
    dtype = model.head.weight.dtype
    end = total if stop_at is None else min(stop_at, total)
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        while state.t < end:
            it = state.t
            patch, batch = schedule(it)
            lr = cosine_lr(it, total, cfg.optimizer)
            deg, clean = data.sample_batch(batch, patch, rng)
            model.zero_grad()
            try:
                loss = l1_loss(model(Tensor(deg.astype(dtype))), Tensor(clean.astype(dtype)))
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise NonFiniteError("loss")
                backward(loss)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite values at iteration {it}: {exc}") from None
            if cfg.clip_grad_norm:
                clip_grad_norm(params, cfg.clip_grad_norm)
            adamw_step(params, state, lr, cfg.optimizer)
            state.rng_state = rng.bit_generator.state
            val = float("nan")
            if val_pairs and (state.t % cfg.val_every == 0 or state.t == total):
                val = validate(model, val_pairs)
                log.info("iter %d loss %.5f val_psnr %.3f", state.t, loss_value, val)
            if log_fh:
                log_fh.write(format_record(state.t, lr, loss_value, val) + "\n")
                log_fh.flush()
            if on_step:
                on_step(state.t, loss_value)
            if out_path and (state.t % cfg.ckpt_every == 0 or state.t == total):
                save_checkpoint(out_path, model, state, {"schedule": schedule.to_list(),
                                                         "seed": cfg.seed})
    finally:
        if log_fh:
            log_fh.close()
    return state
