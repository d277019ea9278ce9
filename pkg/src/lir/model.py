"""LIR network: Attention Blocks, LAA blocks and the degradation-cleaned residual wiring."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .adaptive_filter import BANK_WITHOUT_SCHARR, DEFAULT_BANK, AdaptiveFilter
from .nn import Conv2d, ConvTranspose2d, Module, ResBlock, ResCABlock, simple_gate
from .patch_attention import PatchAttention, PatchAttentionConfig, pa_params, pa_cost
from .tensor import Tensor, no_grad, reshape

ABLATIONS = {
    "type1": {},
    "type2": {"vanilla_residuals": True},
    "type3": {"disable_patch_attention": True},
    "type4": {"disable_adaptive_filter": True},
    "type5": {"vanilla_residuals": True, "disable_patch_attention": True,
              "disable_adaptive_filter": True},
}


@dataclass
class ModelConfig:
    width: int = 48
    laa_counts: Tuple[int, ...] = (3, 3, 3, 3, 4)
    patch_sizes: Tuple[Tuple[int, int], ...] = ((8, 8), (8, 8), (4, 4), (4, 4), (2, 2))
    c_scales: Tuple[int, ...] = (16, 16, 16, 8, 8)
    vanilla_residuals: bool = False
    disable_adaptive_filter: bool = False
    disable_patch_attention: bool = False
    fused_inference: bool = False
    use_scharr: bool = True
    af_at_exit: bool = False
    gamma_init: float = 0.1
    ca_reduction: int = 4

    def __post_init__(self):
        self.laa_counts = tuple(int(c) for c in self.laa_counts)
        self.patch_sizes = tuple(tuple(int(v) for v in p) for p in self.patch_sizes)
        self.c_scales = tuple(int(c) for c in self.c_scales)
        if len(self.laa_counts) != 5 or min(self.laa_counts) < 1:
            raise ValueError(f"laa_counts needs 5 entries >= 1, got {self.laa_counts}")
        if sum(self.laa_counts) < 4:
            raise ValueError("at least 4 LAA blocks are needed for the degradation branch")
        if len(self.patch_sizes) != 5 or len(self.c_scales) != 5:
            raise ValueError("patch_sizes and c_scales need one entry per stage")
        if not self.disable_patch_attention:
            for cs in self.c_scales:
                cs = min(cs, self.width)
                if self.width % cs:
                    raise ValueError(f"width {self.width} not divisible by c_scale {cs}")
        if self.width % self.ca_reduction:
            raise ValueError(f"width {self.width} not divisible by CA reduction {self.ca_reduction}")

    @property
    def bank(self) -> Tuple[str, ...]:
        return DEFAULT_BANK if self.use_scharr else BANK_WITHOUT_SCHARR

    @property
    def pad_multiple(self) -> int:
        """Spatial multiple that keeps every patch grid exact (two 2x downsamples)."""
        side = 1 if self.disable_patch_attention else max(max(p) for p in self.patch_sizes)
        return 4 * side

    def pa_config(self, stage: int) -> Optional[PatchAttentionConfig]:
        if self.disable_patch_attention:
            return None
        ph, pw = self.patch_sizes[stage]
        # narrow models keep at least one reduced channel
        return PatchAttentionConfig(ph, pw, min(self.c_scales[stage], self.width))

    def with_ablation(self, name: str) -> "ModelConfig":
        try:
            switches = ABLATIONS[name.lower()]
        except KeyError:
            raise ValueError(f"unknown ablation {name!r}; expected one of {sorted(ABLATIONS)}") from None
        return dataclasses.replace(self, **switches)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["laa_counts"] = list(self.laa_counts)
        d["patch_sizes"] = [list(p) for p in self.patch_sizes]
        d["c_scales"] = list(self.c_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


class AttentionBlock(Module):
    """ResBlock -> Patch Attention -> 1x1 expand + SimpleGate -> ResCABlock."""

    def __init__(self, width: int, pa_cfg: Optional[PatchAttentionConfig], gamma_init: float = 0.1,
                 ca_reduction: int = 4, rng: Optional[np.random.Generator] = None):
        self.resblock = ResBlock(width, gamma_init, rng)
        self.pa = PatchAttention(width, pa_cfg, rng) if pa_cfg is not None else None
        self.expand = Conv2d(width, 2 * width, 1, rng=rng)
        self.rescablock = ResCABlock(width, gamma_init, ca_reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.resblock(x)
        if self.pa is not None:
            x = self.pa(x)
        return self.rescablock(simple_gate(self.expand(x)))


class LAABlock(Module):
    """Adaptive Filter, stride-2 down conv, four Attention Blocks, transpose up.

    The local residual is cleaned by the transposed difference between the
    first and fourth Attention Block outputs.
    """

    def __init__(self, cfg: ModelConfig, stage: int, rng: Optional[np.random.Generator] = None):
        w = cfg.width
        self.vanilla = cfg.vanilla_residuals
        self.af = None if cfg.disable_adaptive_filter else AdaptiveFilter(cfg.bank)
        self.down = Conv2d(w, w, 3, stride=2, padding=1, rng=rng)
        pa_cfg = cfg.pa_config(stage)
        for i in range(1, 5):
            setattr(self, f"ab{i}", AttentionBlock(w, pa_cfg, cfg.gamma_init, cfg.ca_reduction, rng))
        self.up = ConvTranspose2d(w, w, rng=rng)
        self.deg_up = None if self.vanilla else ConvTranspose2d(w, w, rng=rng)
        self.af_exit = AdaptiveFilter(cfg.bank) if cfg.af_at_exit and self.af is not None else None

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"LAA block needs even spatial size, got {h}x{w}")
        f = self.af(x) if self.af is not None else x
        a1 = self.ab1(self.down(f))
        a4 = self.ab4(self.ab3(self.ab2(a1)))
        u = self.up(a4)
        if self.af_exit is not None:
            u = self.af_exit(u)
        if self.vanilla:
            return u + x
        return u + (x - self.deg_up(a1 - a4))


class Stage(Module):
    def __init__(self, blocks: List[Module]):
        for i, b in enumerate(blocks, 1):
            setattr(self, f"laa{i}", b)

    def blocks(self) -> List[Module]:
        return [m for _, m in self.children()]


class LIR(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.width
        self.head = Conv2d(3, w, 3, rng=rng)
        self.down = Conv2d(w, w, 3, stride=2, padding=1, rng=rng)
        for s, count in enumerate(cfg.laa_counts):
            setattr(self, f"stage{s + 1}", Stage([LAABlock(cfg, s, rng) for _ in range(count)]))
        self.up = ConvTranspose2d(w, w, rng=rng)
        self.tail = Conv2d(w, 3, 3, rng=rng, zero_init=True)
        if not cfg.vanilla_residuals:
            self.deg_up = ConvTranspose2d(w, w, rng=rng)
            self.deg_tail = Conv2d(w, 3, 3, rng=rng, zero_init=True)
        self.to(dtype)
        if cfg.fused_inference:
            self.fuse()

    def laa_blocks(self) -> List[LAABlock]:
        out = []
        for s in range(len(self.cfg.laa_counts)):
            out.extend(getattr(self, f"stage{s + 1}").blocks())
        return out

    def adaptive_filters(self) -> List[Tuple[str, AdaptiveFilter]]:
        return [(path, m) for path, m in _walk(self) if isinstance(m, AdaptiveFilter)]

    def fuse(self) -> None:
        for _, af in self.adaptive_filters():
            af.fuse()
        self.cfg = dataclasses.replace(self.cfg, fused_inference=True)

    @property
    def is_fused(self) -> bool:
        return any(af.fused is not None for _, af in self.adaptive_filters())

    def forward(self, image: Tensor, taps: Optional[Dict[str, np.ndarray]] = None) -> Tensor:
        squeeze = image.ndim == 3
        if squeeze:
            image = reshape(image, (1,) + image.shape)
        if image.shape[1] != 3:
            raise ValueError(f"expected a 3-channel image, got {image.shape[1]} channels")
        h, w = image.shape[-2:]
        m = self.cfg.pad_multiple
        if h % m or w % m:
            raise ValueError(f"image size {h}x{w} must be a multiple of {m}; pad it first")

        def tap(name, t):
            if taps is not None:
                taps[name] = t.data.copy()

        h0 = self.head(image)
        tap("head", h0)
        d0 = self.down(h0)
        tap("down", d0)
        x = d0
        b1 = b4 = None
        for k, block in enumerate(self.laa_blocks(), 1):
            x = block(x)
            tap(f"laa{k}.out", x)
            if k == 1:
                b1 = x
            elif k == 4:
                b4 = x
        if self.cfg.vanilla_residuals:
            body = x + d0
            tap("body.out", body)
            up = self.up(body) + h0
            tap("up", up)
            out = self.tail(up) + image
        else:
            deg = b1 - b4
            tap("deg", deg)
            t = self.deg_up(deg)
            body = x + (d0 - deg)
            tap("body.out", body)
            up = self.up(body) + (h0 - t)
            tap("up", up)
            out = self.tail(up) + (image - self.deg_tail(t))
        tap("out", out)
        return reshape(out, out.shape[1:]) if squeeze else out


def _walk(module: Module, prefix: str = ""):
    for name, child in module.children():
        path = prefix + name
        yield path, child
        yield from _walk(child, path + ".")


TAP_NAMES = ("head", "down", "body.out", "deg", "up", "out")


def pad_image(image: np.ndarray, multiple: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Reflect-pad a ``(C, H, W)`` array on the bottom/right to a multiple of ``multiple``."""
    h, w = image.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph == 0 and pw == 0:
        return image, (h, w)
    mode = "reflect" if min(h, w) > 1 else "edge"
    pad = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(image, pad, mode=mode), (h, w)


def restore_array(model: LIR, image: np.ndarray, taps: Optional[Dict[str, np.ndarray]] = None) -> np.ndarray:
    """Pad, run the network without recording, crop back to the input size."""
    padded, (h, w) = pad_image(image, model.cfg.pad_multiple)
    dtype = model.head.weight.dtype
    with no_grad():
        out = model(Tensor(padded.astype(dtype)), taps=taps)
    return out.data[..., :h, :w]


# ---------------------------------------------------------------------------
# closed-form accounting
# ---------------------------------------------------------------------------

def _conv(cin, cout, k, hw_out, bias=True):
    return cout * cin * k * k + (cout if bias else 0), cout * cin * k * k * hw_out


def _convt(cin, cout, k, hw_in):
    return cin * cout * k * k + cout, cin * cout * k * k * hw_in


def count_params_flops(cfg: ModelConfig, input_hw: Tuple[int, int] = (192, 192)) -> Tuple[int, int]:
    """Parameter count and multiply-accumulates at a ``(3, H, W)`` input.

    MACs cover every convolution, transposed convolution and linear layer,
    the fused 3x3 depthwise Adaptive Filters and the Patch Attention gain
    product; other elementwise products are not counted.
    GFLOPs are conventionally ``2 * MACs / 1e9``.
    """
    h, w = input_hw
    wd = cfg.width
    full, half, quarter = h * w, (h // 2) * (w // 2), (h // 4) * (w // 4)
    params = macs = 0

    def acc(pm):
        nonlocal params, macs
        params += pm[0]
        macs += pm[1]

    acc(_conv(3, wd, 3, full))
    acc(_conv(wd, wd, 3, half))
    bank = len(cfg.bank)
    for s, count in enumerate(cfg.laa_counts):
        pa_cfg = cfg.pa_config(s)
        for _ in range(count):
            n_af = 0 if cfg.disable_adaptive_filter else (2 if cfg.af_at_exit else 1)
            params += n_af * bank
            macs += n_af * wd * 9 * half
            acc(_conv(wd, wd, 3, quarter))
            for _ in range(4):
                for _ in range(2):  # ResBlock and ResCABlock trunks
                    acc(_conv(wd, wd, 3, quarter))
                    acc(_conv(wd, wd, 3, quarter))
                    params += 1
                r = wd // cfg.ca_reduction
                acc(_conv(wd, r, 1, 1))
                acc(_conv(r, wd, 1, 1))
                if pa_cfg is not None:
                    params += pa_params(pa_cfg, wd)
                    macs += pa_cost(pa_cfg, wd, h // 4, w // 4)
                acc(_conv(wd, 2 * wd, 1, quarter))
            acc(_convt(wd, wd, 3, quarter))
            if not cfg.vanilla_residuals:
                acc(_convt(wd, wd, 3, quarter))
    acc(_convt(wd, wd, 3, half))
    acc(_conv(wd, 3, 3, full))
    if not cfg.vanilla_residuals:
        acc(_convt(wd, wd, 3, half))
        acc(_conv(wd, 3, 3, full))
    return params, macs


def gflops(macs: int) -> float:
    return 2.0 * macs / 1e9
