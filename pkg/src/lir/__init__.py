"""Lightweight image restoration with Adaptive Filters and Patch Attention, on a numpy autodiff core."""
from .adaptive_filter import AdaptiveFilter, fuse, multi_branch
from .metrics import MetricReport, psnr, ssim
from .model import ABLATIONS, LIR, ModelConfig, count_params_flops, gflops, restore_array
from .patch_attention import PatchAttention, PatchAttentionConfig
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "AdaptiveFilter", "LIR", "MetricReport", "ModelConfig", "PatchAttention",
    "PatchAttentionConfig", "Tensor", "backward", "count_params_flops", "fuse", "gflops",
    "multi_branch", "no_grad", "psnr", "restore_array", "ssim",
]
