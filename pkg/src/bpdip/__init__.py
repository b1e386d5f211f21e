"""Deep Image Prior deblurring with least-squares and backprojection losses."""

from .frequency import BPFilter, FrequencyResponse, apply_frequency_filter, make_bp_filter, psf_to_otf
from .imaging import BlurKernel, DegradationSpec, blur, degrade, make_kernel, read_png, write_png
from .losses import LossSpec, bp_loss, ls_loss, preset, total_loss, tv_loss
from .metrics import psnr, ssim
from .prior_net import NetConfig, build_network, forward, make_seed_input
from .runner import RunConfig, RunTrace, early_stop_select, run_restoration

__all__ = [
    "BPFilter",
    "BlurKernel",
    "DegradationSpec",
    "FrequencyResponse",
    "LossSpec",
    "NetConfig",
    "RunConfig",
    "RunTrace",
    "apply_frequency_filter",
    "blur",
    "bp_loss",
    "build_network",
    "degrade",
    "early_stop_select",
    "forward",
    "ls_loss",
    "make_bp_filter",
    "make_kernel",
    "make_seed_input",
    "preset",
    "psf_to_otf",
    "psnr",
    "read_png",
    "run_restoration",
    "ssim",
    "total_loss",
    "tv_loss",
    "write_png",
]
