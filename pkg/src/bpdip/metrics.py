"""Full-reference image quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from skimage.metrics import structural_similarity

from .imaging import as_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricResult:
    psnr_db: float
    ssim: float


def _pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels.

    Returns ``math.inf`` for identical inputs.
    """
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (std 1.5), K1=0.01, K2=0.03
    and unit dynamic range, computed per channel and averaged.

    Only window positions lying fully inside the image contribute.
    """
    a, b = _pair(a, b)
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    values = [
        structural_similarity(
            a[:, :, c], b[:, :, c],
            data_range=1.0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
        for c in range(a.shape[2])
    ]
    return float(np.mean(values))


def evaluate(estimate, reference) -> MetricResult:
    return MetricResult(psnr(estimate, reference), ssim(estimate, reference))
