"""DFT-domain realization of the blur operator and the BP weighting filter.

With circular boundaries the blur ``A`` is diagonal in the Fourier basis,
so ``A A^T`` has eigenvalues ``|F(h)|^2`` and the damped inverse square root
``(A A^T + delta I)^(-1/2)`` is an elementwise multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .imaging import BlurKernel, KernelError, _psf_to_otf

IMAG_TOLERANCE = 1e-8


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyResponse:
    values: np.ndarray
    kernel_name: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BPFilter:
    """Elementwise ``1 / sqrt(|F(h)|^2 + eps1 * sigma255**2 + eps2)``."""

    values: np.ndarray
    eps1: float
    eps2: float
    sigma255: float

    @property
    def damping(self) -> float:
        return self.eps1 * self.sigma255**2 + self.eps2

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def psf_to_otf(h: BlurKernel, shape) -> FrequencyResponse:
    """Zero-pad ``h`` to ``shape``, move its center tap to ``(0, 0)`` and FFT it."""
    shape = tuple(shape[:2])
    if not h.fits(shape):
        raise KernelError(f"kernel {h.shape} does not fit grid {shape}")
    values = _psf_to_otf(h.taps, shape)
    values.setflags(write=False)
    return FrequencyResponse(values, h.name)


def make_bp_filter(otf: FrequencyResponse, sigma255: float, eps1: float, eps2: float) -> BPFilter:
    if eps1 < 0 or eps2 < 0 or sigma255 < 0:
        raise FilterError("eps1, eps2 and sigma255 must be non-negative")
    power = np.abs(otf.values) ** 2
    denom = power + eps1 * sigma255**2 + eps2
    if np.any(denom <= 0):
        raise FilterError(
            "degenerate damping: the kernel response vanishes at some frequency "
            "and eps1*sigma^2 + eps2 is zero"
        )
    values = 1.0 / np.sqrt(denom)
    if not np.all(np.isfinite(values)):
        raise FilterError("BP filter is not finite; increase eps1 or eps2")
    values.setflags(write=False)
    return BPFilter(values, float(eps1), float(eps2), float(sigma255))


def _filter_values(filt):
    if isinstance(filt, (FrequencyResponse, BPFilter)):
        return filt.values
    return np.asarray(filt)


def apply_frequency_filter(r, filt) -> np.ndarray:
    """Compute ``ifft2(filt * fft2(r))`` per channel of an ``(H, W)`` or
    ``(H, W, C)`` array and return the real part.

    Raises
    ------
    FilterError
        If the shapes disagree or the discarded imaginary part exceeds
        ``1e-8`` of the real part's norm (a filter lacking conjugate
        symmetry).
    """
    r = np.asarray(r, dtype=np.float64)
    values = _filter_values(filt)
    if r.shape[:2] != values.shape:
        raise FilterError(f"filter shape {values.shape} does not match {r.shape[:2]}")
    if r.ndim == 3:
        values = values[:, :, None]
    out = np.fft.ifft2(np.fft.fft2(r, axes=(0, 1)) * values, axes=(0, 1))
    real_norm = np.linalg.norm(out.real)
    if np.linalg.norm(out.imag) > IMAG_TOLERANCE * max(real_norm, 1e-300):
        raise FilterError("frequency filter produced a non-negligible imaginary part")
    return out.real


def filter_tensor(r: torch.Tensor, values: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of :func:`apply_frequency_filter` for
    channel-first tensors ``(..., H, W)``; ``values`` is a ``(H, W)`` tensor."""
    if r.shape[-2:] != values.shape:
        raise FilterError(f"filter shape {tuple(values.shape)} does not match {tuple(r.shape[-2:])}")
    out = torch.fft.ifft2(torch.fft.fft2(r) * values)
    with torch.no_grad():
        real_norm = torch.linalg.vector_norm(out.real)
        if torch.linalg.vector_norm(out.imag) > IMAG_TOLERANCE * max(float(real_norm), 1e-30):
            raise FilterError("frequency filter produced a non-negligible imaginary part")
    return out.real


def to_complex_tensor(filt, dtype=torch.float64) -> torch.Tensor:
    """Convert a filter to a tensor usable by :func:`filter_tensor`."""
    values = _filter_values(filt)
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    if np.iscomplexobj(values):
        return torch.from_numpy(np.array(values)).to(cdtype)
    return torch.from_numpy(np.array(values)).to(dtype)
