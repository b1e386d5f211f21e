"""Differentiable restoration objectives.

All losses take channel-first tensors ``(..., H, W)``; plain ``(H, W, C)``
numpy images are accepted too and converted. Both fidelities carry a factor
of one half so they differ only by the frequency weighting:

* least squares: ``0.5 * ||y - h * x||^2``
* backprojection: ``0.5 * ||W (y - h * x)||^2`` with ``W`` the damped
  inverse square root of ``A A^T`` applied in the Fourier domain
* anisotropic TV: sum of absolute vertical and horizontal neighbor
  differences (no wrap-around), unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .frequency import (
    BPFilter,
    FrequencyResponse,
    filter_tensor,
    make_bp_filter,
    psf_to_otf,
    to_complex_tensor,
)
from .imaging import BlurKernel, as_image

FIDELITIES = ("LS", "BP")

# Paper protocol values.
DEFAULT_EPS1 = 0.01
DEFAULT_EPS2 = 1e-3
BP_TV_WEIGHT = 1e-3
LS_TV_WEIGHTS = {"gaussian": 1e-5, "radial": 1e-5, "uniform": 1e-6}
METHODS = ("LS", "LS-TV", "BP", "BP-TV")


@dataclass(frozen=True)
class LossSpec:
    fidelity: str = "BP"
    eps1: float = DEFAULT_EPS1
    eps2: float = DEFAULT_EPS2
    sigma255: float = 0.0
    tv_weight: float = 0.0

    def __post_init__(self):
        fidelity = self.fidelity.upper()
        if fidelity not in FIDELITIES:
            raise ValueError(f"fidelity must be one of {FIDELITIES}, got {self.fidelity!r}")
        object.__setattr__(self, "fidelity", fidelity)
        for name in ("eps1", "eps2", "sigma255", "tv_weight"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


def preset(method: str, kernel_kind: str, sigma255: float) -> LossSpec:
    """Loss settings for one of the four compared methods.

    TV weights: 1e-3 for BP-TV with every kernel; for LS-TV 1e-5 with the
    Gaussian and radial kernels and 1e-6 with the uniform kernel.
    """
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    fidelity, _, tv = method.partition("-")
    weight = 0.0
    if tv:
        if fidelity == "BP":
            weight = BP_TV_WEIGHT
        else:
            try:
                weight = LS_TV_WEIGHTS[kernel_kind]
            except KeyError:
                raise ValueError(f"no LS-TV weight for kernel {kernel_kind!r}; set tv_weight explicitly") from None
    return LossSpec(fidelity=fidelity, sigma255=sigma255, tv_weight=weight)


def image_to_tensor(x, dtype=torch.float64) -> torch.Tensor:
    """``(H, W, C)`` array to a ``(C, H, W)`` tensor; tensors pass through."""
    if isinstance(x, torch.Tensor):
        return x
    x = as_image(x)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))).to(dtype)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`image_to_tensor`; drops a leading batch axis."""
    t = t.detach()
    if t.ndim == 4:
        t = t[0]
    return t.cpu().double().numpy().transpose(1, 2, 0).copy()


class Objective:
    """Precomputes the operators for a fixed kernel, grid and loss setting.

    Calling the object returns ``fidelity(x, y) + tv_weight * tv(x)``.
    """

    def __init__(self, kernel: BlurKernel, spec: LossSpec, shape, dtype=torch.float64):
        self.kernel = kernel
        self.spec = spec
        self.shape = tuple(shape[-2:])
        self.otf: FrequencyResponse = psf_to_otf(kernel, self.shape)
        self._otf = to_complex_tensor(self.otf, dtype)
        self.bp_filter: BPFilter | None = None
        if spec.fidelity == "BP":
            self.bp_filter = make_bp_filter(self.otf, spec.sigma255, spec.eps1, spec.eps2)
            self._bp = to_complex_tensor(self.bp_filter, dtype)

    def blur(self, x: torch.Tensor) -> torch.Tensor:
        return filter_tensor(x, self._otf)

    def residual(self, x, y) -> torch.Tensor:
        x, y = image_to_tensor(x), image_to_tensor(y)
        if x.shape[-3:] != y.shape[-3:]:
            raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
        return y - self.blur(x)

    def ls(self, x, y) -> torch.Tensor:
        return 0.5 * self.residual(x, y).pow(2).sum()

    def bp(self, x, y) -> torch.Tensor:
        if self.bp_filter is None:
            raise ValueError("objective was built for LS fidelity")
        weighted = filter_tensor(self.residual(x, y), self._bp)
        return 0.5 * weighted.pow(2).sum()

    def fidelity(self, x, y) -> torch.Tensor:
        return self.bp(x, y) if self.spec.fidelity == "BP" else self.ls(x, y)

    def __call__(self, x, y) -> torch.Tensor:
        loss = self.fidelity(x, y)
        if self.spec.tv_weight > 0:
            loss = loss + self.spec.tv_weight * tv_loss(x)
        return loss


def _objective(x, h, spec, dtype=None):
    x = image_to_tensor(x)
    return Objective(h, spec, x.shape, dtype=dtype or x.dtype)


def ls_loss(x, y, h: BlurKernel) -> torch.Tensor:
    return _objective(x, h, LossSpec(fidelity="LS")).ls(x, y)


def bp_loss(x, y, h: BlurKernel, spec: LossSpec) -> torch.Tensor:
    if spec.fidelity != "BP":
        spec = replace(spec, fidelity="BP")
    return _objective(x, h, spec).bp(x, y)


def tv_loss(x) -> torch.Tensor:
    x = image_to_tensor(x)
    dv = (x[..., 1:, :] - x[..., :-1, :]).abs().sum()
    dh = (x[..., :, 1:] - x[..., :, :-1]).abs().sum()
    return dv + dh


def total_loss(x, y, h: BlurKernel, spec: LossSpec) -> torch.Tensor:
    return _objective(x, h, spec)(x, y)
