"""Images, blur kernels and the forward degradation ``y = h * x + e``.

Images are ``float64`` arrays of shape ``(H, W, C)`` with intensities in
``[0, 1]``. Blurring is circular so the operator is diagonalized exactly by
the 2-D DFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

MIN_SIDE = 16
KERNEL_KINDS = ("uniform", "gaussian", "radial")


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class BlurKernel:
    """A small non-negative filter normalized to unit sum."""

    taps: np.ndarray
    name: str

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2:
            raise KernelError(f"kernel must be 2-D, got shape {taps.shape}")
        if taps.shape[0] % 2 == 0 or taps.shape[1] % 2 == 0:
            raise KernelError(f"kernel sides must be odd, got {taps.shape}")
        if not np.all(np.isfinite(taps)) or np.any(taps < 0):
            raise KernelError("kernel taps must be finite and non-negative")
        total = taps.sum()
        if total <= 0:
            raise KernelError("kernel taps sum to zero")
        taps = taps / total
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.taps.shape

    @property
    def center(self) -> tuple[int, int]:
        return self.taps.shape[0] // 2, self.taps.shape[1] // 2

    def fits(self, shape) -> bool:
        return self.taps.shape[0] <= shape[0] and self.taps.shape[1] <= shape[1]


@dataclass(frozen=True)
class DegradationSpec:
    """Blur kernel plus additive Gaussian noise.

    ``sigma255`` is the noise standard deviation on the 8-bit intensity
    scale; it is divided by 255 before being added to ``[0, 1]`` images.
    """

    kernel: BlurKernel
    sigma255: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma255 >= 0:
            raise ValueError(f"sigma255 must be >= 0, got {self.sigma255}")


def make_kernel(kind: str, size: int | None = None, std: float = 1.6) -> BlurKernel:
    """Build one of the built-in kernels.

    Parameters
    ----------
    kind : {"uniform", "gaussian", "radial"}
        ``uniform`` is a constant box (default 9x9), ``gaussian`` an isotropic
        Gaussian sampled at integer offsets (default 15x15, ``std`` 1.6) and
        ``radial`` has taps ``1 / (1 + x1**2 + x2**2)`` (default 15x15).
    size : int, optional
        Odd side length overriding the default.
    std : float
        Standard deviation of the Gaussian kernel, in pixels.
    """
    kind = kind.lower()
    if kind not in KERNEL_KINDS:
        raise KernelError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")
    if size is None:
        size = 9 if kind == "uniform" else 15
    if size < 1 or size % 2 == 0:
        raise KernelError(f"kernel size must be a positive odd integer, got {size}")

    r = size // 2
    x1, x2 = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    if kind == "uniform":
        taps = np.ones((size, size))
    elif kind == "gaussian":
        if not std > 0:
            raise KernelError(f"gaussian std must be positive, got {std}")
        taps = np.exp(-(x1**2 + x2**2) / (2.0 * std**2))
    else:
        taps = 1.0 / (1.0 + x1**2 + x2**2)
    return BlurKernel(taps, kind)


def delta_kernel() -> BlurKernel:
    return BlurKernel(np.ones((1, 1)), "delta")


def parse_kernel(text: str) -> BlurKernel:
    """Resolve a kernel description such as ``uniform``, ``gaussian:2.0`` or
    ``file:path/to/kernel.txt``."""
    if text.startswith("file:"):
        return load_kernel(text[len("file:"):])
    kind, _, arg = text.partition(":")
    if kind == "delta":
        return delta_kernel()
    if kind == "gaussian" and arg:
        return make_kernel(kind, std=float(arg))
    if arg:
        return make_kernel(kind, size=int(arg))
    return make_kernel(kind)


def load_kernel(path, name: str | None = None) -> BlurKernel:
    """Read a kernel stored as rows of whitespace-separated decimals."""
    path = Path(path)
    taps = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return BlurKernel(taps, name or path.stem)


def save_kernel(kernel: BlurKernel, path) -> None:
    np.savetxt(path, kernel.taps, fmt="%.17g")


def as_image(x) -> np.ndarray:
    """Coerce ``x`` to an ``(H, W, C)`` float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ValueError(f"expected an HxW, HxWx1 or HxWx3 image, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    return x


def _psf_to_otf(taps: np.ndarray, shape) -> np.ndarray:
    kh, kw = taps.shape
    padded = np.zeros(shape[:2], dtype=np.float64)
    padded[:kh, :kw] = taps
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


def blur(x, h: BlurKernel) -> np.ndarray:
    """Circularly convolve every channel of ``x`` with ``h``."""
    x = as_image(x)
    if not h.fits(x.shape):
        raise KernelError(f"kernel {h.shape} does not fit image {x.shape[:2]}")
    otf = _psf_to_otf(h.taps, x.shape)
    return np.real(np.fft.ifft2(np.fft.fft2(x, axes=(0, 1)) * otf[:, :, None], axes=(0, 1)))


def degrade(x, spec: DegradationSpec) -> np.ndarray:
    """Blur ``x`` and add i.i.d. Gaussian noise drawn from ``spec.seed``.

    The result is not clipped; clipping only happens when writing a PNG.
    """
    y = blur(x, spec.kernel)
    if spec.sigma255 == 0:
        return y
    rng = np.random.default_rng(spec.seed)
    return y + rng.standard_normal(y.shape) * (spec.sigma255 / 255.0)


def read_png(path, max_size: int | None = None) -> np.ndarray:
    """Load an 8-bit image as ``(H, W, C)`` floats in ``[0, 1]``.

    Grayscale stays single-channel, everything else is converted to RGB.
    ``max_size`` center-crops each side to at most that many pixels.
    """
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("L" if im.mode in ("1", "I", "I;16", "F", "LA") else "RGB")
        data = np.asarray(im, dtype=np.float64) / 255.0
    data = as_image(data)
    if max_size is not None:
        data = center_crop(data, max_size)
    return data


def center_crop(x: np.ndarray, size: int) -> np.ndarray:
    h, w = x.shape[:2]
    ch, cw = min(h, size), min(w, size)
    top, left = (h - ch) // 2, (w - cw) // 2
    return x[top:top + ch, left:left + cw]


def to_uint8(x) -> np.ndarray:
    x = np.clip(as_image(x), 0.0, 1.0)
    return np.round(x * 255.0).astype(np.uint8)


def write_png(path, x) -> None:
    data = to_uint8(x)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path, format="PNG")


def check_image(x) -> np.ndarray:
    """Validate an image against the minimum working size."""
    x = as_image(x)
    if x.shape[0] < MIN_SIDE or x.shape[1] < MIN_SIDE:
        raise ValueError(f"images must be at least {MIN_SIDE}x{MIN_SIDE}, got {x.shape[:2]}")
    return x


def sigma_from_text(text) -> float:
    """Parse ``2``, ``1.41`` or ``sqrt(2)`` into a float."""
    if isinstance(text, (int, float)):
        return float(text)
    text = str(text).strip()
    if text.startswith("sqrt(") and text.endswith(")"):
        return math.sqrt(float(text[5:-1]))
    return float(text)
