"""Untrained encoder-decoder prior ``x = f_theta(z)``.

The architecture is the skip network used by Deep Image Prior: ``depth``
stride-2 encoder stages, a bilinear-upsampling decoder, a narrow skip branch
at every scale, batch norm, leaky ReLU, reflection padding and a sigmoid
output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_FORMAT = "bpdip-checkpoint"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_channels: int = 32
    output_channels: int = 3
    depth: int = 5
    features: int | tuple[int, ...] = 128
    skip_features: int | tuple[int, ...] = 4
    upsample_mode: str = "bilinear"
    activation: str = "leaky_relu"
    input_amplitude: float = 0.1
    # Std of fresh noise added to z every iteration; 0 keeps z fixed.
    input_jitter: float = 0.0

    def widths(self) -> tuple[list[int], list[int]]:
        def expand(v):
            v = [v] * self.depth if isinstance(v, int) else list(v)
            if len(v) != self.depth:
                raise ConfigError(f"expected {self.depth} per-stage widths, got {len(v)}")
            return v

        return expand(self.features), expand(self.skip_features)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("features", "skip_features"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        for k in ("features", "skip_features"):
            if isinstance(d.get(k), list):
                d[k] = tuple(d[k])
        return cls(**d)


def _act(name: str) -> nn.Module:
    if name == "leaky_relu":
        return nn.LeakyReLU(0.2, inplace=False)
    if name == "relu":
        return nn.ReLU()
    if name == "elu":
        return nn.ELU()
    raise ConfigError(f"unknown activation {name!r}")


def _conv(cin, cout, k, stride=1):
    layers = []
    if k > 1:
        layers.append(nn.ReflectionPad2d(k // 2))
    layers.append(nn.Conv2d(cin, cout, k, stride=stride))
    return layers


class _Stage(nn.Module):
    def __init__(self, cin, width, skip, up_in, act, mode, inner=None):
        super().__init__()
        self.mode = mode
        self.inner = inner
        self.skip = None
        if skip:
            self.skip = nn.Sequential(*_conv(cin, skip, 1), nn.BatchNorm2d(skip), _act(act))
        self.down = nn.Sequential(
            *_conv(cin, width, 3, stride=2), nn.BatchNorm2d(width), _act(act),
            *_conv(width, width, 3), nn.BatchNorm2d(width), _act(act),
        )
        self.up = nn.Sequential(
            nn.BatchNorm2d(skip + up_in),
            *_conv(skip + up_in, width, 3), nn.BatchNorm2d(width), _act(act),
            *_conv(width, width, 1), nn.BatchNorm2d(width), _act(act),
        )

    def forward(self, x):
        deep = self.down(x)
        if self.inner is not None:
            deep = self.inner(deep)
        align = False if self.mode in ("bilinear", "bicubic") else None
        deep = F.interpolate(deep, scale_factor=2, mode=self.mode, align_corners=align)
        if self.skip is not None:
            deep = torch.cat([self.skip(x), deep], dim=1)
        return self.up(deep)


class PriorNetwork(nn.Module):
    """Skip network producing an image of size ``out_shape`` from a noise seed.

    The internal grid is the observation size rounded up to a multiple of
    ``2**depth``; outputs are center-cropped back to ``out_shape``.
    """

    def __init__(self, cfg: NetConfig, out_shape):
        super().__init__()
        widths, skips = cfg.widths()
        self.cfg = cfg
        self.out_shape = tuple(int(s) for s in out_shape)
        self.grid_shape = tuple(_grid_side(s, cfg.depth) for s in self.out_shape)

        body = None
        for i in reversed(range(cfg.depth)):
            cin = widths[i - 1] if i > 0 else cfg.input_channels
            up_in = widths[i + 1] if i + 1 < cfg.depth else widths[i]
            body = _Stage(cin, widths[i], skips[i], up_in, cfg.activation, cfg.upsample_mode, body)
        self.body = body
        self.head = nn.Conv2d(widths[0], cfg.output_channels, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim == 3:
            z = z.unsqueeze(0)
        if tuple(z.shape[-2:]) != self.grid_shape or z.shape[1] != self.cfg.input_channels:
            raise ValueError(
                f"seed input of shape {tuple(z.shape)} does not match "
                f"({self.cfg.input_channels}, {self.grid_shape[0]}, {self.grid_shape[1]})"
            )
        out = torch.sigmoid(self.head(self.body(z)))
        top = (self.grid_shape[0] - self.out_shape[0]) // 2
        left = (self.grid_shape[1] - self.out_shape[1]) // 2
        return out[..., top:top + self.out_shape[0], left:left + self.out_shape[1]]

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _grid_side(n: int, depth: int) -> int:
    m = 2**depth
    # Keep the bottleneck at least 2x2 so reflection padding and batch norm work.
    return max(-(-n // m) * m, 2 * m)


def build_network(cfg: NetConfig, out_shape, seed: int = 0) -> PriorNetwork:
    """Freshly initialized network; parameters depend only on ``cfg`` and ``seed``."""
    if cfg.depth < 1:
        raise ConfigError("depth must be >= 1")
    if cfg.input_channels < 1 or cfg.output_channels < 1:
        raise ConfigError("channel counts must be positive")
    if cfg.upsample_mode not in ("bilinear", "nearest", "bicubic"):
        raise ConfigError(f"unknown upsample mode {cfg.upsample_mode!r}")
    cfg.widths()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = PriorNetwork(cfg, out_shape)
    return net


@dataclass
class SeedInput:
    """Frozen network input, uniform on ``[0, amplitude]``."""

    z: torch.Tensor
    seed: int
    amplitude: float = 0.1


def make_seed_input(net: PriorNetwork, seed: int) -> SeedInput:
    cfg = net.cfg
    gen = torch.Generator().manual_seed(seed)
    z = torch.rand((1, cfg.input_channels, *net.grid_shape), generator=gen) * cfg.input_amplitude
    z.requires_grad_(False)
    return SeedInput(z, seed, cfg.input_amplitude)


def forward(net: PriorNetwork, z: SeedInput | torch.Tensor) -> torch.Tensor:
    """``f_theta(z)`` as a ``(1, C, H, W)`` tensor with values in ``(0, 1)``."""
    if isinstance(z, SeedInput):
        z = z.z
    return net(z.to(next(net.parameters()).dtype))


def save_checkpoint(net: PriorNetwork, path, **extra) -> None:
    """Write a versioned container of named parameter arrays."""
    state = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": net.cfg.to_dict(),
        "out_shape": list(net.out_shape),
        "parameters": state,
        "extra": extra,
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[PriorNetwork, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = NetConfig.from_dict(payload["config"])
    net = PriorNetwork(cfg, payload["out_shape"])
    net.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in payload["parameters"].items()})
    return net, payload.get("extra", {})
