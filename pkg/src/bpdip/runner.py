"""Test-time optimization of the prior network against one observation."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .imaging import BlurKernel, as_image
from .losses import LossSpec, Objective, image_to_tensor, tensor_to_image
from .metrics import psnr, ssim
from .prior_net import NetConfig, build_network, make_seed_input

log = logging.getLogger(__name__)

STOPPING_MODES = ("fixed_budget", "oracle_peak")
TRACE_COLUMNS = ("iteration", "loss", "psnr", "ssim")


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 10000
    lr: float = 0.01
    stride: int = 10
    stopping: str = "oracle_peak"
    seed: int = 0
    record_ssim: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.stopping not in STOPPING_MODES:
            raise ValueError(f"stopping must be one of {STOPPING_MODES}, got {self.stopping!r}")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    loss: float
    psnr: float | None = None
    ssim: float | None = None


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)
    best_iteration: int | None = None
    best_psnr: float | None = None
    wall_time: float = 0.0

    def psnr_curve(self) -> tuple[np.ndarray, np.ndarray]:
        its = np.array([r.iteration for r in self.rows if r.psnr is not None])
        vals = np.array([r.psnr for r in self.rows if r.psnr is not None])
        return its, vals

    def row_at(self, iteration: int) -> TraceRow:
        for r in self.rows:
            if r.iteration == iteration:
                return r
        raise KeyError(iteration)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.iteration,
                f"{r.loss:.10g}",
                "" if r.psnr is None else f"{r.psnr:.6f}",
                "" if r.ssim is None else f"{r.ssim:.6f}",
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def early_stop_select(trace: RunTrace, mode: str) -> int:
    """Iteration number of the iterate to return.

    ``oracle_peak`` picks the highest recorded PSNR (earliest on ties),
    ``fixed_budget`` the last recorded iteration.
    """
    if not trace.rows:
        raise ValueError("empty trace")
    if mode == "fixed_budget":
        return trace.rows[-1].iteration
    if mode != "oracle_peak":
        raise ValueError(f"unknown stopping mode {mode!r}")
    best = None
    for r in trace.rows:
        if r.psnr is not None and (best is None or r.psnr > best.psnr):
            best = r
    if best is None:
        raise ValueError("oracle_peak needs PSNR values in the trace")
    return best.iteration


@dataclass
class RunResult:
    image: np.ndarray
    trace: RunTrace
    selected_iteration: int
    state_dict: dict
    num_parameters: int


def run_restoration(
    y,
    h: BlurKernel,
    loss: LossSpec,
    net_cfg: NetConfig | None = None,
    run_cfg: RunConfig | None = None,
    ground_truth=None,
    progress=None,
) -> RunResult:
    """Fit ``f_theta(z)`` to the observation ``y`` with Adam.

    Iteration ``t`` evaluates the network with the parameters obtained after
    ``t`` updates, so the trace starts at the initialization (``t = 0``) and
    ends at ``t = iterations``. Loss, PSNR and SSIM are recorded every
    ``stride`` iterations and at the final one. Metrics use the output
    clipped to ``[0, 1]``.

    The loss itself is evaluated in double precision; the network runs in
    single precision.
    """
    net_cfg = net_cfg or NetConfig()
    run_cfg = run_cfg or RunConfig()
    y = as_image(y)
    if ground_truth is not None:
        ground_truth = as_image(ground_truth)
        if ground_truth.shape != y.shape:
            raise ValueError("ground truth and observation shapes differ")
    elif run_cfg.stopping == "oracle_peak":
        raise ValueError("oracle_peak stopping requires a ground-truth image")
    if net_cfg.output_channels != y.shape[2]:
        net_cfg = replace(net_cfg, output_channels=y.shape[2])

    objective = Objective(h, loss, y.shape[:2], dtype=torch.float64)
    y_t = image_to_tensor(y).unsqueeze(0)

    net = build_network(net_cfg, y.shape[:2], seed=run_cfg.seed)
    seed_input = make_seed_input(net, run_cfg.seed)
    z = seed_input.z
    jitter_gen = torch.Generator().manual_seed(run_cfg.seed + 1)
    optimizer = torch.optim.Adam(net.parameters(), lr=run_cfg.lr, betas=(0.9, 0.999))
    net.train()

    trace = RunTrace()
    best_image = None
    best_state = None
    best_psnr = -math.inf
    last_image = None
    start = time.perf_counter()

    for t in range(run_cfg.iterations + 1):
        record = t % run_cfg.stride == 0 or t == run_cfg.iterations
        final = t == run_cfg.iterations
        net_in = z
        if net_cfg.input_jitter > 0 and not final:
            net_in = z + torch.randn(z.shape, generator=jitter_gen) * net_cfg.input_jitter
        out = net(net_in)
        value = objective(out.double(), y_t)
        loss_value = float(value.detach())
        if not math.isfinite(loss_value):
            raise NonFiniteLossError(f"non-finite loss {loss_value} at iteration {t}")

        if record:
            image = np.clip(tensor_to_image(out), 0.0, 1.0)
            row_psnr = row_ssim = None
            if ground_truth is not None:
                row_psnr = psnr(image, ground_truth)
                if run_cfg.record_ssim:
                    row_ssim = ssim(image, ground_truth)
                if row_psnr > best_psnr:
                    best_psnr = row_psnr
                    best_image = image
                    best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
                    trace.best_iteration = t
                    trace.best_psnr = row_psnr
            trace.rows.append(TraceRow(t, loss_value, row_psnr, row_ssim))
            if progress is not None:
                progress(trace.rows[-1])
            if final:
                last_image = image

        if final:
            break
        optimizer.zero_grad(set_to_none=True)
        value.backward()
        optimizer.step()

    trace.wall_time = time.perf_counter() - start
    selected = early_stop_select(trace, run_cfg.stopping)
    if run_cfg.stopping == "oracle_peak":
        image, state = best_image, best_state
    else:
        image = last_image
        state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    log.debug("run finished: %d iterations, selected %d, %.1fs", run_cfg.iterations, selected, trace.wall_time)
    return RunResult(image, trace, selected, state, net.num_parameters)

