"""Experiment grid over images x kernels x noise levels x methods.

Every cell degrades the ground truth once (seeded by a stable hash of the
image, kernel and noise level, so all methods see the same observation),
runs each method and writes a trace CSV and a restored PNG. After all cells
finish, a summary CSV, a manifest and one PSNR-vs-iteration plot per
(kernel, noise level) are written.
"""

from __future__ import annotations

import csv
import glob
import hashlib
import io
import json
import logging
import multiprocessing
import platform
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .imaging import BlurKernel, DegradationSpec, degrade, make_kernel, load_kernel, read_png, sigma_from_text, write_png
from .losses import DEFAULT_EPS1, DEFAULT_EPS2, METHODS, LossSpec, preset
from .prior_net import NetConfig
from .runner import RunConfig, run_restoration

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("image", "kernel", "sigma", "method", "psnr_peak", "ssim_peak", "iter_peak", "seconds", "status")
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff")


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    size: int | None = None
    std: float = 1.6
    path: str | None = None
    name: str | None = None

    def build(self) -> BlurKernel:
        if self.kind == "file":
            return load_kernel(self.path, self.name)
        k = make_kernel(self.kind, self.size, self.std)
        return BlurKernel(k.taps, self.name) if self.name else k

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "file":
            return Path(self.path).stem
        return self.kind

    @classmethod
    def parse(cls, item) -> "KernelSpec":
        if isinstance(item, str):
            if item.startswith("file:"):
                return cls("file", path=item[5:])
            return cls(item)
        return cls(**item)


@dataclass(frozen=True)
class MethodSpec:
    """A named loss setting. Unset fields fall back to the preset for ``name``."""

    name: str
    fidelity: str | None = None
    tv_weight: float | None = None
    eps1: float | None = None
    eps2: float | None = None

    def loss_spec(self, kernel_kind: str, sigma255: float, eps1: float, eps2: float) -> LossSpec:
        if self.name.upper() in METHODS and self.fidelity is None:
            base = preset(self.name, kernel_kind, sigma255)
        else:
            base = LossSpec(fidelity=self.fidelity or "LS", sigma255=sigma255)
        return replace(
            base,
            eps1=self.eps1 if self.eps1 is not None else eps1,
            eps2=self.eps2 if self.eps2 is not None else eps2,
            tv_weight=self.tv_weight if self.tv_weight is not None else base.tv_weight,
        )

    @classmethod
    def parse(cls, item) -> "MethodSpec":
        if isinstance(item, str):
            return cls(item.upper())
        return cls(**item)


@dataclass
class ExperimentConfig:
    dataset: str
    output_dir: str
    images: list[str] | str = "*"
    max_size: int | None = None
    kernels: list[KernelSpec] = field(default_factory=lambda: [KernelSpec("uniform"), KernelSpec("radial"), KernelSpec("gaussian")])
    sigmas255: list[float] = field(default_factory=lambda: [0.3**0.5, 2**0.5, 2.0])
    methods: list[MethodSpec] = field(default_factory=lambda: [MethodSpec(m) for m in METHODS])
    eps1: float = DEFAULT_EPS1
    eps2: float = DEFAULT_EPS2
    run: RunConfig = field(default_factory=RunConfig)
    net: NetConfig = field(default_factory=NetConfig)
    workers: int = 1
    timing: bool = True

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        base = Path(base_dir)
        ds = d.pop("dataset")
        if isinstance(ds, dict):
            d.setdefault("images", ds.get("images", "*"))
            d.setdefault("max_size", ds.get("max_size"))
            ds = ds["path"]
        kw = {
            "dataset": str(base / ds),
            "output_dir": str(base / d.pop("output_dir", "results")),
        }
        if "kernels" in d:
            kw["kernels"] = [KernelSpec.parse(k) for k in d.pop("kernels")]
            kw["kernels"] = [replace(k, path=str(base / k.path)) if k.path else k for k in kw["kernels"]]
        if "sigmas255" in d:
            kw["sigmas255"] = [sigma_from_text(s) for s in d.pop("sigmas255")]
        if "methods" in d:
            kw["methods"] = [MethodSpec.parse(m) for m in d.pop("methods")]
        if "run" in d:
            kw["run"] = RunConfig(**d.pop("run"))
        if "net" in d:
            kw["net"] = NetConfig.from_dict(d.pop("net"))
        kw.update(d)
        cfg = cls(**kw)
        if not cfg.methods:
            raise ValueError("experiment needs at least one method")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f), base_dir=path.parent)


@dataclass
class ResultRow:
    image: str
    kernel: str
    sigma: float
    method: str
    psnr_peak: float | None = None
    ssim_peak: float | None = None
    iter_peak: int | None = None
    seconds: float | None = None
    status: str = "ok"
    curve: tuple | None = field(default=None, repr=False)


@dataclass
class ResultTable:
    rows: list[ResultRow]
    kernel_order: list[str] = field(default_factory=list)
    sigma_order: list[float] = field(default_factory=list)
    method_order: list[str] = field(default_factory=list)

    def groups(self) -> dict[tuple, list[ResultRow]]:
        out = defaultdict(list)
        for r in self.rows:
            out[(r.kernel, r.sigma, r.method)].append(r)
        return out

    def _key(self, kernel, sigma, method):
        def idx(seq, v):
            return seq.index(v) if v in seq else len(seq)

        return (idx(self.kernel_order, kernel), kernel, idx(self.sigma_order, sigma), sigma,
                idx(self.method_order, method), method)

    def aggregates(self) -> dict[tuple, dict]:
        """Arithmetic means over images of the successful rows of each group."""
        agg = {}
        groups = self.groups()
        for key in sorted(groups, key=lambda k: self._key(*k)):
            ok = [r for r in groups[key] if r.status == "ok"]
            agg[key] = {
                "psnr_peak": _mean([r.psnr_peak for r in ok]),
                "ssim_peak": _mean([r.ssim_peak for r in ok]),
                "iter_peak": _mean([r.iter_peak for r in ok]),
                "seconds": _mean([r.seconds for r in ok]),
                "count": len(ok),
            }
        return agg


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def cell_seed(image: str, kernel: str, sigma: float) -> int:
    digest = hashlib.sha256(f"{image}|{kernel}|{sigma!r}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def sigma_label(sigma: float) -> str:
    return f"sigma{sigma:.4f}"


def cell_paths(out_dir, image: str, kernel: str, sigma: float, method: str) -> dict[str, Path]:
    base = Path(out_dir) / "runs" / image / kernel / sigma_label(sigma)
    return {"trace": base / f"{method}.csv", "image": base / f"{method}.png"}


def plot_path(out_dir, kernel: str, sigma: float) -> Path:
    return Path(out_dir) / "plots" / f"psnr_{kernel}_{sigma_label(sigma)}.png"


def list_images(cfg: ExperimentConfig) -> list[Path]:
    root = Path(cfg.dataset)
    if isinstance(cfg.images, str):
        paths = [Path(p) for p in glob.glob(str(root / cfg.images))]
    else:
        paths = [root / p for p in cfg.images]
    return sorted(p for p in paths if p.suffix.lower() in IMAGE_SUFFIXES or not p.exists())


def _run_cell(job: dict) -> list[dict]:
    """Degrade one image and run every method on it. Runs in a worker."""
    import torch

    torch.set_num_threads(job.get("threads", torch.get_num_threads()))
    gt = job["ground_truth"]
    kernel = job["kernel"]
    sigma = job["sigma"]
    results = []
    try:
        y = degrade(gt, DegradationSpec(kernel, sigma, job["seed"]))
    except Exception as exc:
        y, degrade_error = None, exc
    for name, loss in job["methods"]:
        paths = cell_paths(job["out_dir"], job["image"], job["kernel_label"], sigma, name)
        paths["trace"].parent.mkdir(parents=True, exist_ok=True)
        row = {"image": job["image"], "kernel": job["kernel_label"], "sigma": sigma, "method": name}
        try:
            if y is None:
                raise degrade_error
            res = run_restoration(y, kernel, loss, job["net"], job["run"], ground_truth=gt)
        except Exception as exc:
            log.error("cell %s/%s/%s/%s failed: %s", job["image"], job["kernel_label"], sigma, name, exc)
            row.update(status="failed", error="".join(traceback.format_exception_only(type(exc), exc)).strip())
            results.append(row)
            continue
        res.trace.write_csv(paths["trace"])
        write_png(paths["image"], res.image)
        best = res.trace.row_at(res.trace.best_iteration)
        row.update(
            psnr_peak=best.psnr,
            ssim_peak=best.ssim,
            iter_peak=best.iteration,
            seconds=res.trace.wall_time,
            status="ok",
            curve=res.trace.psnr_curve(),
        )
        results.append(row)
    return results


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kernels = [(k.label, k, k.build()) for k in cfg.kernels]
    method_names = [m.name for m in cfg.methods]
    if not method_names:
        raise ValueError("experiment needs at least one method")

    manifest = {
        "config": _config_record(cfg),
        "preprocessing": {
            "max_size": cfg.max_size,
            "crop": "center" if cfg.max_size else None,
            "color": "grayscale kept single-channel; other modes converted to RGB",
            "scale": "8-bit values divided by 255",
            "noise": "sigma255 / 255 standard deviation, added after circular blur, not clipped",
        },
        "environment": {"python": platform.python_version(), "numpy": np.__version__},
        "images": [],
        "skipped": [],
        "failed": [],
    }

    jobs = []
    for path in list_images(cfg):
        try:
            gt = read_png(path, cfg.max_size)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            manifest["skipped"].append({"path": str(path), "reason": str(exc)})
            continue
        manifest["images"].append({"name": path.stem, "path": str(path), "shape": list(gt.shape)})
        for label, kspec, kernel in kernels:
            for sigma in cfg.sigmas255:
                methods = [(m.name, m.loss_spec(kspec.kind, sigma, cfg.eps1, cfg.eps2)) for m in cfg.methods]
                jobs.append({
                    "image": path.stem,
                    "ground_truth": gt,
                    "kernel": kernel,
                    "kernel_label": label,
                    "sigma": sigma,
                    "seed": cell_seed(path.stem, label, sigma),
                    "methods": methods,
                    "net": cfg.net,
                    "run": cfg.run,
                    "out_dir": str(out_dir),
                })

    if cfg.workers > 1 and len(jobs) > 1:
        for job in jobs:
            job["threads"] = 1
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=ctx) as pool:
            outputs = list(pool.map(_run_cell, jobs))
    else:
        outputs = [_run_cell(job) for job in jobs]

    rows = []
    for cell in outputs:
        for r in cell:
            error = r.pop("error", None)
            if r["status"] == "failed":
                manifest["failed"].append({**{k: r[k] for k in ("image", "kernel", "sigma", "method")}, "error": error})
            rows.append(ResultRow(**r))
    if not cfg.timing:
        for r in rows:
            r.seconds = None

    table = ResultTable(rows, [k[0] for k in kernels], list(cfg.sigmas255), method_names)
    table.rows.sort(key=lambda r: (*table._key(r.kernel, r.sigma, r.method), r.image))
    emit_summary(table, out_dir / "summary.csv")
    emit_plots(table, out_dir)
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return table


def _config_record(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["net"] = cfg.net.to_dict()
    return d


def _fmt(v, spec):
    return "" if v is None else format(v, spec)


def summary_csv(table: ResultTable) -> str:
    if not table.rows:
        raise ValueError("cannot write a summary for an empty result table")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    groups = table.groups()
    for key, agg in table.aggregates().items():
        kernel, sigma, method = key
        for r in sorted(groups[key], key=lambda r: r.image):
            w.writerow([r.image, r.kernel, f"{r.sigma:.4f}", r.method, _fmt(r.psnr_peak, ".2f"),
                        _fmt(r.ssim_peak, ".2f"), _fmt(r.iter_peak, "d"), _fmt(r.seconds, ".1f"), r.status])
        status = "ok" if agg["count"] == len(groups[key]) else f"partial:{agg['count']}/{len(groups[key])}"
        w.writerow(["MEAN", kernel, f"{sigma:.4f}", method, _fmt(agg["psnr_peak"], ".2f"),
                    _fmt(agg["ssim_peak"], ".2f"), _fmt(agg["iter_peak"], ".1f"), _fmt(agg["seconds"], ".1f"), status])
    return buf.getvalue()


def emit_summary(table: ResultTable, path) -> Path:
    """Write detail rows followed by one mean row per (kernel, sigma, method)."""
    text = summary_csv(table)
    path = Path(path)
    with open(path, "w", newline="") as f:
        f.write(text)
    return path


def emit_plots(table: ResultTable, out_dir) -> list[Path]:
    """One PSNR-vs-iteration figure per (kernel, sigma), curves averaged over images."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_cell = defaultdict(lambda: defaultdict(list))
    for r in table.rows:
        if r.status == "ok" and r.curve is not None and len(r.curve[0]):
            by_cell[(r.kernel, r.sigma)][r.method].append(r.curve)

    written = []
    for (kernel, sigma), methods in sorted(by_cell.items(), key=lambda kv: table._key(kv[0][0], kv[0][1], "")):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for method in sorted(methods, key=lambda m: table._key(kernel, sigma, m)):
            curves = methods[method]
            n = min(len(c[0]) for c in curves)
            its = curves[0][0][:n]
            ax.plot(its, np.mean([c[1][:n] for c in curves], axis=0), label=method)
        ax.set_xlabel("iteration")
        ax.set_ylabel("PSNR [dB]")
        ax.set_title(f"{kernel} kernel, sigma={sigma:.3g}")
        ax.grid(alpha=0.3)
        ax.legend()
        path = plot_path(out_dir, kernel, sigma)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.tight_layout()
        fig.savefig(path, dpi=100, metadata={"Software": None})
        plt.close(fig)
        written.append(path)
    return written
