"""PSNR and SSIM on the luma plane, and dataset-level evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import data as D

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2


def shave_border(a: np.ndarray, shave: int) -> np.ndarray:
    if shave < 0:
        raise ValueError("shave must be non-negative")
    if shave == 0:
        return a
    out = a[shave:-shave, shave:-shave]
    if out.size == 0:
        raise ValueError(f"shave {shave} leaves nothing of a {a.shape[0]}x{a.shape[1]} image")
    return out


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Peak signal-to-noise ratio in dB for 0-255 planes; ``inf`` when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a, b = shave_border(a, shave), shave_border(b, shave)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    a = sliding_window_view(a, n, axis=0) @ g
    return sliding_window_view(a, n, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window, averaged over valid positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    dataset: str
    scale: int
    shave: int
    sigma: float = 0.0
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_tsv(self) -> str:
        lines = [f"{n}\t{p:.4f}\t{s:.6f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max([len(n) for n in self.names] + [len("mean")])
        head = (f"dataset {self.dataset}  scale x{self.scale}  sigma {self.sigma:g}  shave {self.shave}\n"
                f"{'image':<{width}}  {'PSNR (dB)':>10}  {'SSIM':>8}\n")
        rows = [f"{n:<{width}}  {p:>10.4f}  {s:>8.4f}" for n, p, s in zip(self.names, self.psnr, self.ssim)]
        rows.append(f"{'mean':<{width}}  {self.mean_psnr:>10.4f}  {self.mean_ssim:>8.4f}")
        return head + "\n".join(rows) + "\n"


Upscaler = Callable[[np.ndarray, int], np.ndarray]


def model_upscaler(model) -> Upscaler:
    """Wrap a network as an (h, w, 3) -> (h*s, w*s, 3) image function."""
    from .model import UnsupportedScaleError, forward

    def run(lr: np.ndarray, scale: int) -> np.ndarray:
        if scale not in model.heads:
            raise UnsupportedScaleError(f"model has no x{scale} head")
        x = lr.transpose(2, 0, 1)[None].astype(model.dtype)
        y = forward(model, x, scale)
        return y[0].transpose(1, 2, 0).astype(np.float64)

    return run


def evaluate(model, dataset_dir, scale: int, sigma: float = 0.0, shave: int | None = None,
             seed: int = 0, quantize: bool = True) -> EvalReport:
    """Degrade every HR image, super-resolve, and score on the luma plane.

    ``model`` is either a network or any ``(lr_image, scale) -> sr_image``
    callable (e.g. :func:`acnet.data.bicubic_upscale`). With ``quantize`` the
    LR input and the prediction pass through 8-bit, as stored images would.
    """
    from .model import AcnetModel, UnsupportedScaleError

    if isinstance(model, AcnetModel):
        if scale not in model.heads:
            raise UnsupportedScaleError(f"model has no x{scale} head (scales {model.config.scales})")
        upscale = model_upscaler(model)
    else:
        upscale = model
    shave = scale if shave is None else shave
    paths = D.list_images(dataset_dir)
    if not paths:
        raise ValueError(f"no images in {dataset_dir}")
    rng = np.random.default_rng(seed)
    report = EvalReport(dataset=Path(dataset_dir).name, scale=scale, shave=shave, sigma=sigma)
    for path in paths:
        pair = D.degrade(D.load_image(path), scale, sigma, rng)
        lr = D.quantize(pair.lr) if quantize else pair.lr
        sr = np.clip(upscale(lr, scale), 0.0, 1.0)
        if quantize:
            sr = D.quantize(sr)
        y_sr, y_hr = D.rgb_to_y(sr), D.rgb_to_y(pair.hr)
        report.names.append(path.stem)
        report.psnr.append(psnr(y_sr, y_hr, shave))
        report.ssim.append(ssim(shave_border(y_sr, shave), shave_border(y_hr, shave)))
    return report
