"""Reconstruction fidelity metrics.

All functions take 1-D (or any equal-shaped) arrays and compute over every
element. ``prd_spec`` is this package's own definition: PRD between
magnitude STFTs (Hann window 256, hop 128, no padding).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .errors import EmptyReport, NonFiniteInput, ShapeMismatch, TooShort, ZeroReference


def _pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"shape mismatch {x.shape} vs {x_hat.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x_hat))):
        raise NonFiniteInput("metrics reject NaN or infinite inputs")
    return x, x_hat


def prd(x, x_hat) -> float:
    """Percentage root-mean-square difference, ``100 * ||x - x_hat|| / ||x||``."""
    x, x_hat = _pair(x, x_hat)
    ref = np.linalg.norm(x)
    if ref == 0:
        raise ZeroReference("PRD is undefined for an all-zero reference")
    return float(np.linalg.norm(x - x_hat) / ref * 100)


def rmse(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def snr_db(x, x_hat) -> float:
    """``20 log10(||x|| / ||x - x_hat||)``; ``inf`` for exact reconstruction."""
    x, x_hat = _pair(x, x_hat)
    ref = np.linalg.norm(x)
    if ref == 0:
        raise ZeroReference("SNR is undefined for an all-zero reference")
    err = np.linalg.norm(x - x_hat)
    if err == 0:
        return math.inf
    return float(20 * np.log10(ref / err))


def psnr_db(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ZeroReference("PSNR is undefined for an all-zero reference")
    err = rmse(x, x_hat)
    if err == 0:
        return math.inf
    return float(20 * np.log10(peak / err))


def magnitude_stft(x: np.ndarray, window: int = 256, hop: int = 128) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < window:
        raise TooShort(f"signal of {x.shape[-1]} samples is shorter than the STFT window {window}")
    frames = np.lib.stride_tricks.sliding_window_view(x, window, axis=-1)[..., ::hop, :]
    return np.abs(np.fft.rfft(frames * signal.get_window("hann", window), axis=-1))


def prd_spec(x, x_hat, window: int = 256, hop: int = 128) -> float:
    x, x_hat = _pair(x, x_hat)
    return prd(magnitude_stft(x, window, hop), magnitude_stft(x_hat, window, hop))


@dataclass
class MetricReport:
    prd: float
    prd_spec: float
    rmse: float
    snr_db: float
    psnr_db: float
    nominal_cr: float = float("nan")
    aggregation: str = "median"
    n_patches: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


def patch_report(x, x_hat, nominal_cr: float = float("nan"), stft_window: int = 256,
                 stft_hop: int = 128) -> MetricReport:
    """All metrics for one patch. ``prd_spec`` is NaN when the patch is shorter than the window."""
    try:
        spec = prd_spec(x, x_hat, stft_window, stft_hop)
    except (TooShort, ZeroReference):
        spec = float("nan")
    return MetricReport(
        prd=prd(x, x_hat), prd_spec=spec, rmse=rmse(x, x_hat),
        snr_db=snr_db(x, x_hat), psnr_db=psnr_db(x, x_hat),
        nominal_cr=nominal_cr, aggregation="none", n_patches=1,
    )


def aggregate(reports: Sequence[MetricReport], mode: str = "median") -> MetricReport:
    """Combine per-patch reports.

    ``mode="median"`` takes the median of PRD and PRD-spec and the mean of the
    remaining metrics; ``mode="mean"`` averages everything.
    """
    reports = list(reports)
    if not reports:
        raise EmptyReport("cannot aggregate zero reports")
    if mode not in ("median", "mean"):
        raise ValueError(f"unknown aggregation {mode!r}")
    center = np.nanmedian if mode == "median" else np.nanmean

    def col(name):
        return np.array([getattr(r, name) for r in reports], dtype=np.float64)

    def safe(fn, values):
        values = values[~np.isnan(values)]
        return float(fn(values)) if values.size else float("nan")

    return MetricReport(
        prd=safe(center, col("prd")),
        prd_spec=safe(center, col("prd_spec")),
        rmse=safe(np.mean, col("rmse")),
        snr_db=safe(np.mean, col("snr_db")),
        psnr_db=safe(np.mean, col("psnr_db")),
        nominal_cr=reports[0].nominal_cr,
        aggregation=mode,
        n_patches=int(sum(r.n_patches for r in reports)),
    )


def aggregate_both(reports: Sequence[MetricReport]) -> dict:
    """Median- and mean-aggregated reports side by side."""
    return {"median": aggregate(reports, "median"), "mean": aggregate(reports, "mean")}


def patch_prds(x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    """Vectorised PRD for ``(n, W)`` patch arrays; all-zero reference rows give NaN."""
    x, x_hat = _pair(x, x_hat)
    ref = np.linalg.norm(x, axis=-1)
    err = np.linalg.norm(x - x_hat, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ref > 0, err / ref * 100, np.nan)
