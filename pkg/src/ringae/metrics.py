"""Reconstruction quality metrics and report rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndtensor import ShapeError

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10


def psnr(xhat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB, capped at 100 dB for near-zero error."""
    if xhat.shape != x.shape:
        raise ShapeError(f"psnr: shapes {xhat.shape} and {x.shape} differ")
    mse = float(np.mean(np.square(xhat - x)))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


def masked_psnr(xhat: np.ndarray, x: np.ndarray, hole: np.ndarray,
                peak: float = 1.0) -> float:
    """PSNR restricted to the hole pixels (hole is a boolean selector)."""
    if xhat.shape != x.shape:
        raise ShapeError(f"masked_psnr: shapes {xhat.shape} and {x.shape} differ")
    hole = np.asarray(hole, dtype=bool)
    if hole.shape != x.shape:
        raise ShapeError(f"masked_psnr: hole shape {hole.shape} vs image {x.shape}")
    if not hole.any():
        raise ValueError("masked_psnr: hole is empty")
    mse = float(np.mean(np.square(xhat[hole] - x[hole])))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / mse))


@dataclass
class ReportRow:
    method: str
    task: str
    psnr_mean: float
    psnr_std: float
    masked_psnr: float | None  # inpainting only
    iterations: int
    seconds: float

    def csv_fields(self) -> list:
        masked = "" if self.masked_psnr is None else f"{self.masked_psnr:.4f}"
        return [self.method, self.task, f"{self.psnr_mean:.4f}",
                f"{self.psnr_std:.4f}", masked, str(self.iterations),
                f"{self.seconds:.3f}"]


REPORT_HEADER = "method,task,psnr_mean_db,psnr_std_db,masked_psnr_db,iterations,seconds"
