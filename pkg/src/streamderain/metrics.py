"""PSNR, SSIM and sequence-level quality reports (peak value 1.0)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError

PSNR_CAP = 100.0


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-ax ** 2 / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, *, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"frame {a.shape} smaller than the {window}x{window} window")
    c1, c2 = (0.01 * 1.0) ** 2, (0.03 * 1.0) ** 2
    wgt = gaussian_window(window, sigma)

    def filt(x):
        return np.einsum("ijkl,kl->ij", sliding_window_view(x, wgt.shape), wgt)

    mu_a, mu_b = filt(a), filt(b)
    saa = filt(a * a) - mu_a ** 2
    sbb = filt(b * b) - mu_b ** 2
    sab = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


@dataclass
class FrameMetrics:
    index: int
    psnr: float
    ssim: float


@dataclass
class SequenceReport:
    frames: list
    mean_psnr: float
    mean_ssim: float

    def to_dict(self) -> dict:
        return {
            "schema": "streamderain.quality/1",
            "frames": [asdict(f) for f in self.frames],
            "summary": {"n_frames": len(self.frames), "mean_psnr": self.mean_psnr,
                        "mean_ssim": self.mean_ssim},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_sequence(recovered, reference) -> SequenceReport:
    recovered = list(recovered)
    reference = list(reference)
    if len(recovered) != len(reference):
        raise ValueError(f"sequence lengths differ: {len(recovered)} vs {len(reference)}")
    frames = [FrameMetrics(i, psnr(r, g), ssim(r, g))
              for i, (r, g) in enumerate(zip(recovered, reference))]
    if not frames:
        raise ValueError("empty sequences")
    return SequenceReport(frames, float(np.mean([f.psnr for f in frames])),
                          float(np.mean([f.ssim for f in frames])))
