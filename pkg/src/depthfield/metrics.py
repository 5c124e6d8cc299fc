"""Per-frame quality metrics: RMSE, delta accuracy, log10 error, PSNR, SSIM.

Depth metrics skip invalid (zero) pixels: a pixel contributes only where both
maps are valid, except delta accuracy, where a valid ground-truth pixel with a
non-positive prediction counts as a failure so the fraction stays meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .io import DepthMap, RgbImage


@dataclass(frozen=True)
class FrameMetrics:
    """Per-frame metric record; in aggregated means the counts become floats."""

    rmse: float
    delta1: float
    delta2: float
    delta3: float
    log10_err: float
    density: float
    n_valid: float

    def __post_init__(self):
        if not (0 <= self.delta1 <= self.delta2 <= self.delta3 <= 1):
            raise ValueError("delta fractions must satisfy 0 <= d1 <= d2 <= d3 <= 1")
        if self.rmse < 0 or self.log10_err < 0:
            raise ValueError("rmse and log10 error must be non-negative")
        if not 0 <= self.density <= 1:
            raise ValueError("density must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
            "log10": self.log10_err,
            "density": self.density,
            "n_valid": self.n_valid,
        }


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D Gaussian window (sums to 1)."""
    if size < 1 or sigma <= 0:
        raise ValueError("window size must be >= 1 and sigma positive")
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


@dataclass(frozen=True)
class SsimParams:
    """Stabilization constants and window for SSIM.

    c1 = (k1 * L)^2 and c2 = (k2 * L)^2 where L is the dynamic range.
    """

    dynamic_range: float
    k1: float = 0.01
    k2: float = 0.03
    window: np.ndarray = None

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic range must be positive")
        w = self.window
        if w is None:
            w = gaussian_window()
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("window must be a square 2-D weight array")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("window weights must sum to 1")
        object.__setattr__(self, "window", w)

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def _depth_pair(gt: DepthMap, pred: DepthMap):
    if gt.shape != pred.shape:
        raise ValueError(f"dimension mismatch: gt {gt.shape} vs pred {pred.shape}")
    return gt.values, pred.values


def rmse(gt: DepthMap, pred: DepthMap) -> float:
    """Root mean squared depth error over jointly-valid pixels, in meters."""
    g, p = _depth_pair(gt, pred)
    joint = (g > 0) & (p > 0)
    if not joint.any():
        raise ValueError("no jointly-valid pixels")
    d = g[joint] - p[joint]
    return float(np.sqrt(np.mean(d * d)))


def delta_accuracy(gt: DepthMap, pred: DepthMap, k: int) -> float:
    """Fraction of valid-gt pixels with max(gt/pred, pred/gt) < 1.25**k.

    Valid-gt pixels where the prediction is missing (<= 0) count as failures.
    """
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2, or 3")
    g, p = _depth_pair(gt, pred)
    valid_gt = g > 0
    n = int(valid_gt.sum())
    if n == 0:
        raise ValueError("no valid ground-truth pixels")
    joint = valid_gt & (p > 0)
    gj, pj = g[joint], p[joint]
    ratio = np.maximum(gj / pj, pj / gj)
    hits = int((ratio < 1.25 ** k).sum())
    return hits / n


def log10_error(gt: DepthMap, pred: DepthMap) -> float:
    """Mean absolute log10 depth error over jointly-valid pixels."""
    g, p = _depth_pair(gt, pred)
    joint = (g > 0) & (p > 0)
    if not joint.any():
        raise ValueError("no jointly-valid pixels")
    return float(np.mean(np.abs(np.log10(g[joint]) - np.log10(p[joint]))))


def psnr(reference: RgbImage, test: RgbImage) -> float:
    """Peak signal-to-noise ratio in dB; identical images give math.inf."""
    if reference.values.shape != test.values.shape:
        raise ValueError("dimension mismatch between reference and test image")
    if reference.max_i != test.max_i:
        raise ValueError("reference and test image must share max_i")
    diff = reference.values - test.values
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(reference.max_i / math.sqrt(mse))


def _ssim_formula(mu_x, mu_y, var_x, var_y, cov_xy, c1, c2):
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def _channels(obj) -> np.ndarray:
    if isinstance(obj, DepthMap):
        return obj.values[..., None]
    if isinstance(obj, RgbImage):
        return obj.values
    raise TypeError(f"ssim expects DepthMap or RgbImage, got {type(obj).__name__}")


def ssim(x, y, params: SsimParams = None, mode: str = "windowed") -> float:
    """Structural similarity between two images or depth maps.

    Global mode evaluates the SSIM formula once from whole-image statistics
    (channels pooled). Windowed mode averages the formula over sliding
    Gaussian windows per channel, then over channels. When params is omitted
    an RgbImage's max_i is used as the dynamic range; DepthMap inputs need
    explicit params since they carry no range.
    """
    cx, cy = _channels(x), _channels(y)
    if cx.shape != cy.shape:
        raise ValueError(f"dimension mismatch: {cx.shape[:2]} vs {cy.shape[:2]}")
    if params is None:
        if isinstance(x, RgbImage):
            params = SsimParams(dynamic_range=x.max_i)
        else:
            raise ValueError("params with an explicit dynamic range are required for depth maps")
    c1, c2 = params.c1, params.c2

    if mode == "global":
        mu_x, mu_y = cx.mean(), cy.mean()
        var_x = (cx * cx).mean() - mu_x * mu_x
        var_y = (cy * cy).mean() - mu_y * mu_y
        cov = (cx * cy).mean() - mu_x * mu_y
        return float(_ssim_formula(mu_x, mu_y, var_x, var_y, cov, c1, c2))

    if mode != "windowed":
        raise ValueError(f"unknown ssim mode {mode!r}")

    w = params.window
    s = w.shape[0]
    if cx.shape[0] < s or cx.shape[1] < s:
        raise ValueError(f"windowed ssim needs dims >= {s}x{s}, got {cx.shape[:2]}")

    per_channel = []
    for ch in range(cx.shape[2]):
        a, b = cx[:, :, ch], cy[:, :, ch]
        wa = sliding_window_view(a, (s, s))
        wb = sliding_window_view(b, (s, s))
        mu_a = np.tensordot(wa, w, axes=([2, 3], [0, 1]))
        mu_b = np.tensordot(wb, w, axes=([2, 3], [0, 1]))
        e_aa = np.tensordot(wa * wa, w, axes=([2, 3], [0, 1]))
        e_bb = np.tensordot(wb * wb, w, axes=([2, 3], [0, 1]))
        e_ab = np.tensordot(wa * wb, w, axes=([2, 3], [0, 1]))
        smap = _ssim_formula(mu_a, mu_b, e_aa - mu_a * mu_a, e_bb - mu_b * mu_b,
                             e_ab - mu_a * mu_b, c1, c2)
        per_channel.append(smap.mean())
    return float(np.mean(per_channel))
