"""Depth map, image, and mask containers plus their on-disk formats.

Depth is stored in meters with 0 as the "invalid / no measurement" sentinel.
Supported formats: 16-bit grayscale PNG (raw / divisor convention), PFM "Pf"
grayscale, 8-bit PNG for RGB images and 0/255 masks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np
from PIL import Image

PROB_SUM_TOL = 1e-6  # accepted float ingestion noise on bin probabilities

_PNG16_MODES = {"I;16", "I;16B", "I;16L", "I;16N", "I"}


def _readonly(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DepthMap:
    """Rectangular grid of metric depth values; 0 marks an invalid pixel."""

    values: np.ndarray  # (height, width) float64, meters

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth values must be finite")
        if np.any(v < 0):
            raise ValueError("depth values must be >= 0 (0 means invalid)")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def valid_mask(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class RgbImage:
    """Three-channel image with per-channel intensities in [0, max_i]."""

    values: np.ndarray  # (height, width, 3) float64
    max_i: float = 255.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"rgb values must have shape (h, w, 3), got {v.shape}")
        if self.max_i <= 0:
            raise ValueError("max_i must be positive")
        if np.any(v < 0) or np.any(v > self.max_i):
            raise ValueError("rgb values must lie within [0, max_i]")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Mask:
    """Per-pixel boolean mask; true marks the region to remove / inpaint."""

    values: np.ndarray  # (height, width) bool

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"mask values must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", _readonly(v.astype(bool)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinDepthPrediction:
    """Per-pixel probabilities over depth bins plus the bin centers in meters.

    `centers` may be shared across pixels (shape (n_bins,)) or per-pixel
    (shape (h, w, n_bins)), matching adaptive-bin depth heads.
    """

    probabilities: np.ndarray  # (h, w, n_bins)
    centers: np.ndarray  # (n_bins,) or (h, w, n_bins)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        c = np.asarray(self.centers, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError(f"probabilities must have shape (h, w, n_bins), got {p.shape}")
        if c.shape not in (p.shape, p.shape[-1:]):
            raise ValueError(f"centers shape {c.shape} incompatible with probabilities {p.shape}")
        if np.any(p < 0):
            raise ValueError("bin probabilities must be non-negative")
        sums = p.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
            worst = float(np.abs(sums - 1.0).max())
            raise ValueError(f"per-pixel probabilities must sum to 1 +/- {PROB_SUM_TOL}, "
                             f"worst deviation {worst:g}")
        if np.any(c <= 0):
            raise ValueError("bin centers must be strictly positive")
        object.__setattr__(self, "probabilities", _readonly(p))
        object.__setattr__(self, "centers", _readonly(c))

    @property
    def n_bins(self) -> int:
        return self.probabilities.shape[-1]


def decode_bin_depth(pred: BinDepthPrediction) -> DepthMap:
    """Collapse a bin-probability prediction to metric depth.

    Each pixel's depth is the probability-weighted sum of its bin centers.
    """
    if pred.centers.ndim == 1:
        depth = pred.probabilities @ pred.centers
    else:
        depth = np.einsum("hwk,hwk->hw", pred.probabilities, pred.centers)
    return DepthMap(depth)


def density(depth: DepthMap) -> float:
    """Fraction of pixels holding a non-zero (valid) depth value."""
    return float(np.count_nonzero(depth.values)) / depth.values.size


# --- 16-bit PNG depth (KITTI-style raw/divisor encoding) ---

def load_depth_png16(path, scale_divisor: float = 256.0) -> DepthMap:
    """Load a 16-bit single-channel PNG as metric depth.

    Depth is raw_value / scale_divisor; raw 0 stays 0 (invalid). The divisor
    defaults to the KITTI convention of 256.
    """
    if scale_divisor <= 0:
        raise ValueError("scale_divisor must be positive")
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"{path}: expected a PNG file, got {im.format}")
        if im.mode not in _PNG16_MODES:
            raise ValueError(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode!r}")
        raw = np.asarray(im, dtype=np.float64)
    return DepthMap(raw / scale_divisor)


def store_depth_png16(depth: DepthMap, path, scale_divisor: float = 256.0) -> None:
    """Store depth as a 16-bit PNG using the raw = depth * divisor convention.

    Values that would not fit or round to the invalid sentinel are clipped to
    the representable range; invalid pixels stay raw 0.
    """
    if scale_divisor <= 0:
        raise ValueError("scale_divisor must be positive")
    raw = np.rint(depth.values * scale_divisor)
    raw = np.clip(raw, 0, 65535)
    raw[depth.values == 0] = 0
    Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")


# --- PFM grayscale ---

def load_depth_pfm(path) -> DepthMap:
    """Load a grayscale "Pf" PFM file.

    The scale line's sign selects endianness; its magnitude is ignored, as is
    conventional for depth tooling. Rows are stored bottom-up per the format.
    """
    with open(path, "rb") as f:
        data = f.read()
    header = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", data)
    if header is None:
        raise ValueError(f"{path}: not a valid PFM header")
    magic = header.group(1)
    if magic == b"PF":
        raise ValueError(f"{path}: color PFM ('PF') is not supported, expected grayscale 'Pf'")
    width = int(header.group(2))
    height = int(header.group(3))
    scale = float(header.group(4))
    if scale == 0:
        raise ValueError(f"{path}: PFM scale must be non-zero")
    endian = "<" if scale < 0 else ">"
    payload = data[header.end():]
    count = width * height
    if len(payload) < 4 * count:
        raise ValueError(f"{path}: truncated PFM payload")
    values = np.frombuffer(payload[: 4 * count], dtype=endian + "f4")
    grid = values.reshape(height, width)[::-1]  # bottom-up storage
    return DepthMap(grid.astype(np.float64))


def store_depth_pfm(depth: DepthMap, path) -> None:
    """Store depth as little-endian grayscale PFM (scale line -1.0).

    Round-trips bit-exactly for float32-representable values, which is
    everything `load_depth_pfm` can produce. NaN or negative values are
    rejected before anything is written.
    """
    v = depth.values
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("PFM store requires finite non-negative values")
    payload = v[::-1].astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(f"Pf\n{depth.width} {depth.height}\n-1.0\n".encode("ascii"))
        f.write(payload)


# --- 8-bit PNG images and masks ---

def load_rgb_png(path) -> RgbImage:
    """Load an 8-bit RGB PNG; max_i is 255."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode!r}")
        values = np.asarray(im, dtype=np.float64)
    return RgbImage(values, max_i=255.0)


def store_rgb_png(image: RgbImage, path) -> None:
    """Store an image as 8-bit RGB PNG, rescaling [0, max_i] to [0, 255]."""
    scaled = np.rint(image.values * (255.0 / image.max_i))
    Image.fromarray(np.clip(scaled, 0, 255).astype(np.uint8), mode="RGB").save(path, format="PNG")


def load_mask_png(path) -> Mask:
    """Load a 0/255 grayscale PNG mask; any non-zero pixel counts as masked."""
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            raise ValueError(f"{path}: expected 8-bit grayscale mask PNG, got mode {im.mode!r}")
        values = np.asarray(im)
    return Mask(values != 0)


def store_mask_png(mask: Mask, path) -> None:
    Image.fromarray(np.where(mask.values, 255, 0).astype(np.uint8), mode="L").save(
        path, format="PNG")
