"""Dense depth evaluation pipeline and dataset-level reporting.

Per frame: align dimensions by padding, estimate and apply a global scale
factor, crop to the valid ground-truth region, then compute metrics. Dataset
reports average per-frame metrics with equal weight per frame.

Prediction density is measured inside the valid crop; the reports record that
convention in their header.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .io import DepthMap
from .metrics import FrameMetrics, delta_accuracy, log10_error, rmse

SCALE_MODES = ("median-ratio", "least-squares", "none")
INVALID = 0.0
DENSITY_CONVENTION = "prediction density measured within the valid ground-truth crop"

_METRIC_KEYS = ("rmse", "delta1", "delta2", "delta3", "log10", "density", "n_valid")


@dataclass(frozen=True)
class AlignmentConfig:
    scale_mode: str = "median-ratio"
    pad_value: float = INVALID

    def __post_init__(self):
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}, got {self.scale_mode!r}")
        if self.pad_value != INVALID:
            raise ValueError("pad_value must be the invalid sentinel 0")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    metrics: FrameMetrics = None
    scale: float = None
    reason: str = None

    @property
    def skipped(self) -> bool:
        return self.metrics is None


@dataclass(frozen=True)
class DatasetReport:
    records: list
    means: FrameMetrics
    scale_mode: str = "median-ratio"
    density_convention: str = DENSITY_CONVENTION

    @property
    def n_evaluated(self) -> int:
        return sum(1 for r in self.records if not r.skipped)

    @property
    def n_skipped(self) -> int:
        return sum(1 for r in self.records if r.skipped)


def _pad_to(values: np.ndarray, height: int, width: int) -> np.ndarray:
    dh, dw = height - values.shape[0], width - values.shape[1]
    if dh == 0 and dw == 0:
        return values
    return np.pad(values, ((0, dh), (0, dw)), constant_values=INVALID)


def align_dims(gt: DepthMap, pred: DepthMap):
    """Pad both maps at bottom/right with the invalid sentinel to shared dims."""
    h = max(gt.height, pred.height)
    w = max(gt.width, pred.width)
    return DepthMap(_pad_to(gt.values, h, w)), DepthMap(_pad_to(pred.values, h, w))


def scale_factor(gt: DepthMap, pred: DepthMap, mode: str = "median-ratio") -> float:
    """Global factor s such that s * pred best matches gt.

    median-ratio takes the median of per-pixel gt/pred ratios; least-squares
    minimizes sum((gt - s*pred)^2). Both use jointly-valid pixels only.
    """
    if mode not in SCALE_MODES:
        raise ValueError(f"unknown scale mode {mode!r}")
    if mode == "none":
        return 1.0
    if gt.shape != pred.shape:
        raise ValueError(f"dimension mismatch: gt {gt.shape} vs pred {pred.shape}")
    joint = (gt.values > 0) & (pred.values > 0)
    if not joint.any():
        raise ValueError("no jointly-valid pixels for scale estimation")
    g, p = gt.values[joint], pred.values[joint]
    if mode == "median-ratio":
        return float(np.median(g / p))
    return float(np.dot(g, p) / np.dot(p, p))


def valid_crop(gt: DepthMap, pred: DepthMap):
    """Crop both maps to the tight bounding box of valid ground-truth pixels."""
    if gt.shape != pred.shape:
        raise ValueError(f"dimension mismatch: gt {gt.shape} vs pred {pred.shape}")
    rows = np.flatnonzero(gt.values.any(axis=1))
    cols = np.flatnonzero(gt.values.any(axis=0))
    if rows.size == 0:
        raise ValueError("ground truth is entirely invalid")
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    return DepthMap(gt.values[r0:r1, c0:c1]), DepthMap(pred.values[r0:r1, c0:c1])


def _frame_pipeline(gt: DepthMap, pred: DepthMap, cfg: AlignmentConfig):
    gt, pred = align_dims(gt, pred)
    s = scale_factor(gt, pred, cfg.scale_mode)
    pred = DepthMap(pred.values * s)
    gt, pred = valid_crop(gt, pred)
    joint = (gt.values > 0) & (pred.values > 0)
    pred_density = float(np.count_nonzero(pred.values)) / pred.values.size
    m = FrameMetrics(
        rmse=rmse(gt, pred),
        delta1=delta_accuracy(gt, pred, 1),
        delta2=delta_accuracy(gt, pred, 2),
        delta3=delta_accuracy(gt, pred, 3),
        log10_err=log10_error(gt, pred),
        density=pred_density,
        n_valid=int(joint.sum()),
    )
    return m, s


def evaluate_frame(gt: DepthMap, pred: DepthMap, cfg: AlignmentConfig = None) -> FrameMetrics:
    """Run the full alignment pipeline on one frame and compute its metrics."""
    metrics, _ = _frame_pipeline(gt, pred, cfg or AlignmentConfig())
    return metrics


def _mean_metrics(per_frame) -> FrameMetrics:
    cols = {k: [] for k in _METRIC_KEYS}
    for m in per_frame:
        for k, v in m.as_dict().items():
            cols[k].append(v)
    return FrameMetrics(
        rmse=float(np.mean(cols["rmse"])),
        delta1=float(np.mean(cols["delta1"])),
        delta2=float(np.mean(cols["delta2"])),
        delta3=float(np.mean(cols["delta3"])),
        log10_err=float(np.mean(cols["log10"])),
        density=float(np.mean(cols["density"])),
        n_valid=float(np.mean(cols["n_valid"])),
    )


def evaluate_dataset(frames, cfg: AlignmentConfig = None, ids=None,
                     threads: int = 1) -> DatasetReport:
    """Evaluate (gt, pred) pairs and aggregate unweighted per-frame means.

    Frames that fail (e.g. all-invalid ground truth) are recorded as skipped
    with the failure reason and excluded from the means. Frame evaluation may
    run on a thread pool; records are always assembled in input order.
    """
    cfg = cfg or AlignmentConfig()
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    if ids is None:
        ids = [f"{i:04d}" for i in range(len(frames))]
    if len(ids) != len(frames):
        raise ValueError("ids and frames must have equal length")

    def run(pair):
        gt, pred = pair
        try:
            return _frame_pipeline(gt, pred, cfg)
        except ValueError as exc:
            return None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, frames))
    else:
        outcomes = [run(pair) for pair in frames]

    records = []
    for frame_id, (metrics, extra) in zip(ids, outcomes):
        if metrics is None:
            records.append(FrameRecord(frame_id=str(frame_id), reason=extra))
        else:
            records.append(FrameRecord(frame_id=str(frame_id), metrics=metrics, scale=extra))

    usable = [r.metrics for r in records if not r.skipped]
    if not usable:
        raise ValueError("all frames were skipped: " +
                         "; ".join(f"{r.frame_id}: {r.reason}" for r in records))
    return DatasetReport(records=records, means=_mean_metrics(usable),
                         scale_mode=cfg.scale_mode)


# --- report files ---

def write_report_csv(report: DatasetReport, path) -> None:
    """CSV with one row per frame; skipped frames leave metric columns empty."""
    with open(path, "w", newline="") as f:
        f.write(f"# {report.density_convention}; scale_mode={report.scale_mode}\n")
        writer = csv.writer(f)
        writer.writerow(["frame", "rmse", "delta1", "delta2", "delta3", "log10",
                         "density", "n_valid", "skipped", "reason"])
        for r in report.records:
            if r.skipped:
                writer.writerow([r.frame_id] + [""] * 7 + ["true", r.reason])
            else:
                d = r.metrics.as_dict()
                writer.writerow([r.frame_id] + [repr(d[k]) for k in _METRIC_KEYS]
                                + ["false", ""])


def _json_safe(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def write_report_json(report: DatasetReport, path) -> None:
    """JSON summary: frame count, metric means, skip count, per-frame details."""
    doc = {
        "frames": report.n_evaluated,
        "means": {k: _json_safe(v) for k, v in report.means.as_dict().items()},
        "skipped": report.n_skipped,
        "scale_mode": report.scale_mode,
        "density_convention": report.density_convention,
        "per_frame": [
            {
                "frame": r.frame_id,
                "skipped": r.skipped,
                **({"reason": r.reason} if r.skipped
                   else {"scale": r.scale, **r.metrics.as_dict()}),
            }
            for r in report.records
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
