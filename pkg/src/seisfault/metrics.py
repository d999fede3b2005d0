"""F1 threshold-sweep evaluation: per-image optimal (OIS) and dataset
optimal (ODS) scores.

OIS picks the best threshold per image and averages those best F1 values;
ODS picks one global threshold maximizing the mean F1 across images. Both
tie-break toward the smallest threshold. Matching is pixel-exact and an
exactly-empty prediction against an empty ground truth scores F1 = 1.

The curves are computed from cumulative histograms of prediction values
(one pass per image), which is algebraically identical to binarizing at
every threshold.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def default_grid():
    """Thresholds 0.01 .. 0.99."""
    return np.round(np.arange(1, 100) / 100.0, 2)


def f1_at_threshold(pred, gt, t):
    """F1 of (pred >= t) against binary gt; empty-vs-empty scores 1."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {t}")
    binary = pred >= t
    positive = gt > 0
    tp = int(np.count_nonzero(binary & positive))
    fp = int(np.count_nonzero(binary & ~positive))
    fn = int(np.count_nonzero(~binary & positive))
    if tp == 0 and fp == 0 and fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass
class PredictionSet:
    """Paired (probability map, binary ground truth) images."""

    pairs: list = field(default_factory=list)

    def add(self, pred, gt):
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
        if pred.min() < 0.0 or pred.max() > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.all((gt == 0) | (gt == 1)):
            raise ValueError("ground truth must be binary")
        self.pairs.append((pred, gt.astype(bool)))

    def __len__(self):
        return len(self.pairs)


def f1_curve(pred, gt, grid):
    """F1 at every grid threshold via cumulative counts (single pass)."""
    grid = np.asarray(grid, dtype=np.float64)
    pos = gt.astype(bool)
    n_pos = int(pos.sum())
    # predictions >= t, split by ground-truth class
    edges = np.concatenate((grid, [np.inf]))
    hist_pos, _ = np.histogram(pred[pos], bins=np.concatenate(([-np.inf], edges)))
    hist_all, _ = np.histogram(pred, bins=np.concatenate(([-np.inf], edges)))
    tp = np.cumsum(hist_pos[::-1])[::-1][1:]
    npred = np.cumsum(hist_all[::-1])[::-1][1:]
    fp = npred - tp
    fn = n_pos - tp
    denom = 2.0 * tp + fp + fn
    out = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 1.0)
    return out


def _mean(values):
    # fsum keeps image means exact, so results do not depend on reduction order
    return math.fsum(values) / len(values)


def ois(pred_set: PredictionSet, grid=None):
    """(mean of per-image best F1, per-image best thresholds)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if len(pred_set) == 0 or len(grid) == 0:
        raise ValueError("OIS needs a non-empty prediction set and grid")
    best_scores = []
    best_thresholds = []
    for pred, gt in pred_set.pairs:
        curve = f1_curve(pred, gt, grid)
        k = int(np.argmax(curve))  # argmax takes the first (smallest t) on ties
        best_scores.append(float(curve[k]))
        best_thresholds.append(float(grid[k]))
    return _mean(best_scores), best_thresholds


def mean_f1_curve(pred_set: PredictionSet, grid):
    curves = [f1_curve(p, g, grid) for p, g in pred_set.pairs]
    return np.array([_mean([c[k] for c in curves]) for k in range(len(grid))])


def ods(pred_set: PredictionSet, grid=None):
    """(best over thresholds of mean F1, the global threshold)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if len(pred_set) == 0 or len(grid) == 0:
        raise ValueError("ODS needs a non-empty prediction set and grid")
    curve = mean_f1_curve(pred_set, grid)
    k = int(np.argmax(curve))
    return float(curve[k]), float(grid[k])


@dataclass
class EvalReport:
    grid: list
    per_image_best_t: list
    per_image_best_f1: list
    mean_curve: list
    ois: float
    ods: float
    global_t: float

    @classmethod
    def from_prediction_set(cls, pred_set: PredictionSet, grid=None):
        grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
        ois_score, best_ts = ois(pred_set, grid)
        ods_score, global_t = ods(pred_set, grid)
        mean_curve = mean_f1_curve(pred_set, grid)
        best_f1 = [float(f1_curve(p, g, grid).max()) for p, g in pred_set.pairs]
        return cls(
            grid=[float(t) for t in grid],
            per_image_best_t=[float(t) for t in best_ts],
            per_image_best_f1=best_f1,
            mean_curve=[float(v) for v in mean_curve],
            ois=ois_score,
            ods=ods_score,
            global_t=global_t,
        )

    def summary(self):
        return {"ois": self.ois, "ods": self.ods, "global_t": self.global_t}

    def write(self, out_dir):
        """summary.json + per_image.csv + curve.csv under out_dir."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2) + "\n")
        with (out / "per_image.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "best_t", "best_f1"])
            for i, (t, f1) in enumerate(zip(self.per_image_best_t, self.per_image_best_f1)):
                writer.writerow([i, f"{t:.2f}", f"{f1:.6f}"])
        with (out / "curve.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean_f1"])
            for t, v in zip(self.grid, self.mean_curve):
                writer.writerow([f"{t:.2f}", f"{v:.6f}"])
        return out
