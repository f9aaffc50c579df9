"""Jaccard measure, pixel-spacing-scaled Hausdorff distance and dataset aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import TARGETS
from .errors import EmptyRegionError, ValidationError
from .geometry import Contour, extract_contour
from .postproc import postprocess

# Reference values reported for the proposed model on its private clinical test set
# (mean +/- sd). Emitted as documentation rows only; not reproducible here.
REFERENCE_ROWS = {
    "lumen": {"jm_mean": 0.9412, "jm_sd": 0.0307, "hd_mean": 0.0639, "hd_sd": 0.0436},
    "ma": {"jm_mean": 0.9509, "jm_sd": 0.0251, "hd_mean": 0.0867, "hd_sd": 0.0622},
}

_CHUNK = 1024


def jaccard(a: np.ndarray, b: np.ndarray) -> float:
    """|A & B| / |A | B|; two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _points(c) -> np.ndarray:
    pts = c.points if isinstance(c, Contour) else np.asarray(c)
    pts = np.asarray(pts, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyRegionError("empty contour")
    return pts


def _directed_sq(a: np.ndarray, b: np.ndarray) -> int:
    """max over a of min over b of squared distance, in exact integer arithmetic."""
    worst = 0
    for s in range(0, len(a), _CHUNK):
        d = a[s:s + _CHUNK, None, :] - b[None, :, :]
        sq = (d * d).sum(axis=-1)
        worst = max(worst, int(sq.min(axis=1).max()))
    return worst


def hausdorff(cr, cr_ref, ps: float = 1.0) -> float:
    """Symmetric Hausdorff distance between two pixel point sets, times ``ps``."""
    a, b = _points(cr), _points(cr_ref)
    sq = max(_directed_sq(a, b), _directed_sq(b, a))
    return math.sqrt(sq) * ps


@dataclass(frozen=True)
class SliceMetrics:
    slice_id: str
    target: str
    jm: float
    hd_mm: float | None  # None when the post-processed prediction is empty


@dataclass(frozen=True)
class TargetSummary:
    target: str
    n: int
    jm_mean: float
    jm_sd: float
    hd_mean: float
    hd_sd: float
    hd_excluded: int


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else math.nan
    return float(arr.mean()), sd


def slice_metrics(pred_mask: np.ndarray, truth: np.ndarray, ps: float,
                  slice_id: str, target: str) -> SliceMetrics:
    jm = jaccard(pred_mask, truth)
    if not pred_mask.any() or not np.asarray(truth).any():
        return SliceMetrics(slice_id, target, jm, None)
    hd = hausdorff(extract_contour(pred_mask), extract_contour(truth), ps)
    return SliceMetrics(slice_id, target, jm, hd)


def summarize(metrics: Sequence[SliceMetrics], targets: Sequence[str] = TARGETS
              ) -> list[TargetSummary]:
    out = []
    for t in targets:
        rows = [m for m in metrics if m.target == t]
        jm_mean, jm_sd = _mean_sd([m.jm for m in rows])
        hds = [m.hd_mm for m in rows if m.hd_mm is not None]
        hd_mean, hd_sd = _mean_sd(hds)
        out.append(TargetSummary(t, len(rows), jm_mean, jm_sd, hd_mean, hd_sd,
                                 len(rows) - len(hds)))
    return out


def evaluate_dataset(predictions: np.ndarray, truths: np.ndarray, ps: float,
                     slice_ids: Sequence[str] | None = None,
                     targets: Sequence[str] = TARGETS,
                     threshold: float | None = None
                     ) -> tuple[list[SliceMetrics], list[TargetSummary]]:
    """Post-process each prediction channel and score it against the truth mask.

    ``predictions`` is N x T x H x W probabilities (binary maps pass through
    post-processing unchanged); ``truths`` is the matching boolean stack.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths, dtype=bool)
    if predictions.shape != truths.shape:
        raise ValidationError(f"prediction shape {predictions.shape} != truth shape {truths.shape}")
    if predictions.ndim != 4 or predictions.shape[1] != len(targets):
        raise ValidationError("expected N x T x H x W arrays with one channel per target")
    if slice_ids is None:
        slice_ids = [str(i) for i in range(len(predictions))]
    metrics = []
    for i, sid in enumerate(slice_ids):
        for t, name in enumerate(targets):
            mask = postprocess(predictions[i, t], threshold)
            metrics.append(slice_metrics(mask, truths[i, t], ps, sid, name))
    return metrics, summarize(metrics, targets)
