"""Probability map -> single-region binary mask: Otsu threshold, then largest component."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError

N_BINS = 256
FALLBACK_THRESHOLD = 0.5
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def quantize(values: np.ndarray, n_bins: int = N_BINS) -> np.ndarray:
    """Bin index of each value for ``n_bins`` uniform bins over [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.minimum((v * n_bins).astype(np.int64), n_bins - 1)


def otsu_threshold(values: np.ndarray, n_bins: int = N_BINS) -> float:
    """Bin boundary ``k / n_bins`` maximising between-class variance.

    The class split at boundary ``k`` puts bins ``< k`` in the background. The
    variance criterion ``(N*S0 - n0*S)**2 / (n0*n1)`` is compared in exact
    integer arithmetic, so ties resolve to the lowest ``k`` reproducibly.
    """
    values = np.asarray(values)
    if values.size == 0:
        raise DegenerateInputError("empty probability map")
    hist = np.bincount(quantize(values, n_bins).ravel(), minlength=n_bins)
    if np.count_nonzero(hist) < 2:
        raise DegenerateInputError("probability map occupies a single histogram bin")
    counts = [int(c) for c in hist]
    total_n = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))
    best_k, best_num, best_den = None, -1, 1
    n0 = s0 = 0
    for k in range(1, n_bins):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total_n * s0 - n0 * total_s) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_k, best_num, best_den = k, num, den
    return best_k / n_bins


def binarize(values: np.ndarray, threshold: float) -> np.ndarray:
    return np.asarray(values) > threshold


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 8-connected foreground component.

    Equal sizes resolve to the component whose first pixel in raster order comes first.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n <= 1:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    candidates = np.flatnonzero(sizes == sizes.max())
    if candidates.size > 1:
        flat = labels.ravel()
        first = {lab: np.argmax(flat == lab) for lab in candidates}
        winner = min(candidates, key=lambda lab: first[lab])
    else:
        winner = candidates[0]
    return labels == winner


def postprocess(prob: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Threshold (Otsu unless given) and keep the largest connected region.

    A constant map falls back to threshold 0.5.
    """
    if threshold is None:
        try:
            threshold = otsu_threshold(prob)
        except DegenerateInputError:
            threshold = FALLBACK_THRESHOLD
    return largest_component(binarize(prob, threshold))


def count_components(mask: np.ndarray) -> int:
    return ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)[1]
