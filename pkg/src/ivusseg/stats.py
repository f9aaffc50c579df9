"""Agreement between predicted and reference clinical parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import UndefinedCorrelationError, ValidationError
from .geometry import PARAMETERS, ClinicalReport

LOA_Z = 1.96


def _vec(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _pair(pred, truth, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    p, t = _vec(pred, "pred"), _vec(truth, "truth")
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.size} vs {t.size}")
    if p.size < min_n:
        raise ValidationError(f"need at least {min_n} samples, got {p.size}")
    return p, t


def pearson_r(x, y) -> tuple[float, float]:
    """Product-moment r and its two-tailed p-value from the t distribution with n-2 dof."""
    x, y = _pair(x, y, 3)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined: zero variance")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    dof = x.size - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * dof / (1 - r * r)
    # two-tailed P(|T| > t) = I_{dof / (dof + t^2)}(dof / 2, 1 / 2)
    p = float(special.betainc(dof / 2, 0.5, dof / (dof + t2)))
    return r, min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class ErrorStats:
    mae: float
    rmse: float
    re_min: float
    re_max: float
    re_excluded: int


def error_stats(pred, truth) -> ErrorStats:
    """MAE, RMSE and the range of relative errors ``(pred - truth) / truth``.

    Samples with zero truth are left out of the relative-error range and counted.
    """
    p, t = _pair(pred, truth, 1)
    d = p - t
    mae = float(np.mean(np.abs(d)))
    rmse = float(math.sqrt(np.mean(d * d)))
    nz = t != 0
    if nz.any():
        re = d[nz] / t[nz]
        re_min, re_max = float(re.min()), float(re.max())
    else:
        re_min = re_max = math.nan
    return ErrorStats(mae, rmse, re_min, re_max, int((~nz).sum()))


@dataclass(frozen=True)
class BlandAltman:
    mean: float
    sd: float
    loa_low: float
    loa_high: float
    averages: np.ndarray
    differences: np.ndarray


def bland_altman(pred, truth) -> BlandAltman:
    p, t = _pair(pred, truth, 2)
    d = p - t
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltman(mean, sd, mean - LOA_Z * sd, mean + LOA_Z * sd, (p + t) / 2, d)


@dataclass(frozen=True)
class AgreementStats:
    parameter: str
    n: int
    r: float | None  # None when undefined (zero variance)
    p: float | None
    mae: float
    rmse: float
    re_min: float
    re_max: float
    ba_mean: float
    loa_low: float
    loa_high: float


AGREEMENT_COLUMNS = ("parameter", "n", "r", "p", "mae", "rmse", "re_min", "re_max",
                     "ba_mean", "loa_low", "loa_high")


def agreement_for(name: str, pred, truth) -> tuple[AgreementStats, BlandAltman]:
    try:
        r, p = pearson_r(pred, truth)
    except UndefinedCorrelationError:
        r = p = None
    err = error_stats(pred, truth)
    ba = bland_altman(pred, truth)
    return AgreementStats(name, len(ba.differences), r, p, err.mae, err.rmse,
                          err.re_min, err.re_max, ba.mean, ba.loa_low, ba.loa_high), ba


@dataclass
class AgreementReport:
    rows: list[AgreementStats]
    mean_row: dict
    scatter: dict[str, tuple[np.ndarray, np.ndarray]]  # parameter -> (truth, pred)
    bland_altman: dict[str, BlandAltman]


def agreement_report(pred: Sequence[ClinicalReport], truth: Sequence[ClinicalReport]
                     ) -> AgreementReport:
    """One row per clinical parameter plus an unweighted mean row over r, MAE and RMSE.

    The mean row averages quantities in different units; it mirrors the usual
    table layout and is flagged as such when written out.
    """
    if len(pred) != len(truth):
        raise ValidationError(f"report lists differ in length: {len(pred)} vs {len(truth)}")
    rows, scatter, bas = [], {}, {}
    for name in PARAMETERS:
        pv = np.array([getattr(r, name) for r in pred], dtype=np.float64)
        tv = np.array([getattr(r, name) for r in truth], dtype=np.float64)
        row, ba = agreement_for(name, pv, tv)
        rows.append(row)
        scatter[name] = (tv, pv)
        bas[name] = ba
    rs = [r.r for r in rows if r.r is not None]
    mean_row = {
        "parameter": "mean",
        "r": float(np.mean(rs)) if rs else None,
        "mae": float(np.mean([r.mae for r in rows])),
        "rmse": float(np.mean([r.rmse for r in rows])),
    }
    return AgreementReport(rows, mean_row, scatter, bas)
