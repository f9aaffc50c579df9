"""Measurements on binary masks: contours, centroids, ray-cast diameters and thickness,
areas, and the twelve clinical parameters.

Ray casting lightly smooths the mask with a Gaussian (``BORDER_SIGMA`` px), walks
each ray from the centre of mass in ``RAY_STEP`` pixel steps with bilinear sampling,
keeps the last crossing of the 0.5 level, and refines it by linear interpolation
between the bracketing samples. Smoothing suppresses the pixel staircase so that a
digital circle measures nearly the same radius in every direction. Regions too
small to survive smoothing are measured on the raw mask instead.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import ContainmentError, EmptyRegionError, MeasurementError

DEFAULT_ANGLES = 720
RAY_STEP = 0.25
BORDER_SIGMA = 1.0


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) integer (row, col), raster order

    def __len__(self) -> int:
        return len(self.points)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(r), int(c)) for r, c in self.points}


@dataclass(frozen=True)
class RadialProfile:
    angles: np.ndarray
    r: np.ndarray
    center: tuple[float, float]


@dataclass(frozen=True)
class ClinicalReport:
    max_eem_diam: float
    min_eem_diam: float
    eem_csa: float
    max_lumen_diam: float
    min_lumen_diam: float
    lumen_csa: float
    lumen_eccentricity: float
    max_pm_thickness: float
    min_pm_thickness: float
    pm_csa: float
    pm_eccentricity: float
    plaque_burden: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def values(self) -> tuple[float, ...]:
        return astuple(self)


PARAMETERS = tuple(f.name for f in fields(ClinicalReport))
UNITS = {
    "max_eem_diam": "mm", "min_eem_diam": "mm", "eem_csa": "mm2",
    "max_lumen_diam": "mm", "min_lumen_diam": "mm", "lumen_csa": "mm2",
    "lumen_eccentricity": "", "max_pm_thickness": "mm", "min_pm_thickness": "mm",
    "pm_csa": "mm2", "pm_eccentricity": "", "plaque_burden": "",
}


def _require_region(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise MeasurementError(f"mask must be 2-D, got shape {mask.shape}")
    if not mask.any():
        raise EmptyRegionError("mask has no foreground pixels")
    return mask


def extract_contour(mask: np.ndarray) -> Contour:
    """Foreground pixels with at least one background 4-neighbour (outside counts as background)."""
    mask = _require_region(mask)
    p = np.pad(mask, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    border = mask & ~interior
    return Contour(np.argwhere(border))


def center_of_mass(mask: np.ndarray) -> tuple[float, float]:
    mask = _require_region(mask)
    rows, cols = np.nonzero(mask)
    return float(rows.mean()), float(cols.mean())


def _cast(field: np.ndarray, center, angles: np.ndarray, reach: float, step: float):
    cy, cx = center
    t = np.arange(0.0, reach + step, step)
    rr = cy + np.sin(angles)[:, None] * t[None, :]
    cc = cx + np.cos(angles)[:, None] * t[None, :]
    vals = ndimage.map_coordinates(field, [rr.ravel(), cc.ravel()],
                                   order=1, mode="constant", cval=0.0).reshape(rr.shape)
    inside = vals >= 0.5
    crossing = inside[:, :-1] & ~inside[:, 1:]
    has = crossing.any(axis=1)
    last = crossing.shape[1] - 1 - np.argmax(crossing[:, ::-1], axis=1)
    k = np.arange(len(angles))
    v0, v1 = vals[k, last], vals[k, last + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (last + (v0 - 0.5) / (v0 - v1)) * step
    return np.where(has, r, 0.0), has


def radial_profile(mask: np.ndarray, center: tuple[float, float] | None = None,
                   n_angles: int = DEFAULT_ANGLES, step: float = RAY_STEP,
                   sigma: float = BORDER_SIGMA) -> RadialProfile:
    """Border distance (px) along ``n_angles`` uniformly spaced rays from ``center``."""
    mask = _require_region(mask)
    if center is None:
        center = center_of_mass(mask)
    cy, cx = center
    rows, cols = np.nonzero(mask)
    reach = math.sqrt(float(((rows - cy) ** 2 + (cols - cx) ** 2).max())) + 3.0 * sigma + 2.0
    angles = 2 * np.pi * np.arange(n_angles) / n_angles
    raw = mask.astype(np.float64)
    field = ndimage.gaussian_filter(raw, sigma, mode="constant") if sigma > 0 else raw
    r, has = _cast(field, center, angles, reach, step)
    if not has.all() and sigma > 0:
        r, has = _cast(raw, center, angles, reach, step)
    return RadialProfile(angles, r, (cy, cx))


def _check_centroid_inside(mask: np.ndarray, center: tuple[float, float]) -> None:
    r, c = (int(np.floor(v + 0.5)) for v in center)
    h, w = mask.shape
    if not (0 <= r < h and 0 <= c < w and mask[r, c]):
        raise MeasurementError(
            f"centroid ({center[0]:.2f}, {center[1]:.2f}) lies outside the foreground region")


def diameter_extrema_px(mask: np.ndarray, n_angles: int = DEFAULT_ANGLES) -> tuple[float, float]:
    mask = _require_region(mask)
    if n_angles % 2:
        raise MeasurementError("n_angles must be even")
    if np.count_nonzero(mask) == 1:
        return 1.0, 1.0
    center = center_of_mass(mask)
    _check_centroid_inside(mask, center)
    r = radial_profile(mask, center, n_angles).r
    half = n_angles // 2
    diam = r[:half] + r[half:]
    return float(diam.max()), float(diam.min())


def diameter_extrema(mask: np.ndarray, ps: float, n_angles: int = DEFAULT_ANGLES
                     ) -> tuple[float, float]:
    """(max, min) chord through the centre of mass over ``n_angles / 2`` orientations, in mm."""
    hi, lo = diameter_extrema_px(mask, n_angles)
    return hi * ps, lo * ps


def region_csa(mask: np.ndarray, ps: float) -> float:
    return int(np.count_nonzero(mask)) * (ps * ps)


def _check_containment(lumen: np.ndarray, ma: np.ndarray) -> None:
    outside = np.count_nonzero(lumen & ~ma)
    if outside:
        raise ContainmentError(f"lumen is not contained in MA ({outside} lumen pixels outside)")


def thickness_extrema_px(lumen: np.ndarray, ma: np.ndarray, n_angles: int = DEFAULT_ANGLES
                         ) -> tuple[float, float]:
    lumen = _require_region(lumen)
    ma = _require_region(ma)
    if lumen.shape != ma.shape:
        raise MeasurementError(f"mask shapes differ: {lumen.shape} vs {ma.shape}")
    _check_containment(lumen, ma)
    center = center_of_mass(lumen)
    _check_centroid_inside(lumen, center)
    r_lumen = radial_profile(lumen, center, n_angles).r
    r_ma = radial_profile(ma, center, n_angles).r
    thick = r_ma - r_lumen
    return float(thick.max()), float(thick.min())


def thickness_extrema(lumen: np.ndarray, ma: np.ndarray, ps: float,
                      n_angles: int = DEFAULT_ANGLES) -> tuple[float, float]:
    """(max, min) plaque-plus-media thickness along rays from the lumen centre of mass, in mm."""
    hi, lo = thickness_extrema_px(lumen, ma, n_angles)
    return hi * ps, lo * ps


def _eccentricity(hi: float, lo: float) -> float:
    return (hi - lo) / hi if hi > 0 else 0.0


def measure_all(lumen: np.ndarray, ma: np.ndarray, ps: float,
                n_angles: int = DEFAULT_ANGLES, clamp: bool = False) -> ClinicalReport:
    """All twelve clinical parameters for one slice.

    With ``clamp`` the lumen is intersected with the MA region before measuring
    instead of raising on containment violations.
    """
    lumen = _require_region(lumen)
    ma = _require_region(ma)
    if clamp:
        lumen = lumen & ma
        if not lumen.any():
            raise EmptyRegionError("lumen is empty after clamping to MA")
    _check_containment(lumen, ma)

    max_eem, min_eem = diameter_extrema_px(ma, n_angles)
    max_lum, min_lum = diameter_extrema_px(lumen, n_angles)
    max_t, min_t = thickness_extrema_px(lumen, ma, n_angles)
    n_ma = int(np.count_nonzero(ma))
    n_lumen = int(np.count_nonzero(lumen))
    eem_csa = region_csa(ma, ps)
    lumen_csa = region_csa(lumen, ps)
    return ClinicalReport(
        max_eem_diam=max_eem * ps,
        min_eem_diam=min_eem * ps,
        eem_csa=eem_csa,
        max_lumen_diam=max_lum * ps,
        min_lumen_diam=min_lum * ps,
        lumen_csa=lumen_csa,
        lumen_eccentricity=_eccentricity(max_lum, min_lum),
        max_pm_thickness=max_t * ps,
        min_pm_thickness=min_t * ps,
        pm_csa=eem_csa - lumen_csa,
        pm_eccentricity=_eccentricity(max_t, min_t),
        plaque_burden=(n_ma - n_lumen) / n_ma,
    )
