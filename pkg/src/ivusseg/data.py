"""Dataset manifests, image/mask ingestion and the synthetic vessel phantom.

A manifest is one JSON document::

    {
      "pixel_spacing": 0.02,
      "entries": [
        {"image_path": "images/s0000.png",
         "lumen_mask_path": "masks_lumen/s0000.png",
         "ma_mask_path": "masks_ma/s0000.png",
         "patient_id": "P000", "slice_id": "s0000"}
      ]
    }

Relative paths are resolved against the directory holding the manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ManifestError, PhantomSpecError, ValidationError

ENTRY_FIELDS = ("image_path", "lumen_mask_path", "ma_mask_path", "patient_id", "slice_id")

# Phantom intensity model: dark lumen, mid-gray plaque, bright band just outside the MA border.
LUMEN_LEVEL = 0.15
PLAQUE_LEVEL = 0.45
MA_BAND_LEVEL = 0.8
TISSUE_LEVEL = 0.35
MA_BAND_WIDTH = 4.0
CONTAINMENT_MARGIN = 2.0


@dataclass(frozen=True)
class ImageSlice:
    pixels: np.ndarray
    patient_id: str
    slice_id: str

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2:
            raise ValidationError(f"image must be 2-D, got shape {px.shape}")
        if min(px.shape) < 16:
            raise ValidationError(f"image must be at least 16x16, got {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("image intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    lumen_mask_path: str
    ma_mask_path: str
    patient_id: str
    slice_id: str

    @property
    def key(self) -> tuple[str, str]:
        return (self.patient_id, self.slice_id)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    pixel_spacing: float
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        validate_pixel_spacing(self.pixel_spacing)
        seen = set()
        for e in self.entries:
            if e.key in seen:
                raise ValidationError(f"duplicate (patient_id, slice_id) pair: {e.key}")
            seen.add(e.key)

    def resolve(self, relpath: str) -> Path:
        p = Path(relpath)
        return p if p.is_absolute() else self.root / p

    def to_dict(self) -> dict:
        return {
            "pixel_spacing": self.pixel_spacing,
            "entries": [asdict(e) for e in self.entries],
        }

    def subset(self, keys: Iterable[tuple[str, str]]) -> "DatasetManifest":
        by_key = {e.key: e for e in self.entries}
        return DatasetManifest([by_key[k] for k in keys], self.pixel_spacing, self.root)


def validate_pixel_spacing(ps) -> float:
    if ps is None:
        raise ValidationError("pixel spacing is required")
    try:
        ps = float(ps)
    except (TypeError, ValueError):
        raise ValidationError(f"pixel spacing must be a number, got {ps!r}") from None
    if not math.isfinite(ps) or ps <= 0:
        raise ValidationError("pixel spacing must be positive")
    return ps


def manifest_from_dict(doc: dict, root: Path | str = ".") -> DatasetManifest:
    if not isinstance(doc, dict):
        raise ValidationError("manifest must be a JSON object")
    if "pixel_spacing" not in doc:
        raise ValidationError("manifest is missing pixel_spacing")
    ps = validate_pixel_spacing(doc["pixel_spacing"])
    raw = doc.get("entries")
    if not isinstance(raw, list):
        raise ValidationError("manifest 'entries' must be a list")
    entries = []
    for i, rec in enumerate(raw):
        missing = [f for f in ENTRY_FIELDS if f not in rec]
        if missing:
            raise ValidationError(f"manifest entry {i} is missing fields: {', '.join(missing)}")
        entries.append(ManifestEntry(**{f: str(rec[f]) for f in ENTRY_FIELDS}))
    return DatasetManifest(entries, ps, Path(root))


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest; every referenced file must exist."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from None
    manifest = manifest_from_dict(doc, path.parent)
    if check_files:
        for e in manifest.entries:
            for rel in (e.image_path, e.lumen_mask_path, e.ma_mask_path):
                if not manifest.resolve(rel).is_file():
                    raise ManifestError(f"referenced file not found: {manifest.resolve(rel)}")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


def manifest_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode == "L":
        return arr
    if mode.startswith("I;16"):
        return arr.astype(np.uint16)
    if mode == "1":
        return arr.astype(np.uint8)
    raise ValidationError(f"{path}: expected a single-channel image, got mode {mode}")


def read_image(path: str | Path) -> np.ndarray:
    """Gray image rescaled to [0, 1] by the full range of its integer type."""
    arr = _read_gray(Path(path))
    scale = float(np.iinfo(arr.dtype).max) if arr.dtype != np.bool_ else 1.0
    return arr.astype(np.float64) / scale


def read_mask(path: str | Path) -> np.ndarray:
    """Binarize a two-level mask image; the higher level is foreground."""
    arr = _read_gray(Path(path))
    levels = np.unique(arr)
    if levels.size > 2:
        raise ValidationError(f"{path}: mask has {levels.size} intensity levels, expected 2")
    if levels.size == 2:
        return arr == levels[1]
    return arr > 0


def write_png(path: str | Path, arr: np.ndarray) -> None:
    """Write a [0,1] float image or a boolean mask as 8-bit PNG."""
    if arr.dtype == np.bool_:
        out = arr.astype(np.uint8) * 255
    else:
        out = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out, mode="L").save(path, format="PNG")


def load_pair(entry: ManifestEntry, root: str | Path = ".", depth: int | None = None
              ) -> tuple[ImageSlice, np.ndarray, np.ndarray]:
    """Load (image, lumen mask, MA mask) for one manifest entry.

    If ``depth`` is given the image sides must be divisible by ``2**depth``.
    """
    root = Path(root)

    def res(rel):
        p = Path(rel)
        return p if p.is_absolute() else root / p

    for rel in (entry.image_path, entry.lumen_mask_path, entry.ma_mask_path):
        if not res(rel).is_file():
            raise ManifestError(f"referenced file not found: {res(rel)}")
    pixels = read_image(res(entry.image_path))
    lumen = read_mask(res(entry.lumen_mask_path))
    ma = read_mask(res(entry.ma_mask_path))
    for name, m in (("lumen", lumen), ("ma", ma)):
        if m.shape != pixels.shape:
            raise ValidationError(
                f"{entry.slice_id}: {name} mask is {m.shape[0]}x{m.shape[1]} "
                f"but image is {pixels.shape[0]}x{pixels.shape[1]}")
    if depth is not None:
        k = 2 ** depth
        if pixels.shape[0] % k or pixels.shape[1] % k:
            raise ValidationError(
                f"{entry.slice_id}: image size {pixels.shape} not divisible by 2^{depth}")
    return ImageSlice(pixels, entry.patient_id, entry.slice_id), lumen, ma


def load_arrays(manifest: DatasetManifest, depth: int | None = None):
    """Stack a whole manifest: images (N,H,W) float32, truth (N,2,H,W) bool."""
    images, truths = [], []
    for e in manifest.entries:
        sl, lumen, ma = load_pair(e, manifest.root, depth)
        images.append(sl.pixels.astype(np.float32))
        truths.append(np.stack([lumen, ma]))
    if not images:
        raise ValidationError("manifest has no entries")
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise ValidationError(f"images have differing sizes: {sorted(shapes)}")
    return np.stack(images), np.stack(truths)


# --------------------------------------------------------------------------- phantoms


@dataclass(frozen=True)
class PhantomSpec:
    count: int = 8
    image_size: int = 128
    seed: int = 0
    lumen_radius_range: tuple[float, float] = (12.0, 24.0)
    ma_radius_range: tuple[float, float] = (30.0, 46.0)
    ellipse_ratio_range: tuple[float, float] = (0.75, 1.0)
    noise_level: float = 0.3
    pixel_spacing: float = 0.02
    slices_per_patient: int = 10

    def validate(self) -> None:
        if self.count < 1:
            raise PhantomSpecError("count must be at least 1")
        if self.image_size < 16:
            raise PhantomSpecError("image_size must be at least 16")
        for name in ("lumen_radius_range", "ma_radius_range", "ellipse_ratio_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise PhantomSpecError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.ellipse_ratio_range[1] > 1:
            raise PhantomSpecError("ellipse_ratio_range must lie in (0, 1]")
        if not (0 <= self.noise_level < 1):
            raise PhantomSpecError("noise_level must lie in [0, 1)")
        if self.slices_per_patient < 1:
            raise PhantomSpecError("slices_per_patient must be at least 1")
        validate_pixel_spacing(self.pixel_spacing)
        if self.ma_radius_range[1] + MA_BAND_WIDTH + 2 > self.image_size / 2:
            raise PhantomSpecError("ma_radius_range does not fit inside the image")
        if self.lumen_radius_range[1] > self.ma_radius_range[1]:
            raise PhantomSpecError("lumen_radius_range exceeds ma_radius_range")
        # largest possible MA minor semi-axis must leave room for the smallest lumen
        if self.lumen_radius_range[0] + CONTAINMENT_MARGIN >= \
                self.ma_radius_range[1] * self.ellipse_ratio_range[1]:
            raise PhantomSpecError("radius ranges cannot satisfy strict lumen-in-MA containment")


def _ellipse(shape, center, a, b, angle, scale=1.0):
    rows, cols = np.indices(shape, dtype=np.float64)
    dy, dx = rows - center[0], cols - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (u / (a * scale)) ** 2 + (v / (b * scale)) ** 2


def _phantom_geometry(spec: PhantomSpec, rng: np.random.Generator):
    n = spec.image_size
    lo_l, hi_l = spec.lumen_radius_range
    for _ in range(1000):
        a = rng.uniform(*spec.ma_radius_range)
        b = a * rng.uniform(*spec.ellipse_ratio_range)
        cap = b - CONTAINMENT_MARGIN
        if cap > lo_l:
            break
    else:
        raise PhantomSpecError("could not sample an MA ellipse large enough for the lumen")
    ma_angle = rng.uniform(0, math.pi)
    jitter = max(0.0, n / 2 - a - MA_BAND_WIDTH - 2)
    center = (n / 2 - 0.5 + rng.uniform(-jitter, jitter),
              n / 2 - 0.5 + rng.uniform(-jitter, jitter))
    rl = rng.uniform(lo_l, min(hi_l, cap))
    rl_minor = rl * rng.uniform(*spec.ellipse_ratio_range)
    lumen_angle = rng.uniform(0, math.pi)
    # lumen lies within its circumscribed circle of radius rl, kept inside the MA inscribed circle
    offset = rng.uniform(0, cap - rl)
    phi = rng.uniform(0, 2 * math.pi)
    lumen_center = (center[0] + offset * math.sin(phi), center[1] + offset * math.cos(phi))
    return (center, a, b, ma_angle), (lumen_center, rl, rl_minor, lumen_angle)


def render_phantom(spec: PhantomSpec, rng: np.random.Generator):
    """One phantom slice: (image in [0,1], lumen mask, MA mask)."""
    shape = (spec.image_size, spec.image_size)
    (c_ma, a, b, t_ma), (c_l, rl, rl2, t_l) = _phantom_geometry(spec, rng)
    q_ma = _ellipse(shape, c_ma, a, b, t_ma)
    ma = q_ma <= 1.0
    lumen = (_ellipse(shape, c_l, rl, rl2, t_l) <= 1.0) & ma
    band = ~ma & (_ellipse(shape, c_ma, a + MA_BAND_WIDTH, b + MA_BAND_WIDTH, t_ma) <= 1.0)

    img = np.full(shape, TISSUE_LEVEL)
    img[band] = MA_BAND_LEVEL
    img[ma] = PLAQUE_LEVEL
    img[lumen] = LUMEN_LEVEL
    img = ndimage.gaussian_filter(img, 0.8)
    if spec.noise_level > 0:
        img = img * (1.0 + spec.noise_level * rng.uniform(-1.0, 1.0, size=shape))
    return np.clip(img, 0.0, 1.0), lumen, ma


def phantom_generate(spec: PhantomSpec, out_dir: str | Path) -> DatasetManifest:
    """Write ``spec.count`` phantom triples plus ``manifest.json`` under ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    for sub in ("images", "masks_lumen", "masks_ma"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(spec.count):
        img, lumen, ma = render_phantom(spec, rng)
        sid = f"s{i:04d}"
        paths = {k: f"{k}/{sid}.png" for k in ("images", "masks_lumen", "masks_ma")}
        write_png(out / paths["images"], img)
        write_png(out / paths["masks_lumen"], lumen)
        write_png(out / paths["masks_ma"], ma)
        entries.append(ManifestEntry(paths["images"], paths["masks_lumen"], paths["masks_ma"],
                                     f"P{i // spec.slices_per_patient:03d}", sid))
    manifest = DatasetManifest(entries, spec.pixel_spacing, out)
    save_manifest(manifest, out / "manifest.json")
    return manifest


def entry_keys(entries: Sequence[ManifestEntry]) -> list[tuple[str, str]]:
    return [e.key for e in entries]
