import json

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from ivusseg.data import (DatasetManifest, ImageSlice, ManifestEntry, PhantomSpec, load_manifest,
                          load_pair, manifest_from_dict, phantom_generate, save_manifest,
                          write_png)
from ivusseg.errors import ManifestError, PhantomSpecError, ValidationError

from conftest import disk


def _write_entry(root, sid, size=64, mask_size=None):
    img = (np.arange(size * size).reshape(size, size) % 256).astype(np.uint8)
    Image.fromarray(img).save(root / f"{sid}_img.png")
    ms = mask_size or size
    lumen = disk((ms, ms), (ms // 2, ms // 2), ms // 6)
    ma = disk((ms, ms), (ms // 2, ms // 2), ms // 3)
    write_png(root / f"{sid}_lumen.png", lumen)
    write_png(root / f"{sid}_ma.png", ma)
    return {"image_path": f"{sid}_img.png", "lumen_mask_path": f"{sid}_lumen.png",
            "ma_mask_path": f"{sid}_ma.png", "patient_id": "P1", "slice_id": sid}


def _manifest(tmp_path, entries, ps=0.02):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"pixel_spacing": ps, "entries": entries}))
    return path


def test_load_manifest_two_entries(tmp_path):
    path = _manifest(tmp_path, [_write_entry(tmp_path, "a"), _write_entry(tmp_path, "b")])
    m = load_manifest(path)
    assert len(m.entries) == 2
    assert m.pixel_spacing == 0.02


@pytest.mark.parametrize("ps", [0, -0.1])
def test_non_positive_pixel_spacing(tmp_path, ps):
    path = _manifest(tmp_path, [_write_entry(tmp_path, "a")], ps=ps)
    with pytest.raises(ValidationError, match="pixel spacing must be positive"):
        load_manifest(path)


def test_missing_pixel_spacing(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"entries": [_write_entry(tmp_path, "a")]}))
    with pytest.raises(ValidationError, match="pixel_spacing"):
        load_manifest(path)


def test_missing_mask_file_is_named(tmp_path):
    e = _write_entry(tmp_path, "a")
    e["ma_mask_path"] = "nope.png"
    with pytest.raises(ManifestError, match="nope.png"):
        load_manifest(_manifest(tmp_path, [e]))


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="missing.json"):
        load_manifest(tmp_path / "missing.json")


def test_duplicate_keys_rejected(tmp_path):
    e = _write_entry(tmp_path, "a")
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(_manifest(tmp_path, [e, dict(e)]))


def test_manifest_roundtrip(tmp_path):
    path = _manifest(tmp_path, [_write_entry(tmp_path, "a"), _write_entry(tmp_path, "b")], ps=0.037)
    first = load_manifest(path)
    save_manifest(first, tmp_path / "again.json")
    second = load_manifest(tmp_path / "again.json")
    assert first == second
    assert first.to_dict() == second.to_dict()


def test_load_pair_dims_and_normalization(tmp_path):
    e = ManifestEntry(**_write_entry(tmp_path, "a"))
    sl, lumen, ma = load_pair(e, tmp_path)
    assert sl.pixels.shape == lumen.shape == ma.shape == (64, 64)
    raw = np.asarray(Image.open(tmp_path / "a_img.png"))
    assert raw.max() == 255
    np.testing.assert_array_equal(sl.pixels, raw / 255.0)
    assert lumen.dtype == bool and lumen.sum() > 0
    assert not (lumen & ~ma).any()


def test_load_pair_dimension_mismatch(tmp_path):
    e = _write_entry(tmp_path, "a", size=128)
    write_png(tmp_path / "a_lumen.png", disk((64, 64), (32, 32), 10))
    with pytest.raises(ValidationError, match="lumen mask is 64x64"):
        load_pair(ManifestEntry(**e), tmp_path)


def test_mask_with_three_levels(tmp_path):
    e = _write_entry(tmp_path, "a")
    arr = np.zeros((64, 64), np.uint8)
    arr[:10] = 128
    arr[10:20] = 255
    Image.fromarray(arr).save(tmp_path / "a_ma.png")
    with pytest.raises(ValidationError, match="3 intensity levels"):
        load_pair(ManifestEntry(**e), tmp_path)


def test_mask_foreground_is_higher_level(tmp_path):
    e = _write_entry(tmp_path, "a")
    arr = np.full((64, 64), 40, np.uint8)
    arr[20:30, 20:30] = 200
    Image.fromarray(arr).save(tmp_path / "a_lumen.png")
    _, lumen, _ = load_pair(ManifestEntry(**e), tmp_path)
    assert lumen.sum() == 100 and lumen[25, 25]


def test_rgb_image_rejected(tmp_path):
    e = _write_entry(tmp_path, "a")
    Image.new("RGB", (64, 64)).save(tmp_path / "a_img.png")
    with pytest.raises(ValidationError, match="single-channel"):
        load_pair(ManifestEntry(**e), tmp_path)


def test_depth_divisibility_enforced(tmp_path):
    e = ManifestEntry(**_write_entry(tmp_path, "a", size=48))
    load_pair(e, tmp_path, depth=4)
    with pytest.raises(ValidationError, match="divisible"):
        load_pair(e, tmp_path, depth=5)


def test_image_slice_invariants():
    with pytest.raises(ValidationError):
        ImageSlice(np.full((16, 16), 1.5), "p", "s")
    with pytest.raises(ValidationError):
        ImageSlice(np.zeros((8, 8)), "p", "s")


def test_phantom_determinism(tmp_path):
    spec = PhantomSpec(count=4, image_size=128, seed=7)
    phantom_generate(spec, tmp_path / "a")
    phantom_generate(spec, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 13
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_phantom_seed_changes_output(tmp_path):
    phantom_generate(PhantomSpec(count=1, seed=1), tmp_path / "a")
    phantom_generate(PhantomSpec(count=1, seed=2), tmp_path / "b")
    assert (tmp_path / "a/images/s0000.png").read_bytes() != (tmp_path / "b/images/s0000.png").read_bytes()


def test_phantom_containment_and_connectivity(tmp_path):
    m = phantom_generate(PhantomSpec(count=12, image_size=128, seed=3), tmp_path)
    eight = np.ones((3, 3), bool)
    for e in m.entries:
        sl, lumen, ma = load_pair(e, m.root)
        assert lumen.any() and not (lumen & ~ma).any()
        assert ndimage.label(lumen, eight)[1] == 1
        assert ndimage.label(ma, eight)[1] == 1
        # contrast ordering: lumen darker than plaque
        assert sl.pixels[lumen].mean() < sl.pixels[ma & ~lumen].mean()


def test_phantom_layout(tmp_path):
    phantom_generate(PhantomSpec(count=2), tmp_path)
    for sub in ("images", "masks_lumen", "masks_ma"):
        assert len(list((tmp_path / sub).glob("*.png"))) == 2
    assert load_manifest(tmp_path / "manifest.json").pixel_spacing == PhantomSpec.pixel_spacing


@pytest.mark.parametrize("kwargs", [
    {"lumen_radius_range": (30.0, 50.0), "ma_radius_range": (20.0, 40.0)},
    {"lumen_radius_range": (45.0, 46.0), "ma_radius_range": (30.0, 46.0)},
    {"ma_radius_range": (30.0, 70.0)},
    {"noise_level": 1.0},
    {"ellipse_ratio_range": (0.5, 1.2)},
])
def test_phantom_spec_errors(tmp_path, kwargs):
    with pytest.raises(PhantomSpecError):
        phantom_generate(PhantomSpec(count=1, **kwargs), tmp_path)


@pytest.mark.parametrize("r", [20, 27, 35, 50])
def test_digital_disk_area_within_three_percent(r):
    ps = 0.02
    m = disk((128, 128), (64, 64), r)
    area = m.sum() * ps ** 2
    exact = np.pi * r ** 2 * ps ** 2
    assert abs(area - exact) / exact < 0.03


def test_manifest_from_dict_missing_fields():
    with pytest.raises(ValidationError, match="slice_id"):
        manifest_from_dict({"pixel_spacing": 1, "entries": [{"image_path": "x"}]})


def test_subset_keeps_order(tmp_path):
    m = DatasetManifest([ManifestEntry("i", "l", "m", "p", str(i)) for i in range(3)], 0.1)
    sub = m.subset([("p", "2"), ("p", "0")])
    assert [e.slice_id for e in sub.entries] == ["2", "0"]
