"""Letterboxing, resampling, sway rotation, and manifest round trips."""
import numpy as np
import pytest

from tranalign import (
    GRAY_FILL,
    ImageSample,
    InvalidInputError,
    ManifestEntry,
    ModelInput,
    RangeError,
    ShapeError,
    SssParams,
    aspect_normalize,
    load_image,
    read_manifest,
    read_manifest_entries,
    sample_sss_angle,
    sss_augment,
    write_manifest,
)
from tranalign.imaging import rotation_valid_mask


def _solid(h, w, color, **kwargs):
    pixels = np.zeros((h, w, 3), dtype=np.uint8)
    pixels[:] = color
    defaults = dict(identity_id=0, vessel_type="warship", split="train")
    defaults.update(kwargs)
    return ImageSample(pixels=pixels, **defaults)


def test_letterbox_pads_width_symmetrically():
    # 100x100 into a 256x512 target: the width is padded to 200 (50 gray
    # columns each side), so after nearest resampling the red content covers
    # exactly output columns 128..383.
    out = aspect_normalize(_solid(100, 100, (255, 0, 0)), 256, 512).tensor
    assert out.shape == (3, 256, 512)
    red = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    assert np.all(out[:, :, 128:384] == red[:, None, None])
    gray = np.float32(GRAY_FILL)
    assert np.all(out[:, :, :128] == gray)
    assert np.all(out[:, :, 384:] == gray)


def test_letterbox_preserves_content_aspect():
    # A 40x160 frame (aspect 4.0) letterboxed into 64x128 keeps its content
    # aspect: the white region must come out 128 wide by 32 high.
    out = aspect_normalize(_solid(40, 160, (255, 255, 255)), 64, 128).tensor
    white = np.all(out == 1.0, axis=0)
    rows = np.nonzero(white.any(axis=1))[0]
    cols = np.nonzero(white.any(axis=0))[0]
    box_h = rows[-1] - rows[0] + 1
    box_w = cols[-1] - cols[0] + 1
    assert box_w == 128
    assert abs(box_w / box_h - 160 / 40) <= 4.0 * (1 / box_h)


def test_letterbox_matching_aspect_adds_no_bars():
    rng = np.random.default_rng(11)
    pixels = rng.integers(0, 256, size=(32, 64, 3), dtype=np.uint8)
    sample = ImageSample(pixels=pixels, identity_id=0, vessel_type="tug", split="train")
    out = aspect_normalize(sample, 32, 64).tensor
    assert np.allclose(out, pixels.transpose(2, 0, 1) / 255.0, atol=1e-7)


def test_nearest_is_exact_decimation():
    rng = np.random.default_rng(12)
    pixels = rng.integers(0, 256, size=(128, 256, 3), dtype=np.uint8)
    sample = ImageSample(pixels=pixels, identity_id=0, vessel_type="cargo", split="train")
    out = aspect_normalize(sample, 64, 128, interpolation="nearest").tensor
    expected = pixels[1::2, 1::2].transpose(2, 0, 1) / 255.0
    assert np.array_equal(out, expected.astype(np.float32))


def test_bilinear_same_size_is_identity_and_stays_bounded():
    rng = np.random.default_rng(13)
    pixels = rng.integers(0, 256, size=(24, 48, 3), dtype=np.uint8)
    sample = ImageSample(pixels=pixels, identity_id=0, vessel_type="cargo", split="train")
    same = aspect_normalize(sample, 24, 48, interpolation="bilinear").tensor
    assert np.allclose(same, pixels.transpose(2, 0, 1) / 255.0, atol=1e-6)
    up = aspect_normalize(sample, 48, 96, interpolation="bilinear").tensor
    assert up.min() >= pixels.min() / 255.0 - 1e-6
    assert up.max() <= pixels.max() / 255.0 + 1e-6


def test_unknown_interpolation_rejected():
    with pytest.raises(InvalidInputError):
        aspect_normalize(_solid(16, 16, (0, 0, 0)), 32, 64, interpolation="bicubic")


def test_tiny_target_rejected():
    with pytest.raises(InvalidInputError):
        aspect_normalize(_solid(16, 16, (0, 0, 0)), 4, 64)


def test_sss_zero_angle_is_a_copy():
    rng = np.random.default_rng(21)
    m = ModelInput(tensor=rng.random((3, 16, 32)).astype(np.float32))
    out = sss_augment(m, SssParams(), 0.0)
    assert out.tensor is not m.tensor
    assert np.array_equal(out.tensor, m.tensor)


def test_sss_angle_outside_range_rejected():
    m = ModelInput(tensor=np.zeros((3, 16, 32), dtype=np.float32))
    with pytest.raises(RangeError):
        sss_augment(m, SssParams(angle_min_deg=-5.0, angle_max_deg=5.0), 7.0)


def test_sss_fills_rotated_out_corners():
    m = ModelInput(tensor=np.ones((3, 32, 64), dtype=np.float32))
    out = sss_augment(m, SssParams(), 10.0)
    mask = rotation_valid_mask(32, 64, 10.0)
    assert not mask.all()
    fill = np.float32(GRAY_FILL)
    for c in range(3):
        assert np.all(out.tensor[c][~mask] == fill)
        assert np.all(out.tensor[c][mask] == 1.0)
    assert out.tensor.shape == m.tensor.shape


def test_rotation_valid_mask_identity_at_zero():
    assert rotation_valid_mask(20, 40, 0.0).all()
    tilted = rotation_valid_mask(20, 40, 30.0)
    assert tilted[10, 20]
    assert not tilted[0, 0]


def test_sss_params_validation():
    with pytest.raises(InvalidInputError):
        SssParams(angle_min_deg=5.0, angle_max_deg=-5.0)
    with pytest.raises(InvalidInputError):
        SssParams(angle_min_deg=-50.0, angle_max_deg=10.0)


def test_sample_sss_angle_deterministic_and_bounded():
    params = SssParams(angle_min_deg=-10.0, angle_max_deg=10.0)
    angles_a = [sample_sss_angle(np.random.default_rng(7), params) for _ in range(1)]
    angles_b = [sample_sss_angle(np.random.default_rng(7), params) for _ in range(1)]
    assert angles_a == angles_b
    rng = np.random.default_rng(8)
    for _ in range(200):
        assert -10.0 <= sample_sss_angle(rng, params) <= 10.0


def test_image_sample_validation():
    with pytest.raises(ShapeError):
        ImageSample(pixels=np.zeros((8, 8), dtype=np.uint8), identity_id=0,
                    vessel_type="tug", split="train")
    with pytest.raises(InvalidInputError):
        _solid(8, 8, (0, 0, 0), split="holdout")
    with pytest.raises(InvalidInputError):
        _solid(8, 8, (0, 0, 0), identity_id=-1)


def test_manifest_round_trip(tmp_path):
    entries = [
        ManifestEntry(path="images/a.png", identity_id=0, vessel_type="warship", split="train"),
        ManifestEntry(path="images/b.png", identity_id=3, vessel_type="tanker", split="query"),
    ]
    path = tmp_path / "manifest.jsonl"
    write_manifest(path, entries)
    assert read_manifest_entries(path) == entries


def test_manifest_blank_lines_skipped(tmp_path):
    path = tmp_path / "manifest.jsonl"
    path.write_text(
        '{"path": "a.png", "id": 1, "type": "tug", "split": "train"}\n'
        "\n"
        '{"path": "b.png", "id": 2, "type": "tug", "split": "gallery"}\n'
    )
    entries = read_manifest_entries(path)
    assert [e.identity_id for e in entries] == [1, 2]


def test_manifest_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"path": "a.png", "id": 1, "type": "tug", "split": "train"}\n'
        '{"path": "b.png", "id": 2, "type": "tug"}\n'
    )
    with pytest.raises(InvalidInputError, match="line 2"):
        read_manifest_entries(path)
    path.write_text('{"path": "a.png", "id": 1, "type": "tug", "split": "val"}\n')
    with pytest.raises(InvalidInputError, match="line 1"):
        read_manifest_entries(path)


def test_read_manifest_loads_images(tiny_dataset):
    samples = read_manifest(tiny_dataset)
    entries = read_manifest_entries(tiny_dataset)
    assert len(samples) == len(entries) == 8 * 6
    for s in samples:
        assert s.pixels.shape == (64, 128, 3)
        assert s.pixels.dtype == np.uint8
    reread = load_image(samples[0].source_path)
    assert np.array_equal(reread, samples[0].pixels)
