"""Image ingestion and geometry-preserving preprocessing.

Pipeline: 8-bit RGB image -> gray-bar letterbox to the target aspect ratio ->
resample to the model resolution -> scale to [0, 1]. The sea-sway augmentation
(small random rotation about the image center, overflow cropped, corners gray)
operates on the letterboxed tensor. All operations are pure functions; RNG
streams are passed in explicitly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidInputError, RangeError, ShapeError

# Mid-gray used for letterbox bars and rotation corners, as a [0,1] intensity.
GRAY_FILL = 128.0 / 255.0

VESSEL_TYPES = (
    "warship",
    "passenger",
    "sailboat",
    "high_speed",
    "cargo",
    "tug",
    "tanker",
    "fishing",
)

SPLITS = ("train", "gallery", "query")


@dataclass
class ImageSample:
    """A labeled RGB image: pixels are H x W x 3 uint8."""

    pixels: np.ndarray
    identity_id: int
    vessel_type: str
    split: str
    source_path: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ShapeError(f"expected H x W x 3 pixels, got shape {self.pixels.shape}")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise InvalidInputError("image has zero area")
        if self.identity_id < 0:
            raise InvalidInputError(f"identity_id must be >= 0, got {self.identity_id}")
        if self.split not in SPLITS:
            raise InvalidInputError(f"unknown split {self.split!r}")


@dataclass
class ModelInput:
    """Network-ready image: 3 x H x W float32 with all entries in [0, 1]."""

    tensor: np.ndarray

    @property
    def height(self) -> int:
        return self.tensor.shape[1]

    @property
    def width(self) -> int:
        return self.tensor.shape[2]


@dataclass
class SssParams:
    """Sea-sway rotation range in degrees plus the corner fill intensity."""

    angle_min_deg: float = -10.0
    angle_max_deg: float = 10.0
    fill: float = GRAY_FILL

    def __post_init__(self):
        if self.angle_min_deg > self.angle_max_deg:
            raise InvalidInputError("angle_min_deg must be <= angle_max_deg")
        if not (-45.0 <= self.angle_min_deg and self.angle_max_deg <= 45.0):
            raise InvalidInputError("sway angles must lie within [-45, 45] degrees")


def _nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    # Pixel-center mapping; exact decimation when n_in is a multiple of n_out.
    src = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(src, 0, n_in - 1)


def _resample(img: np.ndarray, out_h: int, out_w: int, interpolation: str) -> np.ndarray:
    in_h, in_w = img.shape[:2]
    if interpolation == "nearest":
        rows = _nearest_indices(out_h, in_h)
        cols = _nearest_indices(out_w, in_w)
        return img[rows[:, None], cols[None, :]]
    if interpolation == "bilinear":
        ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
        xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
        y0 = np.clip(np.floor(ys).astype(np.int64), 0, in_h - 1)
        x0 = np.clip(np.floor(xs).astype(np.int64), 0, in_w - 1)
        y1 = np.clip(y0 + 1, 0, in_h - 1)
        x1 = np.clip(x0 + 1, 0, in_w - 1)
        wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
        wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
        top = img[y0[:, None], x0[None, :]] * (1 - wx) + img[y0[:, None], x1[None, :]] * wx
        bot = img[y1[:, None], x0[None, :]] * (1 - wx) + img[y1[:, None], x1[None, :]] * wx
        return top * (1 - wy) + bot * wy
    raise InvalidInputError(f"unknown interpolation {interpolation!r}")


def aspect_normalize(
    image: ImageSample,
    target_h: int = 512,
    target_w: int = 1024,
    interpolation: str = "nearest",
) -> ModelInput:
    """Letterbox to the target aspect ratio with gray bars, then resample.

    The shorter relative axis is padded symmetrically with mid-gray until the
    aspect ratio matches target_w:target_h; nothing is cropped. The padded
    image is resampled to target_h x target_w and scaled to [0, 1].
    """
    if target_h < 8 or target_w < 8:
        raise InvalidInputError("target resolution must be at least 8 x 8")
    h, w = image.pixels.shape[:2]
    if h == 0 or w == 0:
        raise InvalidInputError("image has zero area")

    canvas = image.pixels.astype(np.float64) / 255.0
    # Compare w/h against target_w/target_h using integer cross products.
    if w * target_h < h * target_w:
        new_w = int(round(h * target_w / target_h))
        pad = new_w - w
        left = pad // 2
        padded = np.full((h, new_w, 3), GRAY_FILL, dtype=np.float64)
        padded[:, left:left + w] = canvas
    elif w * target_h > h * target_w:
        new_h = int(round(w * target_h / target_w))
        pad = new_h - h
        top = pad // 2
        padded = np.full((new_h, w, 3), GRAY_FILL, dtype=np.float64)
        padded[top:top + h] = canvas
    else:
        padded = canvas

    resampled = _resample(padded, target_h, target_w, interpolation)
    chw = np.ascontiguousarray(resampled.transpose(2, 0, 1).astype(np.float32))
    return ModelInput(tensor=np.clip(chw, 0.0, 1.0))


def sss_augment(model_input: ModelInput, params: SssParams, angle_deg: float) -> ModelInput:
    """Rotate about the image center; overflow is cropped, corners get gray fill.

    Positive angles rotate content counterclockwise (as displayed). Inverse
    mapping with nearest-neighbor sampling, so the output has no holes and
    stays in [0, 1]. Output dimensions match the input.
    """
    if not (params.angle_min_deg <= angle_deg <= params.angle_max_deg):
        raise RangeError(
            f"angle {angle_deg} outside [{params.angle_min_deg}, {params.angle_max_deg}]"
        )
    tensor = model_input.tensor
    _, h, w = tensor.shape
    if angle_deg == 0.0:
        return ModelInput(tensor=tensor.copy())

    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0

    ys, xs = np.indices((h, w), dtype=np.float64)
    dx, dy = xs - cx, ys - cy
    # Inverse of a CCW content rotation (screen coords, y down).
    src_x = cos_t * dx - sin_t * dy + cx
    src_y = sin_t * dx + cos_t * dy + cy

    sx = np.rint(src_x).astype(np.int64)
    sy = np.rint(src_y).astype(np.int64)
    inside = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    sxc = np.clip(sx, 0, w - 1)
    syc = np.clip(sy, 0, h - 1)

    out = np.empty_like(tensor)
    for c in range(tensor.shape[0]):
        chan = tensor[c][syc, sxc]
        chan[~inside] = params.fill
        out[c] = chan
    return ModelInput(tensor=out)


def rotation_valid_mask(h: int, w: int, angle_deg: float) -> np.ndarray:
    """Boolean H x W mask of output pixels whose source stayed inside the frame."""
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.indices((h, w), dtype=np.float64)
    dx, dy = xs - cx, ys - cy
    src_x = np.rint(cos_t * dx - sin_t * dy + cx)
    src_y = np.rint(sin_t * dx + cos_t * dy + cy)
    return (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)


def sample_sss_angle(rng: np.random.Generator, params: SssParams) -> float:
    """Uniform draw from the configured sway range; deterministic given the stream."""
    return float(rng.uniform(params.angle_min_deg, params.angle_max_deg))


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG (or any PIL-readable image) to H x W x 3 uint8."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


@dataclass
class ManifestEntry:
    """One dataset row: path is relative to the manifest's directory."""

    path: str
    identity_id: int
    vessel_type: str
    split: str


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for e in entries:
            row = {"path": e.path, "id": e.identity_id, "type": e.vessel_type, "split": e.split}
            fh.write(json.dumps(row) + "\n")


def read_manifest_entries(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                entry = ManifestEntry(
                    path=row["path"],
                    identity_id=int(row["id"]),
                    vessel_type=row["type"],
                    split=row["split"],
                )
            except KeyError as exc:
                raise InvalidInputError(f"manifest line {line_no}: missing key {exc}") from exc
            if entry.split not in SPLITS:
                raise InvalidInputError(f"manifest line {line_no}: unknown split {entry.split!r}")
            entries.append(entry)
    return entries


def read_manifest(path: str | Path) -> list[ImageSample]:
    """Load a JSON Lines manifest and decode every referenced image."""
    path = Path(path)
    root = path.parent
    samples = []
    for e in read_manifest_entries(path):
        img_path = root / e.path
        samples.append(
            ImageSample(
                pixels=load_image(img_path),
                identity_id=e.identity_id,
                vessel_type=e.vessel_type,
                split=e.split,
                source_path=str(img_path),
            )
        )
    return samples
