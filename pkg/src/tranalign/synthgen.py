"""Procedural generator of labeled vessel silhouette images.

Each identity is a deterministic function of (master_seed, identity_id,
vessel_type): a hull polygon, a superstructure skyline with per-block paint
tones, mast segments, a deck accent band, and a base color, all drawn from
per-type style ranges. Hull shapes stay similar within a type; superstructure
layout and paint tones carry most of the identity signal. Views vary yaw
(apparent length compression), haze fade, wave occlusion, and scale. Images
are rasterized over a fixed sky/sea gradient and written as PNGs plus a JSON
Lines manifest.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .errors import InvalidInputError, RangeError
from .imaging import VESSEL_TYPES, ImageSample, ManifestEntry, write_manifest

log = logging.getLogger(__name__)

# Width of a bow/stern profile relative to the broadside silhouette. Apparent
# length never compresses below this, even at 90 degrees off-broadside.
BOW_PROFILE_FRAC = 0.45

MAST_COLOR = (38, 38, 42)
OUTLINE_COLOR = (45, 45, 50)

# Per-type style ranges. hull_len is the fraction of the drawing span the hull
# occupies; tug gets the short-hull range on purpose. Block/mast counts are
# inclusive. palette is (lo, hi) per RGB channel for the base color draw.
TYPE_STYLES = {
    "warship": {
        "hull_len": (0.55, 0.72),
        "hull_depth": (0.16, 0.22),
        "blocks": (2, 5),
        "block_height": (0.14, 0.38),
        "block_region": (0.18, 0.80),
        "masts": (1, 3),
        "mast_top": (0.08, 0.42),
        "palette": ((40, 230), (40, 230), (40, 230)),
        "gray": True,
    },
    "passenger": {
        "hull_len": (0.60, 0.80),
        "hull_depth": (0.16, 0.22),
        "blocks": (2, 4),
        "block_height": (0.22, 0.40),
        "block_region": (0.12, 0.88),
        "masts": (0, 1),
        "mast_top": (0.30, 0.45),
        "palette": ((198, 238), (198, 238), (202, 242)),
        "gray": False,
    },
    "sailboat": {
        "hull_len": (0.30, 0.45),
        "hull_depth": (0.12, 0.18),
        "blocks": (1, 1),
        "block_height": (0.06, 0.12),
        "block_region": (0.30, 0.70),
        "masts": (1, 2),
        "mast_top": (0.05, 0.18),
        "palette": ((60, 220), (60, 220), (60, 220)),
        "gray": False,
    },
    "high_speed": {
        "hull_len": (0.35, 0.50),
        "hull_depth": (0.13, 0.18),
        "blocks": (1, 2),
        "block_height": (0.10, 0.20),
        "block_region": (0.25, 0.75),
        "masts": (0, 1),
        "mast_top": (0.35, 0.50),
        "palette": ((190, 240), (190, 240), (190, 240)),
        "gray": False,
    },
    "cargo": {
        "hull_len": (0.65, 0.85),
        "hull_depth": (0.18, 0.24),
        "blocks": (1, 2),
        "block_height": (0.18, 0.30),
        "block_region": (0.62, 0.90),
        "masts": (1, 3),
        "mast_top": (0.30, 0.45),
        "palette": ((40, 140), (50, 120), (60, 150)),
        "gray": False,
    },
    "tug": {
        "hull_len": (0.30, 0.42),
        "hull_depth": (0.16, 0.22),
        "blocks": (1, 2),
        "block_height": (0.18, 0.30),
        "block_region": (0.25, 0.70),
        "masts": (0, 1),
        "mast_top": (0.40, 0.55),
        "palette": ((140, 220), (40, 90), (30, 70)),
        "gray": False,
    },
    "tanker": {
        "hull_len": (0.60, 0.78),
        "hull_depth": (0.16, 0.22),
        "blocks": (1, 2),
        "block_height": (0.16, 0.30),
        "block_region": (0.70, 0.90),
        "masts": (1, 2),
        "mast_top": (0.30, 0.48),
        "palette": ((110, 185), (100, 170), (90, 155)),
        "gray": False,
    },
    "fishing": {
        "hull_len": (0.35, 0.55),
        "hull_depth": (0.14, 0.20),
        "blocks": (1, 2),
        "block_height": (0.12, 0.22),
        "block_region": (0.20, 0.65),
        "masts": (1, 2),
        "mast_top": (0.20, 0.38),
        "palette": ((70, 200), (70, 200), (70, 200)),
        "gray": False,
    },
}


@dataclass
class VesselGeometry:
    """Normalized-silhouette description of one identity.

    Coordinates live in [0,1]^2 with x along the hull (stern to bow) and y
    down (0 is the mast-top allowance, 1 the keel). Rectangles are
    (x0, y0, x1, y1); mast segments are ((x, y_top), (x, y_bottom)).
    """

    identity_id: int
    hull_polygon: list[tuple[float, float]]
    superstructure_blocks: list[tuple[float, float, float, float]]
    mast_segments: list[tuple[tuple[float, float], tuple[float, float]]]
    base_color: tuple[int, int, int]
    vessel_type: str
    block_colors: list[tuple[int, int, int]] = field(default_factory=list)
    accent_color: tuple[int, int, int] | None = None
    mast_color: tuple[int, int, int] | None = None
    mast_width: float | None = None

    def __post_init__(self):
        if not self.superstructure_blocks:
            raise InvalidInputError("geometry needs at least one superstructure block")
        if self.block_colors and len(self.block_colors) != len(self.superstructure_blocks):
            raise InvalidInputError(
                f"{len(self.block_colors)} block colors for "
                f"{len(self.superstructure_blocks)} blocks"
            )
        for x, y in self.hull_polygon:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise InvalidInputError(f"hull vertex ({x}, {y}) outside [0,1]^2")


@dataclass
class ViewParams:
    """One rendering viewpoint: yaw, haze fade, wave occlusion, scale."""

    yaw_deg: float = 0.0
    fade: float = 0.0
    wave_occlusion: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.yaw_deg < 360.0):
            raise RangeError(f"yaw_deg {self.yaw_deg} outside [0, 360)")
        if not (0.0 <= self.fade <= 1.0):
            raise RangeError(f"fade {self.fade} outside [0, 1]")
        if not (0.0 <= self.wave_occlusion <= 0.3):
            raise RangeError(f"wave_occlusion {self.wave_occlusion} outside [0, 0.3]")
        if self.scale <= 0.0:
            raise RangeError(f"scale must be positive, got {self.scale}")


def _uniform(rng: np.random.Generator, lo_hi: tuple[float, float]) -> float:
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def _gray_near(rng: np.random.Generator, value: int) -> tuple[int, int, int]:
    """A low-saturation color around a gray value: small independent tints."""
    tints = rng.integers(-6, 7, size=2)
    return (
        int(np.clip(value, 0, 255)),
        int(np.clip(value + tints[0], 0, 255)),
        int(np.clip(value + tints[1], 0, 255)),
    )


def _contrast_gray(rng: np.random.Generator, anchor: int) -> tuple[int, int, int]:
    """A gray clearly separated from `anchor`, so paint tones carry identity.

    The draw keeps at least 40 intensity levels of separation in either
    direction, flipping sides when the preferred side would leave [30, 240].
    """
    gap = int(rng.integers(40, 111))
    side = 1 if rng.random() < 0.5 else -1
    value = anchor + side * gap
    if not (30 <= value <= 240):
        value = anchor - side * gap
    return _gray_near(rng, int(np.clip(value, 30, 240)))


def _shade(color: tuple[int, int, int], frac: float) -> tuple[int, int, int]:
    """Blend toward white (frac > 0) or toward near-black (frac < 0)."""
    target = 255.0 if frac >= 0.0 else 25.0
    f = abs(frac)
    return tuple(int(round((1.0 - f) * c + f * target)) for c in color)


def _signed_frac(rng: np.random.Generator) -> float:
    """A shade fraction with magnitude in [0.25, 0.65], either direction."""
    mag = float(rng.uniform(0.25, 0.65))
    return mag if rng.random() < 0.5 else -mag


def generate_identity(master_seed: int, identity_id: int, vessel_type: str) -> VesselGeometry:
    """Draw a deterministic geometry for (master_seed, identity_id, vessel_type)."""
    if identity_id < 0:
        raise InvalidInputError(f"identity_id must be >= 0, got {identity_id}")
    if vessel_type not in TYPE_STYLES:
        raise InvalidInputError(f"unknown vessel_type {vessel_type!r}")
    style = TYPE_STYLES[vessel_type]
    type_idx = VESSEL_TYPES.index(vessel_type)
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, type_idx, identity_id]))

    hull_len = _uniform(rng, style["hull_len"])
    hull_depth = _uniform(rng, style["hull_depth"])
    keel_y = 0.97
    deck_y = keel_y - hull_depth
    x0 = 0.5 - hull_len / 2.0
    x1 = 0.5 + hull_len / 2.0

    deck_frac = float(rng.uniform(0.80, 0.92))
    bow_tip_drop = float(rng.uniform(0.15, 0.50))
    bow_bottom = float(rng.uniform(0.80, 0.90))
    stern_bottom = float(rng.uniform(0.02, 0.10))
    hull_polygon = [
        (x0, deck_y),
        (x0 + hull_len * deck_frac, deck_y),
        (x1, deck_y + bow_tip_drop * hull_depth),
        (x0 + hull_len * bow_bottom, keel_y),
        (x0 + hull_len * stern_bottom, keel_y),
    ]

    n_blocks = int(rng.integers(style["blocks"][0], style["blocks"][1] + 1))
    region_lo, region_hi = style["block_region"]
    blocks = []
    # Stratified centers: one jittered draw per equal sub-interval of the
    # block region, so skylines differ structurally instead of clumping.
    for j in range(n_blocks):
        stratum = (j + float(rng.uniform(0.15, 0.85))) / n_blocks
        cx = x0 + hull_len * (region_lo + (region_hi - region_lo) * stratum)
        width = float(rng.uniform(0.06, 0.30)) * hull_len
        bx0 = max(x0 + 0.02 * hull_len, cx - width / 2.0)
        bx1 = min(x1 - 0.04 * hull_len, cx + width / 2.0)
        if bx1 <= bx0:
            bx0, bx1 = cx - 0.02, cx + 0.02
        height = _uniform(rng, style["block_height"])
        blocks.append((bx0, deck_y - height, bx1, deck_y))

    n_masts = int(rng.integers(style["masts"][0], style["masts"][1] + 1))
    masts = []
    for _ in range(n_masts):
        mx = x0 + hull_len * float(rng.uniform(0.15, 0.85))
        top = _uniform(rng, style["mast_top"])
        masts.append(((mx, top), (mx, deck_y)))

    lo_hi = style["palette"]
    if style["gray"]:
        v = int(rng.integers(lo_hi[0][0], lo_hi[0][1] + 1))
        base = _gray_near(rng, v)
        block_colors = [_contrast_gray(rng, v) for _ in blocks]
        accent = _contrast_gray(rng, v)
        mast_color = _contrast_gray(rng, v)
    else:
        base = tuple(int(rng.integers(lo, hi + 1)) for lo, hi in lo_hi)
        block_colors = [_shade(base, _signed_frac(rng)) for _ in blocks]
        accent = _shade(base, _signed_frac(rng))
        mast_color = _shade(base, _signed_frac(rng))
    mast_width = float(rng.uniform(1.0 / 80.0, 1.0 / 32.0))

    return VesselGeometry(
        identity_id=identity_id,
        hull_polygon=hull_polygon,
        superstructure_blocks=blocks,
        mast_segments=masts,
        base_color=base,
        vessel_type=vessel_type,
        block_colors=block_colors,
        accent_color=accent,
        mast_color=mast_color,
        mast_width=mast_width,
    )


def _background(out_h: int, out_w: int) -> np.ndarray:
    """Fixed sky/sea vertical gradient, identical for every render.

    Tones are kept bright so haze fade (a blend toward white) moves the
    backdrop as little as possible between views of the same vessel.
    """
    horizon = int(round(0.58 * out_h))
    img = np.zeros((out_h, out_w, 3), dtype=np.float64)
    sky_top = np.array([225.0, 230.0, 236.0])
    sky_bot = np.array([240.0, 242.0, 244.0])
    sea_top = np.array([200.0, 210.0, 218.0])
    sea_bot = np.array([180.0, 192.0, 202.0])
    for row in range(out_h):
        if row < horizon:
            t = row / max(1, horizon - 1)
            img[row] = sky_top + t * (sky_bot - sky_top)
        else:
            t = (row - horizon) / max(1, out_h - 1 - horizon)
            img[row] = sea_top + t * (sea_bot - sea_top)
    return img


def _lighten(color: tuple[int, int, int]) -> tuple[int, int, int]:
    return tuple(int(round(0.45 * c + 0.55 * 255)) for c in color)


def render(geometry: VesselGeometry, view: ViewParams, out_h: int, out_w: int) -> ImageSample:
    """Rasterize one view of a geometry over the sky/sea background.

    Yaw compresses apparent length toward a bow/stern profile; yaw past
    broadside mirrors the silhouette. Fade then blends the whole frame toward
    white, and wave occlusion restores background over the lowest fraction of
    the hull's bounding box.
    """
    if out_h < 16 or out_w < 16:
        raise InvalidInputError("render resolution must be at least 16 x 16")

    cos_yaw = float(np.cos(np.deg2rad(view.yaw_deg)))
    width_factor = abs(cos_yaw) + (1.0 - abs(cos_yaw)) * BOW_PROFILE_FRAC
    sign = 1.0 if cos_yaw >= 0.0 else -1.0

    span_x = 0.92 * out_w * view.scale * width_factor
    span_y = 0.76 * out_h * view.scale
    keel_row = 0.90 * out_h
    cx = 0.5 * out_w

    def to_px(pt: tuple[float, float]) -> tuple[float, float]:
        x, y = pt
        return (cx + sign * (x - 0.5) * span_x, keel_row - (1.0 - y) * span_y)

    background = _background(out_h, out_w)
    canvas = Image.fromarray(np.rint(background).astype(np.uint8))
    draw = ImageDraw.Draw(canvas)
    hull_px = [to_px(p) for p in geometry.hull_polygon]
    draw.polygon(hull_px, fill=geometry.base_color, outline=OUTLINE_COLOR)

    if geometry.accent_color is not None:
        # Deck band along the straight part of the sheer line, one more paint
        # tone that stays visible even in narrow bow-on views.
        (sx0, deck_y), (sx1, _) = geometry.hull_polygon[0], geometry.hull_polygon[1]
        keel_y = max(y for _, y in geometry.hull_polygon)
        band = (sx0, deck_y, sx1, deck_y + 0.22 * (keel_y - deck_y))
        px0, py0 = to_px((band[0], band[1]))
        px1, py1 = to_px((band[2], band[3]))
        if px1 < px0:
            px0, px1 = px1, px0
        draw.rectangle((px0, py0, px1, py1), fill=geometry.accent_color)

    default_block = _lighten(geometry.base_color)
    colors = geometry.block_colors or [default_block] * len(geometry.superstructure_blocks)
    for (bx0, by0, bx1, by1), color in zip(geometry.superstructure_blocks, colors):
        px0, py0 = to_px((bx0, by0))
        px1, py1 = to_px((bx1, by1))
        if px1 < px0:
            px0, px1 = px1, px0
        draw.rectangle((px0, py0, px1, py1), fill=color, outline=OUTLINE_COLOR)

    mast_frac = geometry.mast_width if geometry.mast_width is not None else 1.0 / 96.0
    mast_w = max(2, round(out_w * mast_frac))
    mast_fill = geometry.mast_color or MAST_COLOR
    for (mx, my_top), (mx2, my_bot) in geometry.mast_segments:
        draw.line([to_px((mx, my_top)), to_px((mx2, my_bot))], fill=mast_fill, width=mast_w)

    scene = np.asarray(canvas, dtype=np.float64)

    if view.wave_occlusion > 0.0:
        mask_img = Image.new("1", (out_w, out_h), 0)
        ImageDraw.Draw(mask_img).polygon(hull_px, fill=1, outline=1)
        mask = np.asarray(mask_img, dtype=bool)
        rows = np.nonzero(mask.any(axis=1))[0]
        if rows.size:
            top_row, bot_row = int(rows[0]), int(rows[-1])
            box_h = bot_row - top_row + 1
            cutoff = bot_row - int(np.ceil(view.wave_occlusion * box_h)) + 1
            scene[cutoff:] = background[cutoff:]

    if view.fade > 0.0:
        scene = (1.0 - view.fade) * scene + view.fade * 255.0

    pixels = np.rint(np.clip(scene, 0.0, 255.0)).astype(np.uint8)
    return ImageSample(
        pixels=pixels,
        identity_id=geometry.identity_id,
        vessel_type=geometry.vessel_type,
        split="train",
    )


def sample_view(rng: np.random.Generator) -> ViewParams:
    """Draw one viewpoint: yaw over a half circle, moderate fade and occlusion."""
    yaw = float(rng.uniform(-90.0, 90.0)) % 360.0
    return ViewParams(
        yaw_deg=yaw,
        fade=float(rng.uniform(0.0, 0.5)),
        wave_occlusion=float(rng.uniform(0.0, 0.2)),
        scale=float(rng.uniform(0.93, 1.07)),
    )


@dataclass
class DatasetConfig:
    """Knobs for generate_dataset; ids_per_type order fixes identity numbering."""

    seed: int = 0
    ids_per_type: dict[str, int] = field(
        default_factory=lambda: {"warship": 12, "passenger": 10, "tanker": 10, "tug": 6}
    )
    images_per_id: int = 16
    out_dir: str = "dataset"
    resolution: tuple[int, int] = (128, 256)
    target_type: str = "warship"
    query_fraction: float = 0.20
    workers: int = 1


def _split_indices(
    n_images: int, query_fraction: float, rng: np.random.Generator
) -> dict[int, str]:
    """Assign one identity's image indices to train/gallery/query splits.

    Train and test are split 1:1; the query share of test defaults to 20%,
    with at least one gallery image kept whenever the test side has two.
    """
    order = rng.permutation(n_images)
    n_train = n_images // 2
    test = order[n_train:]
    n_query = int(round(query_fraction * len(test)))
    n_query = max(1, n_query) if len(test) >= 2 else 0
    n_query = min(n_query, len(test) - 1)
    splits = {int(i): "train" for i in order[:n_train]}
    for j, idx in enumerate(test):
        splits[int(idx)] = "query" if j < n_query else "gallery"
    return splits


def generate_dataset(cfg: DatasetConfig) -> Path:
    """Write PNGs plus a JSONL manifest under cfg.out_dir; returns the manifest path.

    Everything is a pure function of (seed, config): identity geometry, view
    draws, and split assignment each use their own seed-derived stream, so
    regeneration is byte-identical. Rendering can fan out across threads; the
    manifest is written once at the end.
    """
    for vessel_type in cfg.ids_per_type:
        if vessel_type not in TYPE_STYLES:
            raise InvalidInputError(f"unknown vessel_type {vessel_type!r}")
    out_dir = Path(cfg.out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    out_h, out_w = cfg.resolution

    jobs = []
    identity_id = 0
    for vessel_type, n_ids in cfg.ids_per_type.items():
        type_idx = VESSEL_TYPES.index(vessel_type)
        for _ in range(n_ids):
            geometry = generate_identity(cfg.seed, identity_id, vessel_type)
            if vessel_type == cfg.target_type:
                split_rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, 0xA11, identity_id])
                )
                splits = _split_indices(cfg.images_per_id, cfg.query_fraction, split_rng)
            else:
                splits = {i: "train" for i in range(cfg.images_per_id)}
            for view_idx in range(cfg.images_per_id):
                view_rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, type_idx, identity_id, view_idx])
                )
                name = f"{vessel_type}_{identity_id:04d}_{view_idx:03d}.png"
                jobs.append((geometry, view_rng, name, splits[view_idx]))
            identity_id += 1

    def run_job(job) -> ManifestEntry:
        geometry, view_rng, name, split = job
        sample = render(geometry, sample_view(view_rng), out_h, out_w)
        Image.fromarray(sample.pixels).save(img_dir / name)
        return ManifestEntry(
            path=f"images/{name}",
            identity_id=geometry.identity_id,
            vessel_type=geometry.vessel_type,
            split=split,
        )

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            entries = list(pool.map(run_job, jobs))
    else:
        entries = [run_job(job) for job in jobs]

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, entries)
    log.info("wrote %d images and %s", len(entries), manifest_path)
    return manifest_path


def dataset_config_digest(cfg: DatasetConfig) -> str:
    """Stable digest of the generator config, echoed into run manifests."""
    import hashlib

    payload = json.dumps(
        {
            "seed": cfg.seed,
            "ids_per_type": cfg.ids_per_type,
            "images_per_id": cfg.images_per_id,
            "resolution": list(cfg.resolution),
            "target_type": cfg.target_type,
            "query_fraction": cfg.query_fraction,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()
