"""Flat key-value configuration shared by the CLI and the library.

One dictionary drives everything: training knobs, dataset generation knobs,
and grid settings. Files are plain JSON with the same keys; CLI flags override
file values, file values override defaults. Unknown keys are rejected so
typos fail loudly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidInputError

REGIMES = ("baseline", "expanded", "transfer")

DEFAULTS: dict = {
    "seed": 1,
    "regime": "baseline",
    "sss_train": False,
    "sss_transfer": False,
    "sss_test": False,
    "P": 4,
    "Q": 4,
    "epochs": 20,
    "step_size": 3e-4,
    "epsilon": 0.1,
    "eta": 0.3,
    "lam": 1.0,
    "gamma": 1.0,
    "rho": 0.001,
    "sigma": None,
    "r": 8,
    "c_prime": 128,
    "widths": [16, 32, 64],
    "resolution": "64x128",
    "interpolation": "nearest",
    "angle_min_deg": -10.0,
    "angle_max_deg": 10.0,
    "target_type": "warship",
    "transfer_type": "passenger",
    # dataset generation
    "ids_per_type": {"warship": 12, "passenger": 10, "tanker": 10, "tug": 6},
    "images_per_id": 16,
    "query_fraction": 0.2,
    "gen_resolution": "128x256",
    # grid and reporting
    "grid_seeds": [1, 2, 3],
    "topk": 10,
    "parallel": False,
}


def parse_resolution(value) -> tuple[int, int]:
    """Accept "HxW" strings or (H, W) pairs."""
    if isinstance(value, str):
        parts = value.lower().split("x")
        if len(parts) != 2:
            raise InvalidInputError(f"resolution must look like 64x128, got {value!r}")
        try:
            h, w = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise InvalidInputError(f"resolution must look like 64x128, got {value!r}") from exc
    else:
        try:
            h, w = int(value[0]), int(value[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise InvalidInputError(f"cannot parse resolution from {value!r}") from exc
    if h < 8 or w < 8:
        raise InvalidInputError(f"resolution {h}x{w} is below the 8x8 minimum")
    return h, w


def load_config_file(path: str | Path) -> dict:
    with Path(path).open("r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise InvalidInputError(f"config file {path} must hold a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
    return data


def effective_config(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """defaults <- file <- overrides, with unknown-key checking on each layer."""
    merged = dict(DEFAULTS)
    for layer in (file_values, overrides):
        if not layer:
            continue
        unknown = set(layer) - set(DEFAULTS)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        for key, value in layer.items():
            if value is not None or key == "sigma":
                merged[key] = value
    return merged


@dataclass
class TrainConfig:
    """Everything one training run needs; mirrors the flat config keys."""

    regime: str = "baseline"
    sss_train: bool = False
    sss_transfer: bool = False
    P: int = 4
    Q: int = 4
    epochs: int = 20
    step_size: float = 3e-4
    seed: int = 1
    epsilon: float = 0.1
    eta: float = 0.3
    lam: float = 1.0
    gamma: float = 1.0
    rho: float = 0.001
    sigma: float | None = None
    r: int = 8
    c_prime: int = 128
    widths: tuple[int, ...] = (16, 32, 64)
    resolution: tuple[int, int] = (64, 128)
    interpolation: str = "nearest"
    angle_min_deg: float = -10.0
    angle_max_deg: float = 10.0
    target_type: str = "warship"
    transfer_type: str = "passenger"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvalidInputError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.P < 2 or self.Q < 2 or self.P * self.Q < 4:
            raise InvalidInputError("need P >= 2 and Q >= 2")
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        # step_size 0 is allowed as a frozen-parameter diagnostic mode.
        if self.step_size < 0:
            raise InvalidInputError(f"step_size must be >= 0, got {self.step_size}")
        if self.r < 1:
            raise InvalidInputError(f"stripe count must be >= 1, got {self.r}")
        self.widths = tuple(self.widths)
        self.resolution = parse_resolution(self.resolution)


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        regime=cfg["regime"],
        sss_train=bool(cfg["sss_train"]),
        sss_transfer=bool(cfg["sss_transfer"]),
        P=int(cfg["P"]),
        Q=int(cfg["Q"]),
        epochs=int(cfg["epochs"]),
        step_size=float(cfg["step_size"]),
        seed=int(cfg["seed"]),
        epsilon=float(cfg["epsilon"]),
        eta=float(cfg["eta"]),
        lam=float(cfg["lam"]),
        gamma=float(cfg["gamma"]),
        rho=float(cfg["rho"]),
        sigma=None if cfg["sigma"] is None else float(cfg["sigma"]),
        r=int(cfg["r"]),
        c_prime=int(cfg["c_prime"]),
        widths=tuple(cfg["widths"]),
        resolution=cfg["resolution"],
        interpolation=cfg["interpolation"],
        angle_min_deg=float(cfg["angle_min_deg"]),
        angle_max_deg=float(cfg["angle_max_deg"]),
        target_type=cfg["target_type"],
        transfer_type=cfg["transfer_type"],
    )


def config_digest(cfg: TrainConfig) -> bytes:
    """sha256 over the canonical JSON form of a TrainConfig (32 raw bytes)."""
    doc = {
        "regime": cfg.regime,
        "sss_train": cfg.sss_train,
        "sss_transfer": cfg.sss_transfer,
        "P": cfg.P,
        "Q": cfg.Q,
        "epochs": cfg.epochs,
        "step_size": cfg.step_size,
        "seed": cfg.seed,
        "epsilon": cfg.epsilon,
        "eta": cfg.eta,
        "lam": cfg.lam,
        "gamma": cfg.gamma,
        "rho": cfg.rho,
        "sigma": cfg.sigma,
        "r": cfg.r,
        "c_prime": cfg.c_prime,
        "widths": list(cfg.widths),
        "resolution": list(cfg.resolution),
        "interpolation": cfg.interpolation,
        "angle_min_deg": cfg.angle_min_deg,
        "angle_max_deg": cfg.angle_max_deg,
        "target_type": cfg.target_type,
        "transfer_type": cfg.transfer_type,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()
