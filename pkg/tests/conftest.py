"""Shared fixtures: one tiny generated dataset reused across test modules.

The dataset is rendered once per session at the model resolution (64 x 128),
so letterboxing is a no-op resize and training tests stay fast. Four warship
identities carry query/gallery splits; four passenger identities provide a
transfer source pool.
"""
from pathlib import Path

import pytest

from tranalign import DatasetConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    """Manifest path for a small two-type dataset (6 images per identity)."""
    out_dir = tmp_path_factory.mktemp("tiny_dataset")
    cfg = DatasetConfig(
        seed=3,
        ids_per_type={"warship": 4, "passenger": 4},
        images_per_id=6,
        out_dir=str(out_dir),
        resolution=(64, 128),
        target_type="warship",
    )
    return generate_dataset(cfg)
