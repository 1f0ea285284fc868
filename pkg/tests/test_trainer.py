"""Batch sampling, the train step, regimes, determinism, and run outputs."""
import math

import numpy as np
import pytest
import torch

from tranalign import (
    Backbone,
    BackboneConfig,
    DatasetError,
    ImageSample,
    InvalidInputError,
    ShapeError,
    TrainConfig,
    config_digest,
    load_checkpoint,
    sample_pk_batch,
    sample_transfer_batch,
    train,
    train_step,
)
from tranalign.trainer import load_split


def _pool(images_per_id: dict[int, int]) -> list[ImageSample]:
    samples = []
    for identity, count in images_per_id.items():
        for _ in range(count):
            pixels = np.full((8, 8, 3), identity * 10, dtype=np.uint8)
            samples.append(
                ImageSample(pixels=pixels, identity_id=identity,
                            vessel_type="warship", split="train")
            )
    return samples


def quick_config(**overrides) -> TrainConfig:
    values = dict(
        regime="baseline",
        P=4,
        Q=2,
        epochs=2,
        seed=1,
        r=4,
        c_prime=16,
        widths=(4, 6, 8),
        resolution=(64, 128),
    )
    values.update(overrides)
    return TrainConfig(**values)


def test_sample_pk_batch_structure():
    pool = _pool({0: 4, 1: 4, 2: 4, 7: 4})
    batch = sample_pk_batch(pool, P=3, Q=2, rng=np.random.default_rng(70))
    assert len(batch.samples) == 6
    assert not batch.with_replacement
    grouped = [batch.labels[i * 2:(i + 1) * 2] for i in range(3)]
    assert all(pair[0] == pair[1] for pair in grouped)
    assert len({pair[0] for pair in grouped}) == 3
    for sample, idx, label in zip(batch.samples, batch.indices, batch.labels):
        assert pool[idx] is sample
        assert sample.identity_id == label
    # Within one identity the two picks are distinct images.
    for i in range(3):
        assert batch.indices[2 * i] != batch.indices[2 * i + 1]


def test_sample_pk_batch_replacement_flag_and_errors():
    short = _pool({0: 1, 1: 4})
    batch = sample_pk_batch(short, P=2, Q=3, rng=np.random.default_rng(71))
    assert batch.with_replacement
    assert len(batch.samples) == 6
    with pytest.raises(DatasetError):
        sample_pk_batch(_pool({0: 4}), P=2, Q=2, rng=np.random.default_rng(72))


def test_sample_transfer_batch():
    rng = np.random.default_rng(73)
    picks = sample_transfer_batch(10, 16, rng)
    assert len(picks) == 16
    assert all(0 <= i < 10 for i in picks)
    again = sample_transfer_batch(10, 16, np.random.default_rng(73))
    assert picks == again
    with pytest.raises(DatasetError):
        sample_transfer_batch(0, 4, rng)


def _step_fixture(num_classes=2):
    config = BackboneConfig(widths=(4, 6, 8), c_prime=16, num_classes=num_classes)
    model = Backbone(config, np.random.default_rng(74))
    optimizer = torch.optim.Adam(model.trainable(), lr=1e-3)
    rng = np.random.default_rng(75)
    x = torch.from_numpy(rng.random((4, 3, 32, 64)).astype(np.float32))
    return model, optimizer, x


def test_train_step_source_batch_wiring():
    model, optimizer, x = _step_fixture()
    labels = [0, 0, 1, 1]
    baseline = quick_config(P=2, Q=2, resolution=(32, 64))
    with pytest.raises(InvalidInputError):
        train_step(model, optimizer, x, labels, baseline, 2, source_x=x)
    transfer = quick_config(regime="transfer", P=2, Q=2, resolution=(32, 64))
    with pytest.raises(InvalidInputError):
        train_step(model, optimizer, x, labels, transfer, 2)


def test_train_step_breakdown_terms():
    model, optimizer, x = _step_fixture()
    labels = [0, 0, 1, 1]
    baseline = quick_config(P=2, Q=2, resolution=(32, 64))
    out = train_step(model, optimizer, x, labels, baseline, 2)
    assert out.mmd == out.coral == out.l_tran == 0.0
    assert out.total == out.l_tri + out.l_id

    model, optimizer, x = _step_fixture()
    transfer = quick_config(regime="transfer", P=2, Q=2, resolution=(32, 64),
                            gamma=2.0, rho=0.01)
    out = train_step(model, optimizer, x, labels, transfer, 2, source_x=x.flip(0))
    assert out.l_tran != 0.0
    assert abs(out.l_tran - (2.0 * out.mmd + 0.01 * out.coral)) < 1e-6
    assert abs(out.total - (out.l_tri + out.l_id + out.l_tran)) < 1e-9


def test_train_zero_step_size_keeps_initial_parameters(tiny_dataset):
    cfg = quick_config(step_size=0.0, epochs=1)
    result = train(cfg, tiny_dataset)
    seq = np.random.SeedSequence(cfg.seed)
    init_ss = seq.spawn(5)[0]
    expected = Backbone(
        BackboneConfig(widths=cfg.widths, c_prime=cfg.c_prime, num_classes=4),
        np.random.default_rng(init_ss),
    )
    for name in expected.params:
        assert torch.equal(result.model.params[name], expected.params[name])
    assert len(result.loss_log) == math.ceil(12 / (cfg.P * cfg.Q))
    assert all(np.isfinite(row.total) for row in result.loss_log)


def test_train_is_deterministic(tiny_dataset):
    cfg = quick_config(regime="transfer", transfer_type="passenger", epochs=5)
    first = train(cfg, tiny_dataset, tiny_dataset)
    second = train(cfg, tiny_dataset, tiny_dataset)
    assert len(first.loss_log) == 10
    assert first.loss_log == second.loss_log
    for name in first.model.params:
        assert torch.equal(first.model.params[name], second.model.params[name])


def test_train_loss_log_row_count(tiny_dataset):
    cfg = quick_config(epochs=3, P=2, Q=2)
    result = train(cfg, tiny_dataset)
    assert len(result.loss_log) == 3 * math.ceil(12 / 4)


def test_regimes_set_class_counts(tiny_dataset):
    baseline = train(quick_config(epochs=1), tiny_dataset)
    assert baseline.num_classes == 4
    expanded = train(
        quick_config(regime="expanded", transfer_type="passenger", epochs=1),
        tiny_dataset,
        tiny_dataset,
    )
    assert expanded.num_classes == 8
    assert sorted(expanded.label_map.values()) == list(range(8))
    transfer = train(
        quick_config(regime="transfer", transfer_type="passenger", epochs=1),
        tiny_dataset,
        tiny_dataset,
    )
    assert transfer.num_classes == 4


def test_train_loss_decreases_over_epochs(tiny_dataset):
    # Median joint loss over the last quarter of steps beats the first
    # quarter, across three seeds. The classifier head starts near zero
    # logits, so a few hundred steps are needed before the identity term
    # moves; 100 epochs on the tiny pool is 300 steps.
    firsts, lasts = [], []
    for seed in (1, 2, 3):
        cfg = quick_config(seed=seed, epochs=100, P=2, Q=2,
                           widths=(8, 16, 32), c_prime=32,
                           resolution=(32, 64))
        log = train(cfg, tiny_dataset).loss_log
        q = len(log) // 4
        firsts.append(np.median([row.total for row in log[:q]]))
        lasts.append(np.median([row.total for row in log[-q:]]))
    assert np.median(lasts) < np.median(firsts)


def test_train_input_validation(tiny_dataset):
    with pytest.raises(InvalidInputError):
        train(quick_config(regime="transfer", epochs=1), tiny_dataset)
    with pytest.raises(DatasetError):
        train(quick_config(target_type="cargo", epochs=1), tiny_dataset)
    with pytest.raises(DatasetError):
        train(
            quick_config(regime="transfer", transfer_type="cargo", epochs=1),
            tiny_dataset,
            tiny_dataset,
        )
    with pytest.raises(DatasetError):
        train(quick_config(P=5, epochs=1), tiny_dataset)
    with pytest.raises(ShapeError):
        train(quick_config(resolution=(72, 128), epochs=1), tiny_dataset)
    with pytest.raises(ShapeError):
        train(quick_config(r=3, epochs=1), tiny_dataset)


def test_train_writes_checkpoint_and_loss_log(tiny_dataset, tmp_path):
    cfg = quick_config(epochs=1)
    result = train(cfg, tiny_dataset, out_dir=tmp_path)
    assert result.checkpoint_path == tmp_path / "checkpoint.tard"
    assert result.loss_log_path == tmp_path / "loss_log.csv"
    loaded = load_checkpoint(result.checkpoint_path)
    assert loaded.seed == cfg.seed
    assert loaded.epoch == 1
    assert loaded.config_digest == config_digest(cfg)
    for name, arr in result.model.state_arrays().items():
        assert np.array_equal(loaded.arrays[name], arr)
    lines = result.loss_log_path.read_text().strip().splitlines()
    assert lines[0] == "step,l_tri,l_id,mmd,coral,l_tran,total"
    assert len(lines) == len(result.loss_log) + 1


def test_load_split_filters(tiny_dataset):
    train_rows = load_split(tiny_dataset, "warship", "train")
    assert len(train_rows) == 12
    assert {s.split for s in train_rows} == {"train"}
    assert {s.vessel_type for s in train_rows} == {"warship"}
    assert load_split(tiny_dataset, "passenger", "query") == []
