"""PK batch sampling, the optimization loop, and the three training regimes.

Regimes:
  baseline  only target-type train images, triplet + identity loss.
  expanded  transfer images are appended to the training set with their own
            identity labels, so the classifier grows to cover both types.
  transfer  transfer images never get labels; they only enter through the
            distribution-alignment loss on global features.

All randomness flows from numpy streams spawned off the run seed (model init,
PK sampling, sway angles, transfer sampling each get their own child), so a
regime that ignores a stream does not disturb the others.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .align import pairwise_dtri_t, stripe_pool_t
from .backbone import Backbone, BackboneConfig
from .checkpoint import save_checkpoint
from .config import TrainConfig, config_digest
from .errors import DatasetError, InvalidInputError, NumericError, ShapeError
from .imaging import (
    ImageSample,
    ModelInput,
    SssParams,
    aspect_normalize,
    read_manifest,
    sample_sss_angle,
    sss_augment,
)
from .losses import (
    DomainBatch,
    IdLossConfig,
    LossBreakdown,
    TriHardConfig,
    TransferConfig,
    coral,
    id_loss,
    joint_loss,
    mmd,
    trihard_loss,
)

log = logging.getLogger(__name__)


@dataclass
class PkBatch:
    """P identities x Q images, with indices into the originating sample list."""

    samples: list[ImageSample]
    indices: list[int]
    labels: list[int]
    with_replacement: bool


def sample_pk_batch(samples: list[ImageSample], P: int, Q: int, rng: np.random.Generator) -> PkBatch:
    """Draw P distinct identities and Q images each.

    Identities with fewer than Q images are sampled with replacement and the
    batch is flagged; fewer than P identities in the pool is an error.
    """
    by_id: dict[int, list[int]] = {}
    for idx, s in enumerate(samples):
        by_id.setdefault(s.identity_id, []).append(idx)
    ids = sorted(by_id)
    if len(ids) < P:
        raise DatasetError(f"need at least {P} identities, pool has {len(ids)}")
    chosen = rng.choice(len(ids), size=P, replace=False)
    indices: list[int] = []
    labels: list[int] = []
    flagged = False
    for slot in chosen:
        identity = ids[int(slot)]
        pool = by_id[identity]
        if len(pool) >= Q:
            picks = rng.choice(len(pool), size=Q, replace=False)
        else:
            picks = rng.choice(len(pool), size=Q, replace=True)
            flagged = True
        indices.extend(pool[int(p)] for p in picks)
        labels.extend([identity] * Q)
    return PkBatch(
        samples=[samples[i] for i in indices],
        indices=indices,
        labels=labels,
        with_replacement=flagged,
    )


def sample_transfer_batch(n_source: int, n_s: int, rng: np.random.Generator) -> list[int]:
    """Uniform draw (with replacement) of n_s indices from the source pool."""
    if n_source == 0:
        raise DatasetError("transfer source pool is empty")
    return [int(i) for i in rng.integers(0, n_source, size=n_s)]


def train_step(
    model: Backbone,
    optimizer: torch.optim.Optimizer,
    target_x: torch.Tensor,
    labels,
    cfg: TrainConfig,
    num_classes: int,
    source_x: torch.Tensor | None = None,
) -> LossBreakdown:
    """One forward/backward/update over a PK batch (plus a source batch when
    the regime transfers); returns the per-term loss breakdown."""
    if (source_x is not None) != (cfg.regime == "transfer"):
        raise InvalidInputError("source batch is required exactly when regime is 'transfer'")

    fm = model.forward(target_x)
    f, f_unit, logits, _ = model.global_head(fm)
    stripes = stripe_pool_t(fm, cfg.r)
    dtri = pairwise_dtri_t(stripes, f_unit, cfg.lam)
    l_tri = trihard_loss(dtri, labels, TriHardConfig(eta=cfg.eta, lam=cfg.lam, P=cfg.P, Q=cfg.Q))
    l_id = id_loss(logits, labels, IdLossConfig(epsilon=cfg.epsilon, M=num_classes))

    if source_x is not None:
        fm_s = model.forward(source_x)
        f_s, _, _, _ = model.global_head(fm_s)
        tcfg = TransferConfig(gamma=cfg.gamma, rho=cfg.rho, sigma=cfg.sigma)
        mmd_t = mmd(DomainBatch(f_s, "source"), DomainBatch(f, "target"), tcfg)
        coral_t = coral(DomainBatch(f_s, "source"), DomainBatch(f, "target"))
        l_tran = cfg.gamma * mmd_t + cfg.rho * coral_t
        mmd_v, coral_v = mmd_t.detach().item(), coral_t.detach().item()
    else:
        l_tran = torch.zeros((), dtype=f.dtype)
        mmd_v, coral_v = 0.0, 0.0

    total = l_tri + l_id + l_tran
    tri_v, id_v, tran_v = (t.detach().item() for t in (l_tri, l_id, l_tran))
    if not torch.isfinite(total):
        raise NumericError(f"non-finite loss: l_tri={tri_v}, l_id={id_v}, l_tran={tran_v}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return joint_loss(tri_v, id_v, tran_v, mmd_v, coral_v)


@dataclass
class TrainOutput:
    model: Backbone
    loss_log: list[LossBreakdown]
    num_classes: int
    label_map: dict[int, int]
    checkpoint_path: Path | None
    loss_log_path: Path | None


def _letterbox_all(samples: list[ImageSample], cfg: TrainConfig) -> list[ModelInput]:
    h, w = cfg.resolution
    return [aspect_normalize(s, h, w, interpolation=cfg.interpolation) for s in samples]


def _augmented_tensor(
    inputs: list[ModelInput],
    indices: list[int],
    apply_sss: bool,
    params: SssParams,
    rng: np.random.Generator,
) -> torch.Tensor:
    tensors = []
    for idx in indices:
        m = inputs[idx]
        if apply_sss:
            m = sss_augment(m, params, sample_sss_angle(rng, params))
        tensors.append(m.tensor)
    return torch.from_numpy(np.stack(tensors))


def load_split(manifest: str | Path, vessel_type: str, split: str) -> list[ImageSample]:
    return [
        s for s in read_manifest(manifest) if s.vessel_type == vessel_type and s.split == split
    ]


def train(
    cfg: TrainConfig,
    train_manifest: str | Path,
    transfer_manifest: str | Path | None = None,
    out_dir: str | Path | None = None,
) -> TrainOutput:
    """Full training run: returns the model and writes checkpoint + loss CSV
    under out_dir when given."""
    target_train = load_split(train_manifest, cfg.target_type, "train")
    if not target_train:
        raise DatasetError(f"no train images of type {cfg.target_type!r} in {train_manifest}")

    source_pool: list[ImageSample] = []
    if cfg.regime in ("expanded", "transfer"):
        if transfer_manifest is None:
            raise InvalidInputError(f"regime {cfg.regime!r} needs a transfer manifest")
        source_pool = load_split(transfer_manifest, cfg.transfer_type, "train")
        if not source_pool:
            raise DatasetError(
                f"no train images of type {cfg.transfer_type!r} in {transfer_manifest}"
            )

    if cfg.regime == "expanded":
        train_set = target_train + source_pool
    else:
        train_set = target_train

    label_map = {identity: i for i, identity in enumerate(sorted({s.identity_id for s in train_set}))}
    num_classes = len(label_map)
    if num_classes < cfg.P:
        raise DatasetError(f"P={cfg.P} exceeds the {num_classes} available identities")

    h, w = cfg.resolution
    stride = 2 ** len(cfg.widths)
    if h % stride or w % stride:
        raise ShapeError(f"resolution {h}x{w} not divisible by total stride {stride}")
    if (h // stride) % cfg.r:
        raise ShapeError(
            f"feature height {h // stride} not divisible by stripe count {cfg.r}"
        )

    seq = np.random.SeedSequence(cfg.seed)
    init_ss, pk_ss, sss_train_ss, transfer_ss, sss_transfer_ss = seq.spawn(5)
    init_rng = np.random.default_rng(init_ss)
    pk_rng = np.random.default_rng(pk_ss)
    sss_train_rng = np.random.default_rng(sss_train_ss)
    transfer_rng = np.random.default_rng(transfer_ss)
    sss_transfer_rng = np.random.default_rng(sss_transfer_ss)

    model = Backbone(
        BackboneConfig(widths=cfg.widths, c_prime=cfg.c_prime, num_classes=num_classes),
        init_rng,
    )
    optimizer = torch.optim.Adam(model.trainable(), lr=cfg.step_size, betas=(0.9, 0.999))

    train_inputs = _letterbox_all(train_set, cfg)
    source_inputs = _letterbox_all(source_pool, cfg) if cfg.regime == "transfer" else []
    sss = SssParams(angle_min_deg=cfg.angle_min_deg, angle_max_deg=cfg.angle_max_deg)

    steps_per_epoch = math.ceil(len(train_set) / (cfg.P * cfg.Q))
    loss_log: list[LossBreakdown] = []
    replacement_warned = False
    for epoch in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            batch = sample_pk_batch(train_set, cfg.P, cfg.Q, pk_rng)
            if batch.with_replacement and not replacement_warned:
                log.warning("some identities have fewer than Q=%d images; sampling with replacement", cfg.Q)
                replacement_warned = True
            target_x = _augmented_tensor(
                train_inputs, batch.indices, cfg.sss_train, sss, sss_train_rng
            )
            labels = [label_map[i] for i in batch.labels]
            source_x = None
            if cfg.regime == "transfer":
                src_idx = sample_transfer_batch(len(source_pool), cfg.P * cfg.Q, transfer_rng)
                source_x = _augmented_tensor(
                    source_inputs, src_idx, cfg.sss_transfer, sss, sss_transfer_rng
                )
            loss_log.append(
                train_step(model, optimizer, target_x, labels, cfg, num_classes, source_x)
            )
        log.info("epoch %d/%d total=%.4f", epoch + 1, cfg.epochs, loss_log[-1].total)

    checkpoint_path = loss_log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_dir / "checkpoint.tard"
        save_checkpoint(
            checkpoint_path,
            model.state_arrays(),
            config_digest(cfg),
            seed=cfg.seed,
            epoch=cfg.epochs,
        )
        from .reports import write_loss_log

        loss_log_path = out_dir / "loss_log.csv"
        write_loss_log(loss_log_path, loss_log)

    return TrainOutput(
        model=model,
        loss_log=loss_log,
        num_classes=num_classes,
        label_map=label_map,
        checkpoint_path=checkpoint_path,
        loss_log_path=loss_log_path,
    )
