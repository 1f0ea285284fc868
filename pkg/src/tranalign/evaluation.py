"""Query/gallery retrieval evaluation: distance matrix, mAP, CMC, top-k reports.

Everything here runs in float64 numpy with no stabilizing epsilons: identical
images produce bit-identical embeddings, stripe self-distances are exactly
zero, and the metric values can be compared against brute-force references
without tolerance. A query never competes against its own gallery entry; the
metrics skip gallery rows that share the query's path.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import ImageEmbedding
from .backbone import Backbone, backbone_from_arrays
from .checkpoint import Checkpoint, load_checkpoint
from .errors import DatasetError, InvalidInputError, ShapeError
from .imaging import (
    ImageSample,
    SssParams,
    aspect_normalize,
    load_image,
    read_manifest,
    sample_sss_angle,
    sss_augment,
)

log = logging.getLogger(__name__)

RANK_KS = (1, 5, 10, 20)


@dataclass
class Metrics:
    map: float
    rank_k: dict[int, float]
    num_queries: int
    num_excluded: int = 0


@dataclass
class RankedEntry:
    identity_id: int
    distance: float
    correct: bool | None
    path: str


@dataclass
class QueryReport:
    query_identity: int | None
    entries: list[RankedEntry]
    top_k: int
    clamped: bool


def _dp_total_batch(d: np.ndarray) -> np.ndarray:
    """Alignment totals for a (G, r, r) stack, same cell order as dp_align."""
    _, r, _ = d.shape
    acc = np.empty_like(d)
    acc[:, 0, :] = np.add.accumulate(d[:, 0, :], axis=1)
    acc[:, :, 0] = np.add.accumulate(d[:, :, 0], axis=1)
    for i in range(1, r):
        for j in range(1, r):
            acc[:, i, j] = d[:, i, j] + np.minimum(acc[:, i - 1, j], acc[:, i, j - 1])
    return acc[:, -1, -1]


def distance_matrix(
    query_embs: list[ImageEmbedding],
    gallery_embs: list[ImageEmbedding],
    lam: float = 1.0,
) -> np.ndarray:
    """Combined distances for every query/gallery pair as a Q x G float64 array."""
    if not query_embs or not gallery_embs:
        raise DatasetError("need at least one query and one gallery embedding")
    r, c = query_embs[0].stripes.shape
    for e in query_embs + gallery_embs:
        if e.stripes.shape != (r, c):
            raise ShapeError(f"stripe shape {e.stripes.shape} differs from ({r}, {c})")
        if e.f_unit.shape != query_embs[0].f_unit.shape:
            raise ShapeError("global feature dims differ between embeddings")

    gal_stripes = np.stack([e.stripes for e in gallery_embs])  # (G, r, C)
    gal_units = np.stack([e.f_unit for e in gallery_embs])  # (G, C')
    out = np.empty((len(query_embs), len(gallery_embs)), dtype=np.float64)
    for qi, q in enumerate(query_embs):
        diff = q.stripes[None, :, None, :] - gal_stripes[:, None, :, :]
        x = np.sqrt(np.einsum("gijk,gijk->gij", diff, diff))
        d_local = _dp_total_batch(np.tanh(0.5 * x))
        gap = gal_units - q.f_unit[None, :]
        d_global = np.sqrt(np.einsum("gk,gk->g", gap, gap))
        out[qi] = d_local + lam * d_global
    return out


def average_precision(ranked_relevance) -> float:
    """AP over a ranked relevance list: mean of precision at each hit."""
    flags = [bool(v) for v in ranked_relevance]
    total_relevant = sum(flags)
    if total_relevant == 0:
        raise InvalidInputError("average precision needs at least one relevant item")
    hits = 0
    precisions = []
    for rank, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / total_relevant


def retrieval_metrics(
    dists: np.ndarray,
    query_ids,
    gallery_ids,
    query_paths=None,
    gallery_paths=None,
) -> Metrics:
    """mAP and Rank-k from a precomputed query x gallery distance matrix.

    Ties rank by gallery position (stable sort). When paths are given, a
    gallery entry sharing a query's path is skipped for that query (the image
    must not match itself). Queries with no relevant gallery entry left are
    excluded from both mAP and CMC and tallied in num_excluded.
    """
    dists = np.asarray(dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape != (len(query_ids), len(gallery_ids)):
        raise ShapeError(
            f"distance matrix {dists.shape} does not match "
            f"{len(query_ids)} queries x {len(gallery_ids)} gallery entries"
        )
    ap_values = []
    rank_hits = {k: 0 for k in RANK_KS}
    excluded = 0
    for qi, q_id in enumerate(query_ids):
        q_path = None if query_paths is None else query_paths[qi]
        if q_path is not None and gallery_paths is not None:
            keep = [gi for gi, p in enumerate(gallery_paths) if p != q_path]
        else:
            keep = list(range(len(gallery_ids)))
        order = np.argsort(dists[qi, keep], kind="stable")
        flags = [gallery_ids[keep[int(o)]] == q_id for o in order]
        if not any(flags):
            excluded += 1
            continue
        ap_values.append(average_precision(flags))
        for k in RANK_KS:
            if any(flags[:k]):
                rank_hits[k] += 1

    if not ap_values:
        raise DatasetError("every query lacked a relevant gallery image")
    if excluded:
        log.warning("%d queries had no relevant gallery image and were excluded", excluded)
    n = len(ap_values)
    return Metrics(
        map=math.fsum(ap_values) / n,
        rank_k={k: rank_hits[k] / n for k in RANK_KS},
        num_queries=n,
        num_excluded=excluded,
    )


def _resolve_model(model_or_checkpoint) -> Backbone:
    if isinstance(model_or_checkpoint, Backbone):
        return model_or_checkpoint
    if isinstance(model_or_checkpoint, Checkpoint):
        return backbone_from_arrays(model_or_checkpoint.arrays)
    return backbone_from_arrays(load_checkpoint(model_or_checkpoint).arrays)


def _embed_samples(
    model: Backbone,
    samples: list[ImageSample],
    r: int,
    resolution: tuple[int, int],
    interpolation: str,
    sss_test: bool,
    sss_params: SssParams,
    sss_rng: np.random.Generator | None,
) -> list[ImageEmbedding]:
    h, w = resolution
    inputs = []
    for s in samples:
        m = aspect_normalize(s, h, w, interpolation=interpolation)
        if sss_test:
            m = sss_augment(m, sss_params, sample_sss_angle(sss_rng, sss_params))
        inputs.append(m)
    return model.embed(inputs, r)


def evaluate(
    model_or_checkpoint,
    manifest: str | Path,
    lam: float = 1.0,
    sss_test: bool = False,
    r: int = 8,
    resolution: tuple[int, int] = (64, 128),
    interpolation: str = "nearest",
    sss_params: SssParams | None = None,
    sss_seed: int = 0,
) -> Metrics:
    """mAP and Rank-k over the manifest's query/gallery splits.

    When sss_test is set, every test image (gallery first, then queries, in
    manifest order) gets a sway rotation drawn from a stream seeded only by
    sss_seed, so different models face the identical perturbed test set. A
    gallery entry with the query's own path is skipped; queries with no
    relevant gallery image are excluded from both mAP and CMC and tallied.
    """
    model = _resolve_model(model_or_checkpoint)
    samples = read_manifest(manifest)
    queries = [s for s in samples if s.split == "query"]
    gallery = [s for s in samples if s.split == "gallery"]
    if not queries or not gallery:
        raise DatasetError("manifest needs non-empty query and gallery splits")

    sss_params = sss_params or SssParams()
    sss_rng = np.random.default_rng(np.random.SeedSequence([sss_seed, 401]))
    gallery_embs = _embed_samples(
        model, gallery, r, resolution, interpolation, sss_test, sss_params, sss_rng
    )
    query_embs = _embed_samples(
        model, queries, r, resolution, interpolation, sss_test, sss_params, sss_rng
    )
    dists = distance_matrix(query_embs, gallery_embs, lam)
    return retrieval_metrics(
        dists,
        [q.identity_id for q in queries],
        [g.identity_id for g in gallery],
        [q.source_path for q in queries],
        [g.source_path for g in gallery],
    )


def query_topk(
    model_or_checkpoint,
    image,
    gallery_manifest: str | Path,
    k: int,
    lam: float = 1.0,
    r: int = 8,
    resolution: tuple[int, int] = (64, 128),
    interpolation: str = "nearest",
    query_id: int | None = None,
) -> QueryReport:
    """Rank the gallery against one query image and keep the top k entries.

    Correctness flags are filled in when the query identity is known (an
    ImageSample query, or query_id passed for an image file).
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    model = _resolve_model(model_or_checkpoint)
    gallery = [s for s in read_manifest(gallery_manifest) if s.split == "gallery"]
    if not gallery:
        raise DatasetError(f"no gallery images in {gallery_manifest}")

    if isinstance(image, ImageSample):
        sample = image
        known_id = sample.identity_id if query_id is None else query_id
    else:
        sample = ImageSample(
            pixels=load_image(image),
            identity_id=max(0, query_id or 0),
            vessel_type=gallery[0].vessel_type,
            split="query",
            source_path=str(image),
        )
        known_id = query_id

    h, w = resolution
    q_emb = model.embed([aspect_normalize(sample, h, w, interpolation=interpolation)], r)
    g_embs = model.embed(
        [aspect_normalize(g, h, w, interpolation=interpolation) for g in gallery], r
    )
    row = distance_matrix(q_emb, g_embs, lam)[0]

    clamped = k > len(gallery)
    if clamped:
        log.warning("k=%d exceeds gallery size %d; clamping", k, len(gallery))
        k = len(gallery)
    order = np.argsort(row, kind="stable")[:k]
    entries = [
        RankedEntry(
            identity_id=gallery[int(gi)].identity_id,
            distance=float(row[int(gi)]),
            correct=None if known_id is None else gallery[int(gi)].identity_id == known_id,
            path=gallery[int(gi)].source_path,
        )
        for gi in order
    ]
    return QueryReport(query_identity=known_id, entries=entries, top_k=k, clamped=clamped)
