"""Stripe compression, local alignment distances, and the combined pair distance.

Two parallel implementations live here on purpose. The numpy functions are the
library surface: float64, no epsilons, bit-reproducible, used for evaluation
and oracle-style checks. The torch functions are the training path: batched,
differentiable, with tiny epsilons guarding sqrt at zero distance. Both share
the same recurrence and tie-break convention (on a tie, the alignment path and
the gradient follow the step that increments the second index).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericError, ShapeError

EPS = 1e-12


@dataclass
class StripeMatrix:
    """r stripe descriptors, each l2-normalized (all-zero rows are flagged)."""

    stripes: np.ndarray
    zero_flags: np.ndarray

    @property
    def r(self) -> int:
        return self.stripes.shape[0]


@dataclass
class AlignmentResult:
    dist_matrix: np.ndarray
    total: float
    path: list[tuple[int, int]]


@dataclass
class PairDistance:
    d_global: float
    d_local: float
    d_total: float
    lam: float


@dataclass
class ImageEmbedding:
    """Everything retrieval needs for one image: stripes plus the global vector."""

    stripes: np.ndarray
    f: np.ndarray
    f_unit: np.ndarray
    zero_flag: bool = False


def compress_stripes(fm: np.ndarray, r: int, reduction: np.ndarray | None = None) -> StripeMatrix:
    """Pool a C x H x W map into r band means, optionally project, l2-normalize.

    Each stripe is the mean over an H/r x W band per channel. A reduction
    matrix of shape (C_l, C), when given, is applied before normalization.
    """
    if fm.ndim != 3:
        raise ShapeError(f"expected C x H x W feature map, got shape {fm.shape}")
    c, h, _ = fm.shape
    if r < 1 or h % r != 0:
        raise ShapeError(f"feature height {h} not divisible by stripe count {r}")
    bands = fm.astype(np.float64).reshape(c, r, h // r, -1).mean(axis=(2, 3))
    stripes = bands.T
    if reduction is not None:
        if reduction.shape[1] != c:
            raise ShapeError(f"reduction expects {reduction.shape[1]} channels, map has {c}")
        stripes = stripes @ reduction.astype(np.float64).T
    norms = np.linalg.norm(stripes, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return StripeMatrix(stripes=stripes / safe[:, None], zero_flags=zero)


def local_distance(la: np.ndarray, lb: np.ndarray) -> float:
    """Eq-style bounded distance (e^x - 1)/(e^x + 1) of the Euclidean gap x."""
    la = np.asarray(la, dtype=np.float64)
    lb = np.asarray(lb, dtype=np.float64)
    if la.shape != lb.shape:
        raise ShapeError(f"stripe dims differ: {la.shape} vs {lb.shape}")
    x = float(np.linalg.norm(la - lb))
    return float(np.tanh(0.5 * x))


def local_dist_matrix(sa: StripeMatrix | np.ndarray, sb: StripeMatrix | np.ndarray) -> np.ndarray:
    """All stripe-pair distances between two images as an r x r float64 matrix."""
    a = sa.stripes if isinstance(sa, StripeMatrix) else np.asarray(sa, dtype=np.float64)
    b = sb.stripes if isinstance(sb, StripeMatrix) else np.asarray(sb, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"stripe matrices disagree: {a.shape} vs {b.shape}")
    diff = a[:, None, :] - b[None, :, :]
    x = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return np.tanh(0.5 * x)


def dp_align(dist_matrix: np.ndarray) -> AlignmentResult:
    """Minimum-total monotone alignment through an r x r distance matrix.

    First row and column accumulate; every interior cell adds its distance to
    the smaller of the cell above and the cell to the left. The path is
    recovered by backtracking from the far corner; when both predecessors tie,
    the step that increments the column index wins.
    """
    d = np.asarray(dist_matrix, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ShapeError(f"alignment needs a square matrix, got {d.shape}")
    if not np.isfinite(d).all():
        raise NumericError("alignment matrix contains non-finite entries")
    r = d.shape[0]
    acc = np.empty((r, r), dtype=np.float64)
    acc[0, :] = np.add.accumulate(d[0, :])
    acc[:, 0] = np.add.accumulate(d[:, 0])
    for i in range(1, r):
        for j in range(1, r):
            acc[i, j] = d[i, j] + min(acc[i - 1, j], acc[i, j - 1])

    path = [(r - 1, r - 1)]
    i, j = r - 1, r - 1
    while (i, j) != (0, 0):
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        elif acc[i, j - 1] <= acc[i - 1, j]:
            j -= 1
        else:
            i -= 1
        path.append((i, j))
    path.reverse()
    return AlignmentResult(dist_matrix=d, total=float(acc[r - 1, r - 1]), path=path)


def global_distance(fa_unit: np.ndarray, fb_unit: np.ndarray) -> float:
    """Euclidean distance between two (unit-normalized) global vectors."""
    fa = np.asarray(fa_unit, dtype=np.float64)
    fb = np.asarray(fb_unit, dtype=np.float64)
    if fa.shape != fb.shape:
        raise ShapeError(f"global dims differ: {fa.shape} vs {fb.shape}")
    return float(np.linalg.norm(fa - fb))


def pair_distance(emb_a: ImageEmbedding, emb_b: ImageEmbedding, lam: float = 1.0) -> PairDistance:
    """Combined distance: aligned local total plus lam times the global gap.

    lam defaults to 1 so the two parts weigh equally.
    """
    if emb_a.stripes.shape != emb_b.stripes.shape:
        raise ShapeError(
            f"stripe shapes differ: {emb_a.stripes.shape} vs {emb_b.stripes.shape}"
        )
    d_local = dp_align(local_dist_matrix(emb_a.stripes, emb_b.stripes)).total
    d_global = global_distance(emb_a.f_unit, emb_b.f_unit)
    return PairDistance(
        d_global=d_global,
        d_local=d_local,
        d_total=d_local + lam * d_global,
        lam=lam,
    )


# --- torch training path -----------------------------------------------------


def stripe_pool_t(fm: torch.Tensor, r: int) -> torch.Tensor:
    """Batched band pooling plus l2 normalization: (B,C,H,W) -> (B,r,C)."""
    if fm.dim() != 4:
        raise ShapeError(f"expected (B,C,H,W), got {tuple(fm.shape)}")
    b, c, h, w = fm.shape
    if r < 1 or h % r != 0:
        raise ShapeError(f"feature height {h} not divisible by stripe count {r}")
    stripes = fm.reshape(b, c, r, h // r, w).mean(dim=(3, 4)).permute(0, 2, 1)
    norms = stripes.norm(dim=2, keepdim=True).clamp_min(EPS)
    return stripes / norms


def _pairwise_sq(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    sq = (a * a).sum(-1).unsqueeze(-1) + (b * b).sum(-1).unsqueeze(-2) - 2.0 * (a @ b.transpose(-1, -2))
    return sq.clamp_min(0.0)


def dp_total_t(d: torch.Tensor) -> torch.Tensor:
    """Alignment total for a (..., r, r) stack of distance matrices.

    Same recurrence as dp_align; where both predecessors tie, the gradient
    follows the left cell, matching the column-incrementing path preference.
    """
    if d.shape[-1] != d.shape[-2]:
        raise ShapeError(f"alignment needs square matrices, got {tuple(d.shape)}")
    r = d.shape[-1]
    row = [d[..., 0, 0]]
    for j in range(1, r):
        row.append(row[-1] + d[..., 0, j])
    for i in range(1, r):
        cells = []
        for j in range(r):
            top = row[j]
            if j == 0:
                best = top
            else:
                left = cells[-1]
                best = torch.where(left <= top, left, top)
            cells.append(best + d[..., i, j])
        row = cells
    return row[-1]


def pairwise_dtri_t(stripes: torch.Tensor, f_unit: torch.Tensor, lam: float) -> torch.Tensor:
    """Full B x B combined-distance matrix for a batch, differentiable.

    stripes: (B, r, C) normalized stripe stacks; f_unit: (B, C') normalized
    global vectors. The sqrt at zero distance is stabilized with a small
    epsilon so gradients stay finite on the diagonal cells. Diagonal totals
    are the self-alignment cost (the path still crosses between neighboring
    stripes), which the triplet loss masks out anyway.
    """
    if stripes.dim() != 3 or f_unit.dim() != 2 or stripes.shape[0] != f_unit.shape[0]:
        raise ShapeError(
            f"batch shapes disagree: stripes {tuple(stripes.shape)}, f_unit {tuple(f_unit.shape)}"
        )
    b, r, _ = stripes.shape
    sa = stripes.unsqueeze(1).unsqueeze(3)  # (B,1,r,1,C)
    sb = stripes.unsqueeze(0).unsqueeze(2)  # (1,B,1,r,C)
    sq = ((sa - sb) ** 2).sum(-1)  # (B,B,r,r)
    x = torch.sqrt(sq + EPS)
    d_local = dp_total_t(torch.tanh(0.5 * x))
    d_global = torch.sqrt(_pairwise_sq(f_unit, f_unit) + EPS)
    return d_local + lam * d_global
