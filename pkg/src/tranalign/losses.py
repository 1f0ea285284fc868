"""Training losses: smoothed identity loss, hard-mined triplet, MMD, CORAL.

All losses are torch expressions so gradients flow to whatever produced the
inputs. Scalar helpers accept numpy too and hand back plain floats in that
case. Tie handling is pinned down everywhere a max/min appears: the first
(lowest-index) extremum is selected, and gradients follow that element only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import (
    BatchCompositionError,
    InvalidInputError,
    NumericError,
    ShapeError,
)


@dataclass
class IdLossConfig:
    epsilon: float = 0.1
    M: int = 2

    def __post_init__(self):
        if not (0.0 <= self.epsilon < 1.0):
            raise InvalidInputError(f"epsilon must be in [0,1), got {self.epsilon}")
        if self.epsilon > 0.0 and self.M < 2:
            raise InvalidInputError("label smoothing needs at least 2 classes")
        if self.M < 1:
            raise InvalidInputError(f"M must be >= 1, got {self.M}")


@dataclass
class TriHardConfig:
    eta: float = 0.3
    lam: float = 1.0
    P: int = 4
    Q: int = 4

    def __post_init__(self):
        if self.eta < 0.0:
            raise InvalidInputError(f"margin eta must be >= 0, got {self.eta}")
        if self.P < 2 or self.Q < 2:
            raise InvalidInputError("P and Q must both be >= 2")


@dataclass
class TransferConfig:
    gamma: float = 1.0
    rho: float = 0.001
    sigma: float | None = None  # None selects the median heuristic

    def __post_init__(self):
        if self.gamma < 0.0 or self.rho < 0.0:
            raise InvalidInputError("gamma and rho must be >= 0")
        if self.sigma is not None and self.sigma <= 0.0:
            raise InvalidInputError(f"fixed sigma must be > 0, got {self.sigma}")


@dataclass
class DomainBatch:
    """N x C' global features from one domain (source or target)."""

    features: torch.Tensor
    domain: str = "source"

    def __post_init__(self):
        if isinstance(self.features, np.ndarray):
            self.features = torch.from_numpy(np.asarray(self.features, dtype=np.float64))
        if self.features.dim() != 2:
            raise ShapeError(f"expected N x C' features, got {tuple(self.features.shape)}")
        if not torch.isfinite(self.features).all():
            raise NumericError(f"{self.domain} batch contains non-finite features")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass
class LossBreakdown:
    l_tri: float
    l_id: float
    mmd: float
    coral: float
    l_tran: float
    total: float


def _as_labels(labels, n: int) -> torch.Tensor:
    t = torch.as_tensor(labels, dtype=torch.long)
    if t.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {tuple(t.shape)}")
    return t


def id_loss(logits: torch.Tensor, labels, cfg: IdLossConfig) -> torch.Tensor:
    """Cross entropy against smoothed targets: 1-eps on the true class,
    eps/(M-1) spread over the rest, averaged over the batch."""
    if isinstance(logits, np.ndarray):
        logits = torch.from_numpy(np.asarray(logits, dtype=np.float64))
    if logits.dim() != 2 or logits.shape[1] != cfg.M:
        raise ShapeError(f"expected N x {cfg.M} logits, got {tuple(logits.shape)}")
    n = logits.shape[0]
    lab = _as_labels(labels, n)
    if lab.min() < 0 or lab.max() >= cfg.M:
        raise InvalidInputError(f"labels must lie in [0, {cfg.M})")
    log_p = torch.log_softmax(logits, dim=1)
    if cfg.epsilon > 0.0:
        q = torch.full_like(log_p, cfg.epsilon / (cfg.M - 1))
        q[torch.arange(n), lab] = 1.0 - cfg.epsilon
    else:
        q = torch.zeros_like(log_p)
        q[torch.arange(n), lab] = 1.0
    return -(q * log_p).sum(dim=1).mean()


def trihard_loss(pair_distances: torch.Tensor, labels, cfg: TriHardConfig) -> torch.Tensor:
    """Hard-mined triplet hinge, averaged over all P*Q anchors.

    Hardest positive is the farthest same-label sample (self excluded),
    hardest negative the nearest different-label sample.
    """
    if isinstance(pair_distances, np.ndarray):
        pair_distances = torch.from_numpy(np.asarray(pair_distances, dtype=np.float64))
    n = pair_distances.shape[0]
    if pair_distances.dim() != 2 or pair_distances.shape[1] != n:
        raise ShapeError(f"expected square distance matrix, got {tuple(pair_distances.shape)}")
    if n != cfg.P * cfg.Q:
        raise BatchCompositionError(f"batch of {n} does not match P*Q = {cfg.P * cfg.Q}")
    lab = _as_labels(labels, n)
    same = lab.unsqueeze(0) == lab.unsqueeze(1)
    eye = torch.eye(n, dtype=torch.bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    if not pos_mask.any(dim=1).all():
        raise BatchCompositionError("an anchor has no positive in the batch")
    if not neg_mask.any(dim=1).all():
        raise BatchCompositionError("an anchor has no negative in the batch")

    neg_inf = torch.finfo(pair_distances.dtype).min
    pos_inf = torch.finfo(pair_distances.dtype).max
    # argmax/argmin return the first extremum, so ties pick the lowest index
    # and the gradient flows through that single entry.
    hp_idx = pair_distances.masked_fill(~pos_mask, neg_inf).argmax(dim=1)
    hn_idx = pair_distances.masked_fill(~neg_mask, pos_inf).argmin(dim=1)
    rows = torch.arange(n)
    hardest_pos = pair_distances[rows, hp_idx]
    hardest_neg = pair_distances[rows, hn_idx]
    return torch.relu(hardest_pos - hardest_neg + cfg.eta).mean()


def rbf_kernel(s, t, sigma: float):
    """Gaussian kernel exp(-||s-t||^2 / (2 sigma^2)); floats in, float out."""
    if sigma <= 0.0:
        raise InvalidInputError(f"sigma must be > 0, got {sigma}")
    numpy_in = isinstance(s, np.ndarray) and isinstance(t, np.ndarray)
    s_t = torch.as_tensor(s, dtype=torch.float64) if not isinstance(s, torch.Tensor) else s
    t_t = torch.as_tensor(t, dtype=torch.float64) if not isinstance(t, torch.Tensor) else t
    if s_t.shape != t_t.shape:
        raise ShapeError(f"kernel arguments differ in shape: {tuple(s_t.shape)} vs {tuple(t_t.shape)}")
    k = torch.exp(-((s_t - t_t) ** 2).sum() / (2.0 * sigma * sigma))
    return float(k) if numpy_in else k


def _kernel_matrix(a: torch.Tensor, b: torch.Tensor, sigma) -> torch.Tensor:
    sq = torch.cdist(a, b, p=2.0, compute_mode="donot_use_mm_for_euclid_dist") ** 2
    return torch.exp(-sq / (2.0 * sigma * sigma))


def resolve_sigma(s: torch.Tensor, t: torch.Tensor, cfg: TransferConfig) -> torch.Tensor:
    """Kernel bandwidth: fixed when configured, else the median pairwise
    distance over the pooled rows (lower median, floored, gradient-detached)."""
    if cfg.sigma is not None:
        return torch.tensor(float(cfg.sigma), dtype=s.dtype)
    pooled = torch.cat([s, t], dim=0).detach()
    dists = torch.pdist(pooled)
    sigma = dists.median() if dists.numel() else torch.tensor(0.0, dtype=s.dtype)
    return sigma.clamp_min(1e-6)


def mmd(source: DomainBatch, target: DomainBatch, cfg: TransferConfig) -> torch.Tensor:
    """Kernel two-sample statistic between equal-size source/target batches."""
    s, t = source.features, target.features
    if source.n != target.n:
        raise BatchCompositionError(f"batch sizes differ: {source.n} vs {target.n}")
    if s.shape[1] != t.shape[1]:
        raise ShapeError(f"feature dims differ: {s.shape[1]} vs {t.shape[1]}")
    sigma = resolve_sigma(s, t, cfg)
    n_s, n_t = source.n, target.n
    k_ss = _kernel_matrix(s, s, sigma).sum() / (n_s * n_s)
    k_tt = _kernel_matrix(t, t, sigma).sum() / (n_t * n_t)
    k_st = _kernel_matrix(s, t, sigma).sum() / (n_s * n_t)
    return k_ss + k_tt - 2.0 * k_st


def _covariance(d: torch.Tensor) -> torch.Tensor:
    n = d.shape[0]
    col_sum = d.sum(dim=0, keepdim=True)
    return (d.T @ d - (col_sum.T @ col_sum) / n) / (n - 1)


def coral(source: DomainBatch, target: DomainBatch) -> torch.Tensor:
    """Squared Frobenius gap between domain covariances, scaled by 1/(4 C'^2)."""
    s, t = source.features, target.features
    if source.n < 2 or target.n < 2:
        raise BatchCompositionError("covariance needs at least 2 samples per domain")
    if s.shape[1] != t.shape[1]:
        raise ShapeError(f"feature dims differ: {s.shape[1]} vs {t.shape[1]}")
    c = s.shape[1]
    gap = _covariance(s) - _covariance(t)
    return (gap * gap).sum() / (4.0 * c * c)


def transfer_loss(source: DomainBatch, target: DomainBatch, cfg: TransferConfig) -> torch.Tensor:
    """gamma * MMD + rho * CORAL."""
    return cfg.gamma * mmd(source, target, cfg) + cfg.rho * coral(source, target)


def joint_loss(
    l_tri: float,
    l_id: float,
    l_tran: float,
    mmd_value: float = 0.0,
    coral_value: float = 0.0,
) -> LossBreakdown:
    """Unweighted sum of the three training terms, with the breakdown kept."""
    parts = {"l_tri": l_tri, "l_id": l_id, "l_tran": l_tran}
    for name, value in parts.items():
        if not np.isfinite(value):
            raise NumericError(f"{name} is not finite: {value}")
    return LossBreakdown(
        l_tri=float(l_tri),
        l_id=float(l_id),
        mmd=float(mmd_value),
        coral=float(coral_value),
        l_tran=float(l_tran),
        total=float(l_tri) + float(l_id) + float(l_tran),
    )
