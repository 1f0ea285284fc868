"""Stripe pooling, bounded local distances, and the alignment recurrence."""
import itertools
import math

import numpy as np
import pytest
import torch

from tranalign import (
    NumericError,
    ShapeError,
    compress_stripes,
    dp_align,
    global_distance,
    local_dist_matrix,
    local_distance,
    pair_distance,
)
from tranalign.align import ImageEmbedding, dp_total_t, pairwise_dtri_t, stripe_pool_t


def brute_force_min_path(d: np.ndarray) -> float:
    """Minimum over all monotone corner-to-corner paths, summed sequentially."""
    r = d.shape[0]
    best = math.inf
    for down_steps in itertools.combinations(range(2 * r - 2), r - 1):
        i = j = 0
        cells = [(0, 0)]
        for step in range(2 * r - 2):
            if step in down_steps:
                i += 1
            else:
                j += 1
            cells.append((i, j))
        total = np.add.accumulate(np.array([d[c] for c in cells]))[-1]
        best = min(best, total)
    return float(best)


def test_local_distance_matches_exponential_form():
    rng = np.random.default_rng(41)
    for _ in range(100):
        la, lb = rng.normal(size=(2, 16))
        x = float(np.linalg.norm(la - lb))
        expected = (math.exp(x) - 1.0) / (math.exp(x) + 1.0)
        assert abs(local_distance(la, lb) - expected) < 1e-12


def test_local_distance_bounds_and_identity():
    rng = np.random.default_rng(42)
    la = rng.normal(size=8)
    assert local_distance(la, la) == 0.0
    assert local_distance(la, la + 12.0) < 1.0
    # Far enough apart, tanh saturates to exactly 1.0 in float64.
    assert local_distance(la, la + 1e6) == 1.0
    with pytest.raises(ShapeError):
        local_distance(np.zeros(4), np.zeros(5))


def test_local_dist_matrix_matches_pairwise_calls():
    rng = np.random.default_rng(43)
    a = rng.normal(size=(5, 12))
    b = rng.normal(size=(5, 12))
    matrix = local_dist_matrix(a, b)
    for i in range(5):
        for j in range(5):
            assert abs(matrix[i, j] - local_distance(a[i], b[j])) < 1e-12


def test_compress_stripes_band_means():
    rng = np.random.default_rng(44)
    fm = rng.normal(size=(3, 6, 4))
    result = compress_stripes(fm, 2)
    for band in range(2):
        raw = fm[:, band * 3:(band + 1) * 3, :].mean(axis=(1, 2))
        expected = raw / np.linalg.norm(raw)
        assert np.allclose(result.stripes[band], expected, atol=1e-12)
    assert not result.zero_flags.any()


def test_compress_stripes_reduction_and_zero_flags():
    fm = np.zeros((2, 4, 3))
    fm[:, 2:, :] = 1.0
    reduction = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    result = compress_stripes(fm, 2, reduction=reduction)
    assert result.zero_flags.tolist() == [True, False]
    assert np.all(result.stripes[0] == 0.0)
    reduced = reduction @ np.array([1.0, 1.0])
    assert np.allclose(result.stripes[1], reduced / np.linalg.norm(reduced), atol=1e-12)


def test_compress_stripes_validation():
    with pytest.raises(ShapeError):
        compress_stripes(np.zeros((4, 4)), 2)
    with pytest.raises(ShapeError):
        compress_stripes(np.zeros((2, 6, 3)), 4)
    with pytest.raises(ShapeError):
        compress_stripes(np.zeros((2, 4, 3)), 2, reduction=np.zeros((3, 5)))


def test_dp_align_matches_brute_force():
    rng = np.random.default_rng(45)
    for r in (2, 3, 4, 5):
        for _ in range(30):
            d = np.tanh(0.5 * rng.random(size=(r, r)))
            result = dp_align(d)
            assert result.total == brute_force_min_path(d)


def test_dp_align_path_is_monotone_and_sums_to_total():
    rng = np.random.default_rng(46)
    for _ in range(30):
        d = rng.random(size=(6, 6))
        result = dp_align(d)
        assert result.path[0] == (0, 0)
        assert result.path[-1] == (5, 5)
        for (i0, j0), (i1, j1) in zip(result.path, result.path[1:]):
            assert (i1 - i0, j1 - j0) in ((0, 1), (1, 0))
        total = np.add.accumulate(np.array([d[c] for c in result.path]))[-1]
        assert result.total == total


def test_dp_align_tie_break_prefers_column_step():
    result = dp_align(np.ones((3, 3)))
    assert result.path == [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)]
    assert result.total == 5.0


def test_dp_align_validation():
    with pytest.raises(ShapeError):
        dp_align(np.zeros((3, 4)))
    bad = np.ones((3, 3))
    bad[1, 1] = np.nan
    with pytest.raises(NumericError):
        dp_align(bad)


def test_dp_total_t_matches_numpy_recurrence():
    rng = np.random.default_rng(47)
    stack = rng.random(size=(10, 8, 8))
    totals = dp_total_t(torch.from_numpy(stack))
    for k in range(10):
        assert totals[k].item() == dp_align(stack[k]).total


def test_dp_total_t_rejects_non_square():
    with pytest.raises(ShapeError):
        dp_total_t(torch.zeros(2, 3, 4))


def test_stripe_pool_t_matches_numpy_compression():
    rng = np.random.default_rng(48)
    batch = rng.normal(size=(3, 5, 8, 6))
    pooled = stripe_pool_t(torch.from_numpy(batch), 4).numpy()
    for b in range(3):
        expected = compress_stripes(batch[b], 4).stripes
        assert np.allclose(pooled[b], expected, atol=1e-12)


def test_pairwise_dtri_t_matches_numpy_pair_math():
    rng = np.random.default_rng(49)
    fm = torch.from_numpy(rng.normal(size=(6, 5, 8, 6)))
    stripes = stripe_pool_t(fm, 4)
    f = torch.from_numpy(rng.normal(size=(6, 7)))
    f_unit = f / f.norm(dim=1, keepdim=True)
    matrix = pairwise_dtri_t(stripes, f_unit, lam=1.0)
    assert torch.equal(matrix, matrix.T)
    s_np = stripes.numpy()
    u_np = f_unit.numpy()
    for i in range(6):
        for j in range(6):
            d_local = dp_align(local_dist_matrix(s_np[i], s_np[j])).total
            d_global = global_distance(u_np[i], u_np[j])
            # The torch path folds a sqrt epsilon in, so parity is close,
            # not exact; the diagonal carries the positive self-alignment
            # cost rather than zero.
            assert abs(matrix[i, j].item() - (d_local + d_global)) < 1e-5
    assert (matrix.diagonal() > 0.0).all()


def test_pairwise_dtri_t_validation():
    with pytest.raises(ShapeError):
        pairwise_dtri_t(torch.zeros(4, 2, 3), torch.zeros(5, 6), lam=1.0)


def test_pair_distance_combines_local_and_global():
    rng = np.random.default_rng(50)

    def embedding():
        stripes = rng.normal(size=(4, 6))
        stripes /= np.linalg.norm(stripes, axis=1, keepdims=True)
        f = rng.normal(size=9)
        return ImageEmbedding(stripes=stripes, f=f, f_unit=f / np.linalg.norm(f))

    a, b = embedding(), embedding()
    for lam in (0.0, 0.5, 1.0):
        pd = pair_distance(a, b, lam=lam)
        d_local = dp_align(local_dist_matrix(a.stripes, b.stripes)).total
        d_global = global_distance(a.f_unit, b.f_unit)
        assert pd.d_local == d_local
        assert pd.d_global == d_global
        assert pd.d_total == d_local + lam * d_global
    bad = ImageEmbedding(stripes=np.zeros((5, 6)), f=a.f, f_unit=a.f_unit)
    with pytest.raises(ShapeError):
        pair_distance(a, bad)


def test_global_distance_validation():
    with pytest.raises(ShapeError):
        global_distance(np.zeros(4), np.zeros(5))
