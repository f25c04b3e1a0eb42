"""Centroid bank tests: seeding, Lloyd steps, momentum tracking, scoring."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftadapt import centroids as cb
from driftadapt.errors import ConfigError, ContractError, DegenerateDataError
from driftadapt.gradcore import Tensor


def _blob_data(rng, centers, n_per=20, spread=0.05):
    rows = []
    for c in centers:
        rows.append(np.asarray(c) + spread * rng.normal(0, 1, (n_per, len(c))))
    return np.vstack(rows)


def test_momentum_update_hand_value():
    bank = cb.CentroidBank("v", centroids=np.array([[1.0, 0.0]]), momentum=0.9)
    cb.momentum_update(bank, np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(bank.centroids, [[0.9, 0.1]])
    assert bank.tau == 1


def test_momentum_update_contracts_toward_fixed_mean():
    bank = cb.CentroidBank("v", centroids=np.array([[4.0, -2.0]]), momentum=0.8)
    target = np.array([[1.0, 1.0]])
    gaps = []
    for _ in range(6):
        cb.momentum_update(bank, target)
        gaps.append(np.linalg.norm(bank.centroids - target))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # geometric decay at exactly the momentum rate
    assert gaps[1] / gaps[0] == pytest.approx(0.8, abs=1e-12)


def test_momentum_shape_mismatch():
    bank = cb.CentroidBank("v", centroids=np.zeros((2, 3)))
    with pytest.raises(ContractError):
        cb.momentum_update(bank, np.zeros((3, 3)))


def test_bad_momentum_rejected():
    with pytest.raises(ConfigError):
        cb.init_kmeanspp(np.eye(3), k=2, momentum=1.0)


def test_lloyd_sse_monotone():
    rng = np.random.default_rng(0)
    x = cb.l2_normalize_rows(rng.normal(0, 1, (60, 5)))
    bank = cb.CentroidBank("v", centroids=x[:4].copy())
    sses = []
    for _ in range(10):
        bank, sse = cb.lloyd_iterate(bank, x, _normalized=True)
        sses.append(sse)
    assert all(b <= a + 1e-12 for a, b in zip(sses, sses[1:]))


def test_init_finds_separated_blobs():
    rng = np.random.default_rng(1)
    centers = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    x = _blob_data(rng, centers)
    bank = cb.init_kmeanspp(x, k=3, seed=5)
    # each true blob should own exactly one centroid
    a = cb.assign(bank, x)
    owners = {tuple(np.unique(a.indices[i * 20 : (i + 1) * 20])) for i in range(3)}
    assert all(len(o) == 1 for o in owners)
    assert len({o[0] for o in owners}) == 3


def test_init_matches_brute_force_small():
    # 6 points, k=2: enumerate every bipartition for the optimal SSE
    rng = np.random.default_rng(3)
    x = cb.l2_normalize_rows(rng.normal(0, 1, (6, 3)))
    best = np.inf
    for mask_bits in range(1, 2**6 - 1):
        mask = np.array([(mask_bits >> i) & 1 for i in range(6)], dtype=bool)
        c = np.stack([x[mask].mean(axis=0), x[~mask].mean(axis=0)])
        _, sse = cb._sse(x, c)
        best = min(best, sse)
    found = min(
        cb._sse(x, cb.init_kmeanspp(x, k=2, seed=s).centroids)[1] for s in range(10)
    )
    assert found <= best + 1e-9


def test_init_requires_enough_points():
    with pytest.raises(ConfigError):
        cb.init_kmeanspp(np.eye(2), k=3)


def test_init_rejects_identical_points():
    with pytest.raises(DegenerateDataError):
        cb.init_kmeanspp(np.ones((5, 3)), k=2)


def test_normalize_rejects_zero_row():
    with pytest.raises(DegenerateDataError):
        cb.l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_batch_means_and_empty_carry():
    bank = cb.CentroidBank("v", centroids=np.array([[1.0, 0.0], [0.0, 1.0]]))
    feats = np.array([[2.0, 0.0], [4.0, 0.0]])
    a = cb.Assignment(indices=np.array([0, 0]), similarities=np.ones(2))
    means = cb.batch_means(feats, a, bank)
    np.testing.assert_allclose(means[0], [3.0, 0.0])
    # cluster 1 saw no members: previous centroid carried forward and flagged
    np.testing.assert_allclose(means[1], [0.0, 1.0])
    assert bank.carried_forward == [1]


def test_batch_means_length_mismatch():
    bank = cb.CentroidBank("v", centroids=np.eye(2))
    a = cb.Assignment(indices=np.zeros(3, dtype=int), similarities=np.ones(3))
    with pytest.raises(ContractError):
        cb.batch_means(np.eye(2), a, bank)


def test_max_similarity_array_and_tensor_agree():
    rng = np.random.default_rng(4)
    bank = cb.CentroidBank("v", centroids=cb.l2_normalize_rows(rng.normal(0, 1, (3, 4))))
    feats = rng.normal(0, 1, (7, 4))
    s_arr, idx_arr = cb.max_similarity(bank, feats)
    s_t, idx_t = cb.max_similarity(bank, Tensor(feats, requires_grad=True))
    np.testing.assert_allclose(s_arr, s_t.data, atol=1e-12)
    np.testing.assert_array_equal(idx_arr, idx_t)


def test_assignment_tie_goes_to_lowest_index():
    bank = cb.CentroidBank("v", centroids=np.array([[1.0, 0.0], [1.0, 0.0]]))
    a = cb.assign(bank, np.array([[2.0, 0.0]]))
    assert a.indices[0] == 0


def test_assignment_similarity_bounds():
    rng = np.random.default_rng(6)
    bank = cb.init_kmeanspp(rng.normal(0, 1, (30, 4)), k=3, seed=0)
    a = cb.assign(bank, rng.normal(0, 1, (50, 4)))
    assert np.all(a.similarities <= 1.0 + 1e-12)
    assert np.all(a.similarities >= -1.0 - 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_lloyd_never_increases_sse(seed, k):
    rng = np.random.default_rng(seed)
    x = cb.l2_normalize_rows(rng.normal(0, 1, (25, 3)))
    bank = cb.init_kmeanspp(x, k=k, seed=seed)
    _, sse0 = cb.lloyd_iterate(bank, x, _normalized=True)
    _, sse1 = cb.lloyd_iterate(bank, x, _normalized=True)
    assert sse1 <= sse0 + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_momentum_keeps_convex_hull(seed):
    # each update is a convex combination, so coordinates stay inside the
    # min/max envelope of the old centroid and the batch mean
    rng = np.random.default_rng(seed)
    c0 = rng.normal(0, 1, (2, 3))
    means = rng.normal(0, 1, (2, 3))
    bank = cb.CentroidBank("v", centroids=c0.copy(), momentum=rng.uniform(0, 0.99))
    cb.momentum_update(bank, means)
    lo = np.minimum(c0, means) - 1e-12
    hi = np.maximum(c0, means) + 1e-12
    assert np.all(bank.centroids >= lo) and np.all(bank.centroids <= hi)
