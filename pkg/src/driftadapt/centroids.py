"""Per-modality centroid banks: k-means++ initialization, Lloyd iterations,
momentum tracking across online batches, and max-cosine scoring.

Clustering runs in Euclidean geometry on L2-normalized feature rows so that
nearest-centroid structure is consistent with the cosine scores used during
adaptation. Centroids are alignment targets: they never receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import ConfigError, ContractError, DegenerateDataError
from .gradcore import Tensor

_NORM_FLOOR = 1e-12


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms < _NORM_FLOOR):
        raise DegenerateDataError("zero-norm feature row cannot be normalized")
    return x / norms


@dataclass
class CentroidBank:
    modality: str
    centroids: np.ndarray  # k x d_h
    momentum: float = 0.9
    tau: int = 0
    initialized: bool = True
    # clusters whose batch mean was carried forward on the last update
    carried_forward: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def state_arrays(self, prefix: str = "") -> dict:
        p = f"{prefix}bank.{self.modality}"
        return {
            f"{p}.centroids": self.centroids,
            f"{p}.meta": np.asarray([self.momentum, float(self.tau)]),
        }


@dataclass
class Assignment:
    indices: np.ndarray  # per-sample cluster index
    similarities: np.ndarray  # per-sample max cosine similarity


def _sse(features: np.ndarray, centroids: np.ndarray) -> tuple:
    d2 = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, float(d2[np.arange(len(features)), labels].sum())


def init_kmeanspp(features: np.ndarray, k: int, seed=0,
                  momentum: float = 0.9, modality: str = "",
                  max_iter: int = 100) -> CentroidBank:
    """k-means++ seeding followed by Lloyd iterations on normalized rows."""
    if not (0.0 <= momentum < 1.0):
        raise ConfigError(f"momentum {momentum} outside [0, 1)")
    b = features.shape[0]
    if b < k:
        raise ConfigError(f"need at least k={k} points, got {b}")
    x = l2_normalize_rows(np.asarray(features, dtype=np.float64))
    if k > 1 and np.allclose(x, x[0], atol=1e-12):
        raise DegenerateDataError("all points identical; cannot seed k>1 clusters")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(b)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total < _NORM_FLOOR:
            # remaining points coincide with chosen seeds; spread over distinct rows
            centroids[j] = x[rng.integers(b)]
        else:
            centroids[j] = x[rng.choice(b, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))

    bank = CentroidBank(modality=modality, centroids=centroids, momentum=momentum)
    prev_labels = None
    for _ in range(max_iter):
        labels, _ = _sse(x, bank.centroids)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        prev_labels = labels
        lloyd_iterate(bank, x, _normalized=True)
    bank.centroids = _hartigan_refine(x, bank.centroids, max_sweeps=max_iter)
    return bank


def _hartigan_refine(x: np.ndarray, centroids: np.ndarray, max_sweeps: int = 100):
    """Single-point swap refinement of a Lloyd fixed point.

    Lloyd only moves whole assignment boundaries, so it can get stuck when
    reassigning one point would shrink the total SSE (classic with
    near-duplicate pairs). Hartigan's criterion evaluates each point's exact
    SSE delta under cluster-size-corrected means and moves it when that
    delta is negative; fixed points of this sweep are a strict subset of
    Lloyd's.
    """
    labels, _ = _sse(x, centroids)
    k = centroids.shape[0]
    sums = np.zeros_like(centroids)
    counts = np.zeros(k, dtype=np.int64)
    for j in range(k):
        members = x[labels == j]
        counts[j] = len(members)
        if len(members):
            sums[j] = members.sum(axis=0)
    for _ in range(max_sweeps):
        moved = False
        for i in range(x.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            ca = sums[a] / counts[a]
            removal_gain = counts[a] / (counts[a] - 1.0) * ((x[i] - ca) ** 2).sum()
            best_gain, best_b = 1e-12, -1
            for b in range(k):
                if b == a:
                    continue
                if counts[b] == 0:
                    gain = removal_gain
                else:
                    cb = sums[b] / counts[b]
                    gain = removal_gain - counts[b] / (counts[b] + 1.0) * (
                        (x[i] - cb) ** 2
                    ).sum()
                if gain > best_gain:
                    best_gain, best_b = gain, b
            if best_b >= 0:
                sums[a] -= x[i]
                counts[a] -= 1
                sums[best_b] += x[i]
                counts[best_b] += 1
                labels[i] = best_b
                moved = True
        if not moved:
            break
    out = centroids.copy()
    for j in range(k):
        if counts[j]:
            out[j] = sums[j] / counts[j]
    return out


def lloyd_iterate(bank: CentroidBank, features: np.ndarray, _normalized=False):
    """One assign + mean-update step; returns (bank, SSE before the update).

    Empty clusters are reseeded to the point farthest from its own centroid.
    """
    x = features if _normalized else l2_normalize_rows(np.asarray(features, dtype=np.float64))
    labels, sse = _sse(x, bank.centroids)
    new_centroids = bank.centroids.copy()
    for j in range(bank.k):
        members = x[labels == j]
        if len(members):
            new_centroids[j] = members.mean(axis=0)
    # reseed empties to the globally farthest point from its assigned centroid
    for j in range(bank.k):
        if not np.any(labels == j):
            dist = np.linalg.norm(x - bank.centroids[labels], axis=1)
            new_centroids[j] = x[dist.argmax()]
    bank.centroids = new_centroids
    return bank, sse


def batch_means(features: np.ndarray, assignment: Assignment, bank: CentroidBank):
    """Per-cluster means of the given rows; empty clusters carry the previous
    centroid forward and are flagged on the bank."""
    if assignment.indices.shape[0] != features.shape[0]:
        raise ContractError("assignment length does not match batch size")
    means = bank.centroids.copy()
    carried = []
    for j in range(bank.k):
        members = features[assignment.indices == j]
        if len(members):
            means[j] = members.mean(axis=0)
        else:
            carried.append(j)
    bank.carried_forward = carried
    return means


def momentum_update(bank: CentroidBank, means: np.ndarray) -> CentroidBank:
    """c_tau = momentum * c_(tau-1) + (1 - momentum) * batch mean."""
    if not (0.0 <= bank.momentum < 1.0):
        raise ConfigError(f"momentum {bank.momentum} outside [0, 1)")
    if means.shape != bank.centroids.shape:
        raise ContractError(f"means shape {means.shape} != {bank.centroids.shape}")
    bank.centroids = bank.momentum * bank.centroids + (1.0 - bank.momentum) * means
    bank.tau += 1
    return bank


def max_similarity(bank: CentroidBank, features):
    """Max cosine similarity of each feature row to the bank's centroids.

    Accepts a Tensor (gradient flows into the features, never the centroids)
    or a plain array. Returns (similarities, argmax indices); ties go to the
    lowest index.
    """
    if isinstance(features, Tensor):
        sims = gc.cosine_matrix(features, bank.centroids)
        s, idx = gc.max_axis1(sims)
        return s, idx
    sims = gc.cosine_matrix(Tensor(np.asarray(features, dtype=np.float64)), bank.centroids)
    idx = sims.data.argmax(axis=1)
    return sims.data[np.arange(sims.data.shape[0]), idx], idx


def assign(bank: CentroidBank, features: np.ndarray) -> Assignment:
    s, idx = max_similarity(bank, np.asarray(features, dtype=np.float64))
    return Assignment(indices=idx, similarities=s)
