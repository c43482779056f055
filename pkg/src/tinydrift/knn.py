"""k-nearest-neighbour classification over a sample store and Hart condensing."""

from __future__ import annotations

import math
from typing import NamedTuple, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import BoundedSampleStore, EmptyKnowledgeError, LabeledSample


class Neighbor(NamedTuple):
    distance: float
    label: int
    t: int


def effective_k(n: int) -> int:
    """Number of neighbours used for ``n`` stored samples: ``ceil(sqrt(n))``."""
    if n < 1:
        raise EmptyKnowledgeError("no stored samples to vote with")
    return math.isqrt(n - 1) + 1


def squared_distance(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def _neighbor_order(X, t, x):
    """Indices of ``X`` sorted by distance, then timestamp, then position."""
    diff = X - x
    d = np.einsum("ij,ij->i", diff, diff)
    # lexsort uses the last key as primary
    order = np.lexsort((np.arange(len(d)), t, d))
    return order, d


def vote(labels: Sequence[int]) -> int:
    """Majority label of an ascending-distance neighbour list.

    Ties between classes go to the class that appears first in the list,
    i.e. the class of the nearest neighbour among the tied classes.
    """
    counts: dict[int, int] = {}
    first: dict[int, int] = {}
    for pos, lab in enumerate(labels):
        counts[lab] = counts.get(lab, 0) + 1
        first.setdefault(lab, pos)
    best = max(counts.values())
    tied = [lab for lab, c in counts.items() if c == best]
    return min(tied, key=lambda lab: (first[lab], lab))


def predict_one(X, y, t, x, k: Optional[int] = None) -> int:
    """Predict the label of ``x`` from stored arrays ``(X, y, t)``."""
    n = len(y)
    if n == 0:
        raise EmptyKnowledgeError("cannot predict with an empty knowledge set")
    k = effective_k(n) if k is None else min(k, n)
    order, _ = _neighbor_order(X, t, x)
    return vote(y[order[:k]].tolist())


def neighbors(X, y, t, x, k: Optional[int] = None) -> list[Neighbor]:
    n = len(y)
    if n == 0:
        raise EmptyKnowledgeError("cannot query an empty knowledge set")
    k = effective_k(n) if k is None else min(k, n)
    order, d = _neighbor_order(X, t, x)
    return [Neighbor(float(d[i]), int(y[i]), int(t[i])) for i in order[:k]]


class TinyKNNClassifier(BaseEstimator, ClassifierMixin):
    """Majority-vote kNN over a stored knowledge set.

    Parameters
    ----------
    n_neighbors : int or None, default=None
        Fixed number of neighbours. ``None`` uses ``ceil(sqrt(n))`` where
        ``n`` is the number of stored samples, re-evaluated as the store
        changes.

    Notes
    -----
    Distances are squared Euclidean. Equal distances are ordered by the
    smaller timestamp, then by insertion order; vote ties go to the class
    of the nearest neighbour among the tied classes.
    """

    def __init__(self, n_neighbors: Optional[int] = None):
        self.n_neighbors = n_neighbors

    def fit(self, X, y, timestamps=None):
        X, y = check_X_y(X, y, dtype=float)
        if timestamps is None:
            timestamps = np.arange(1, len(y) + 1)
        self.store_ = BoundedSampleStore(
            items=(LabeledSample(x, lab, ti) for x, lab, ti in zip(X, y, timestamps)))
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_store(cls, store: BoundedSampleStore, n_neighbors=None):
        model = cls(n_neighbors=n_neighbors)
        model.store_ = store
        X, y, _ = store.arrays()
        model.classes_ = np.unique(y)
        model.n_features_in_ = X.shape[1] if len(y) else 0
        return model

    @property
    def k_(self) -> int:
        check_is_fitted(self, "store_")
        n = len(self.store_)
        return effective_k(n) if self.n_neighbors is None else min(self.n_neighbors, n)

    def predict(self, X):
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=float)
        Xs, ys, ts = self.store_.arrays()
        return np.array([predict_one(Xs, ys, ts, x, self.n_neighbors) for x in X],
                        dtype=np.int64)

    def kneighbors(self, x) -> list[Neighbor]:
        check_is_fitted(self, "store_")
        Xs, ys, ts = self.store_.arrays()
        return neighbors(Xs, ys, ts, np.asarray(x, dtype=float), self.n_neighbors)


def condense_indices(X, y, t=None) -> list[int]:
    """Hart's condensed nearest neighbour, returning kept row indices.

    The first row seeds the kept set ``H``. Passes over the remaining rows
    move every sample misclassified by the current ``H`` into ``H`` until
    a full pass moves nothing. The classifier uses ``ceil(sqrt(|H|))``
    neighbours as ``H`` grows. Returned indices are in input order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = len(y)
    if n == 0:
        raise ValueError("cannot condense an empty set")
    t = np.arange(n) if t is None else np.asarray(t)
    dist = np.empty((n, n))
    for i in range(n):
        diff = X - X[i]
        dist[i] = np.einsum("ij,ij->i", diff, diff)

    in_h = np.zeros(n, dtype=bool)
    in_h[0] = True
    h_idx = [0]
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if in_h[i]:
                continue
            hi = np.asarray(h_idx)
            k = effective_k(len(hi))
            order = np.lexsort((hi, t[hi], dist[i, hi]))
            pred = vote(y[hi[order[:k]]].tolist())
            if pred != y[i]:
                in_h[i] = True
                h_idx.append(i)
                changed = True
    return sorted(h_idx)


def condense(samples: Sequence[LabeledSample]) -> list[LabeledSample]:
    """Condense a sample sequence, preserving timestamps and input order."""
    if len(samples) == 0:
        raise ValueError("cannot condense an empty set")
    X = np.stack([s.x for s in samples])
    y = np.array([s.y for s in samples])
    t = np.array([s.t for s in samples])
    return [samples[i] for i in condense_indices(X, y, t)]
