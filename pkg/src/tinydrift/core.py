"""Shared domain types: labelled samples, bounded FIFO stores and byte accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np


class ProtocolError(ValueError):
    """Raised when a stream violates the monotone-timestamp protocol."""


class EmptyKnowledgeError(ValueError):
    """Raised when a classifier is queried with no stored samples."""


@dataclass(frozen=True)
class LabeledSample:
    """A feature vector with its class label and arrival timestamp."""

    x: np.ndarray
    y: int
    t: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("feature vector must be a non-empty 1-d array")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature vector contains non-finite values")
        if int(self.y) < 0:
            raise ValueError("labels are non-negative class indices")
        if int(self.t) < 0:
            raise ValueError("timestamps are non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))
        object.__setattr__(self, "t", int(self.t))

    @property
    def dim(self) -> int:
        return self.x.shape[0]


class BoundedSampleStore:
    """Insertion-ordered sample store with optional capacity and FIFO eviction.

    Timestamps must strictly increase with every insertion, so FIFO order
    and timestamp order coincide: evicting the first item always removes
    the sample with the smallest timestamp.

    Parameters
    ----------
    capacity : int or None
        Maximum number of retained samples; ``None`` means unbounded.
    items : iterable of LabeledSample, optional
        Initial content, inserted in order.
    """

    def __init__(self, capacity: Optional[int] = None,
                 items: Iterable[LabeledSample] = ()):
        if capacity is not None and capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._items: list[LabeledSample] = []
        self._cache = None
        for s in items:
            self.insert(s)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __repr__(self):
        return f"BoundedSampleStore(capacity={self.capacity}, size={len(self)})"

    @property
    def items(self) -> list[LabeledSample]:
        return list(self._items)

    @property
    def last_t(self) -> Optional[int]:
        return self._items[-1].t if self._items else None

    def insert(self, s: LabeledSample) -> Optional[LabeledSample]:
        """Append ``s``; return the evicted sample, if any."""
        if self._items:
            if s.t <= self._items[-1].t:
                raise ProtocolError(
                    f"timestamp {s.t} not greater than last stored {self._items[-1].t}")
            if s.dim != self._items[0].dim:
                raise ValueError(
                    f"feature dim {s.dim} differs from store dim {self._items[0].dim}")
        self._items.append(s)
        self._cache = None
        if self.capacity is not None and len(self._items) > self.capacity:
            return self._items.pop(0)
        return None

    def discard_before(self, t_r: int) -> "BoundedSampleStore":
        """Keep exactly the samples with ``t >= t_r``, order preserved."""
        kept = [s for s in self._items if s.t >= t_r]
        if len(kept) != len(self._items):
            self._items = kept
            self._cache = None
        return self

    def replace(self, items: Iterable[LabeledSample]) -> "BoundedSampleStore":
        """Replace the content, keeping only the newest ``capacity`` items."""
        self._items = []
        self._cache = None
        for s in items:
            self.insert(s)
        return self

    def copy(self) -> "BoundedSampleStore":
        out = BoundedSampleStore(self.capacity)
        out._items = list(self._items)
        return out

    def arrays(self):
        """Return cached ``(X, y, t)`` arrays of the stored samples."""
        if self._cache is None:
            if self._items:
                X = np.stack([s.x for s in self._items])
            else:
                X = np.empty((0, 0))
            y = np.fromiter((s.y for s in self._items), dtype=np.int64,
                            count=len(self._items))
            t = np.fromiter((s.t for s in self._items), dtype=np.int64,
                            count=len(self._items))
            self._cache = (X, y, t)
        return self._cache

    def fingerprint(self) -> tuple:
        """Cheap identity of the content (timestamps and labels)."""
        return tuple((s.t, s.y) for s in self._items)


@dataclass(frozen=True)
class MemoryLedger:
    """Byte sizes used to account a stored sample (32-bit values by default)."""

    bytes_per_feature_value: int = 4
    bytes_per_label: int = 4
    bytes_per_timestamp: int = 4

    def __post_init__(self):
        for name in ("bytes_per_feature_value", "bytes_per_label", "bytes_per_timestamp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    def sample_bytes(self, feature_dim: int) -> int:
        return (feature_dim * self.bytes_per_feature_value
                + self.bytes_per_label + self.bytes_per_timestamp)


def memory_bytes(store, ledger: MemoryLedger = MemoryLedger(),
                 feature_dim: Optional[int] = None) -> int:
    """Bytes needed to hold ``store`` (a store, a sequence, or a sample count)."""
    n = store if isinstance(store, (int, np.integer)) else len(store)
    if n == 0:
        return 0
    if feature_dim is None:
        feature_dim = store[0].dim
    return int(n) * ledger.sample_bytes(feature_dim)


def memory_footprint(rate: int, n_fft: int, hop: int, max_size: int,
                     duration: float = 1.0, n_selected: int = 1,
                     ledger: MemoryLedger = MemoryLedger()) -> dict:
    """Per-block byte budget of a deployed hybrid engine on audio input.

    Returns a dict mapping block name to ``(shape, bytes)`` plus the total.
    """
    n_samples = int(round(rate * duration))
    bins = n_fft // 2 + 1
    frames = 1 + n_samples // hop
    # stride-2 conv (pad 3) then stride-2 pool (pad 1): each halves, rounding up
    h = _ceil_half(_ceil_half(bins))
    w = _ceil_half(_ceil_half(frames))
    v = ledger.bytes_per_feature_value
    dim = n_selected * h * w
    blocks = {
        "audio": ((1, n_samples), n_samples * v),
        "spectrogram": ((bins, frames, 3), bins * frames * 3 * v),
        "filters": ((n_selected, 7, 7, 3), n_selected * 147 * v),
        "features": ((h, w) if n_selected == 1 else (n_selected, h, w), dim * v),
        "knowledge_set": ((max_size,), memory_bytes(max_size, ledger, dim)),
    }
    blocks["total"] = (None, sum(b for _, b in blocks.values()))
    return blocks


def _ceil_half(n: int) -> int:
    return (n + 1) // 2
