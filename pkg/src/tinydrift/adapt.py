"""Adaptive kNN engines: passive condensing-in-time, active and hybrid.

All engines follow the test-then-train protocol: :meth:`step` predicts the
label of ``x`` from the current knowledge set, then (when ``y`` is given)
adapts. Only the knowledge set (and the history window of the active
engine) is ever modified; feature extraction is fixed upstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .cdt import BELOW_ONLY, CusumConfig, Detection, GeneralizedCusum
from .core import BoundedSampleStore, LabeledSample, MemoryLedger, memory_bytes
from .knn import condense, predict_one

CIT = "cit"
ACTIVE = "active"
HYBRID = "hybrid"


@dataclass(frozen=True)
class StepOutcome:
    prediction: int
    knowledge_changed: bool = False
    detection: Optional[Detection] = None
    store_size: int = 0
    window_size: int = 0


class _AdaptiveKNN(BaseEstimator, ClassifierMixin):
    """Shared lifecycle: initial (optionally condensed) knowledge set and prediction."""

    _capacity_param = None

    def _capacity(self):
        return getattr(self, self._capacity_param) if self._capacity_param else None

    def fit(self, X, y):
        """Initialise the knowledge set from a labelled training set.

        Training rows are stamped with timestamps ``1..N`` in the given order;
        stream steps fed to :meth:`step` must carry later timestamps.
        """
        X, y = check_X_y(X, y, dtype=float)
        samples = [LabeledSample(x, lab, i + 1) for i, (x, lab) in enumerate(zip(X, y))]
        if self.condense_on_init:
            samples = condense(samples)
        # a condensed set larger than the cap keeps its newest members
        self.store_ = BoundedSampleStore(self._capacity(), samples)
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        self.n_train_ = len(y)
        self.last_t_ = len(y)
        self._init_extra()
        return self

    def _init_extra(self):
        pass

    def predict_one(self, x) -> int:
        Xs, ys, ts = self.store_.arrays()
        return predict_one(Xs, ys, ts, np.asarray(x, dtype=float))

    def predict(self, X):
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=float)
        return np.array([self.predict_one(x) for x in X], dtype=np.int64)

    def partial_fit(self, X, y=None):
        """Run test-then-train over the rows of ``X``; ``y=None`` only predicts."""
        check_is_fitted(self, "store_")
        X = check_array(X, dtype=float)
        if y is None:
            for x in X:
                self.step(x)
        else:
            for x, lab in zip(X, np.asarray(y)):
                self.step(x, lab)
        return self

    def step(self, x, y=None, t=None) -> StepOutcome:
        """Predict ``x`` and, if ``y`` is given, adapt with the labelled sample.

        ``t`` defaults to one past the last supervised timestamp.
        """
        check_is_fitted(self, "store_")
        x = np.asarray(x, dtype=float)
        pred = self.predict_one(x)
        if y is None:
            return self._outcome(pred)
        t = self.last_t_ + 1 if t is None else int(t)
        sample = LabeledSample(x, int(y), t)
        self.last_t_ = t
        return self._adapt(sample, pred)

    def _outcome(self, pred, changed=False, detection=None):
        return StepOutcome(int(pred), changed, detection, len(self.store_), self.window_size_)

    @property
    def window_size_(self) -> int:
        return 0

    @property
    def stored_samples_(self) -> int:
        """Samples held in memory: knowledge set plus any history window."""
        return len(self.store_) + self.window_size_

    def memory_bytes(self, ledger: MemoryLedger = MemoryLedger()) -> int:
        return memory_bytes(self.stored_samples_, ledger, self.n_features_in_)

    def _rebuild(self, samples, fallback: LabeledSample):
        if samples and self.condense_on_adapt:
            samples = condense(samples)
        if not samples:
            samples = [fallback]
        self.store_.replace(samples)


class CondensingInTimeKNN(_AdaptiveKNN):
    """Passive engine: store a labelled sample only when it was misclassified.

    Parameters
    ----------
    max_size : int or None, default=None
        Cap ``p`` on the knowledge set; the oldest sample is evicted when an
        insertion exceeds it. ``None`` lets the set grow without bound.
    condense_on_init : bool, default=True
        Condense the training set before use.
    """

    _capacity_param = "max_size"

    def __init__(self, max_size: Optional[int] = None, condense_on_init: bool = True):
        self.max_size = max_size
        self.condense_on_init = condense_on_init

    def _adapt(self, sample, pred):
        if pred == sample.y:
            return self._outcome(pred)
        self.store_.insert(sample)
        return self._outcome(pred, changed=True)


class _DetectingKNN(_AdaptiveKNN):

    def _default_cusum(self):
        return CusumConfig()

    def _init_extra(self):
        cfg = self.cusum if self.cusum is not None else self._default_cusum()
        self._check_cusum(cfg)
        self.detector_ = GeneralizedCusum(cfg)
        self.detections_ = []

    def _check_cusum(self, cfg):
        pass

    def _on_detection(self, det, sample):
        self.detections_.append((sample.t, det.t_r))
        self.detector_.reset()


class ActiveTinyKNN(_DetectingKNN):
    """Active engine: rebuild the knowledge set from a history window on detection.

    Every labelled sample enters a FIFO history window of ``window_size``
    samples and its correctness bit feeds a generalized CUSUM on accuracy.
    The knowledge set is untouched between detections; on a detection it is
    replaced by the window samples at or after the estimated change time
    (condensed when ``condense_on_adapt``).

    Parameters
    ----------
    window_size : int, default=200
        History window size, also the knowledge-set cap.
    cusum : CusumConfig or None
        Detector configuration; ``None`` uses the defaults.
    condense_on_init, condense_on_adapt : bool, default=True
    """

    _capacity_param = "window_size"

    def __init__(self, window_size: int = 200, cusum: Optional[CusumConfig] = None,
                 condense_on_init: bool = True, condense_on_adapt: bool = True):
        self.window_size = window_size
        self.cusum = cusum
        self.condense_on_init = condense_on_init
        self.condense_on_adapt = condense_on_adapt

    def _init_extra(self):
        super()._init_extra()
        self.window_ = BoundedSampleStore(self.window_size)

    @property
    def window_size_(self) -> int:
        return len(self.window_) if hasattr(self, "window_") else 0

    def _adapt(self, sample, pred):
        self.window_.insert(sample)
        det = self.detector_.step(pred == sample.y, sample.t)
        if not det.detected:
            return self._outcome(pred, detection=det)
        self._rebuild([s for s in self.window_ if s.t >= det.t_r], sample)
        self._on_detection(det, sample)
        return self._outcome(pred, changed=True, detection=det)


class HybridTinyKNN(_DetectingKNN):
    """Hybrid engine: passive insertions plus CUSUM-triggered forgetting.

    Misclassified labelled samples are appended to a knowledge set capped at
    ``max_size`` (FIFO). The correctness bit of the prediction made before
    that insertion feeds a generalized CUSUM whose candidate accuracies all
    lie below the stationary one, so accuracy gains from passive updates are
    never flagged. On a detection, samples older than the estimated change
    time are dropped from the knowledge set.

    Parameters
    ----------
    max_size : int, default=200
    cusum : CusumConfig or None
        Must use ``grid_mode="below_only"``; ``None`` uses the defaults in
        that mode.
    condense_on_init, condense_on_adapt : bool, default=True
    """

    _capacity_param = "max_size"

    def __init__(self, max_size: int = 200, cusum: Optional[CusumConfig] = None,
                 condense_on_init: bool = True, condense_on_adapt: bool = True):
        self.max_size = max_size
        self.cusum = cusum
        self.condense_on_init = condense_on_init
        self.condense_on_adapt = condense_on_adapt

    def _default_cusum(self):
        return CusumConfig(grid_mode=BELOW_ONLY)

    def _check_cusum(self, cfg):
        if cfg.grid_mode != BELOW_ONLY:
            raise ValueError("the hybrid engine needs a below_only candidate grid")

    def _adapt(self, sample, pred):
        changed = False
        if pred != sample.y:
            self.store_.insert(sample)
            changed = True
        det = self.detector_.step(pred == sample.y, sample.t)
        if not det.detected:
            return self._outcome(pred, changed, det)
        self._rebuild([s for s in self.store_ if s.t >= det.t_r], sample)
        self._on_detection(det, sample)
        return self._outcome(pred, True, det)


@dataclass(frozen=True)
class EngineConfig:
    """Declarative engine description used by the experiment runner.

    ``capacity`` is the CIT cap ``p`` (``None`` for unbounded) or the
    window/knowledge-set size of the active and hybrid engines.
    """

    kind: str
    capacity: Optional[int] = None
    cusum: Optional[CusumConfig] = None
    condense_on_init: bool = True
    condense_on_adapt: bool = True
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (CIT, ACTIVE, HYBRID):
            raise ValueError(f"unknown engine kind {self.kind!r}")
        if self.kind == CIT and self.cusum is not None:
            raise ValueError("the cit engine takes no detector configuration")
        if self.kind != CIT and self.capacity is None:
            raise ValueError(f"the {self.kind} engine needs a capacity")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be positive")

    @property
    def label(self) -> str:
        return self.name or self.kind


def make_engine(config: EngineConfig) -> _AdaptiveKNN:
    if config.kind == CIT:
        return CondensingInTimeKNN(max_size=config.capacity,
                                   condense_on_init=config.condense_on_init)
    cls = ActiveTinyKNN if config.kind == ACTIVE else HybridTinyKNN
    cusum = config.cusum
    if cusum is None and config.kind == HYBRID:
        cusum = CusumConfig(grid_mode=BELOW_ONLY)
    return cls(config.capacity, cusum, config.condense_on_init, config.condense_on_adapt)
