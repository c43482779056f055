"""Synthetic drifting streams, the test-then-train loop and accuracy curves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import LabeledSample
from .features import AudioClip

CLASS_CHANGE = "class_change"
NOISE_ADDITION = "noise_addition"
NO_DRIFT = "none"
FEATURE_SPACE = "feature_space"
AUDIO = "audio"

SMOOTHING_WINDOW = 100

# tone frequencies (Hz) for up to four audio classes, and the moved tone
DEFAULT_TONES = (300.0, 900.0, 1500.0, 1900.0)
DEFAULT_NEW_TONE = 360.0
NOISE_FLOOR = 0.01


@dataclass(frozen=True)
class DriftScenario:
    """A reproducible drifting classification stream.

    Stream steps are numbered ``1..steps_total``; samples at steps
    ``> change_step`` follow the post-change concept.

    Feature-space classes are mixtures of ``n_modes`` unit-variance Gaussian
    modes. Mode ``i`` of every class sits around a shared random anchor, the
    classes' centres being ``separation`` apart; anchors are spread
    ``anchor_spread`` apart so modes do not interact. A class change reflects
    every mode of the last class through the matching mode of class 0, so
    the moved class is as far from class 0 as before but on the other side.

    Audio streams use one jittered tone per class (``base_freqs``, defaulting
    to :data:`DEFAULT_TONES`); a class change moves the last class to
    ``new_freq`` and a noise addition adds white noise at ``snr_db``.
    """

    n_classes: int = 2
    drift_kind: str = CLASS_CHANGE
    change_step: int = 500
    steps_total: int = 1000
    seed: int = 0
    source_kind: str = FEATURE_SPACE
    dim: int = 8
    separation: float = 3.5
    n_modes: int = 4
    anchor_spread: float = 12.0
    noise_sigma: float = 1.5
    sample_rate: int = 22050
    duration: float = 1.0
    base_freqs: Optional[tuple] = None
    new_freq: Optional[float] = None
    freq_jitter: float = 0.02
    snr_db: float = 0.0

    def __post_init__(self):
        if self.drift_kind not in (CLASS_CHANGE, NOISE_ADDITION, NO_DRIFT):
            raise ValueError(f"unknown drift_kind {self.drift_kind!r}")
        if self.source_kind not in (FEATURE_SPACE, AUDIO):
            raise ValueError(f"unknown source_kind {self.source_kind!r}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if self.steps_total < 1:
            raise ValueError("steps_total must be positive")
        if self.drift_kind != NO_DRIFT and not 1 <= self.change_step <= self.steps_total:
            raise ValueError("change_step must lie within the stream")
        if self.source_kind == FEATURE_SPACE and self.dim < self.n_classes:
            raise ValueError("dim must be at least n_classes")
        if self.source_kind == AUDIO:
            tones = self.tones
            if len(tones) < self.n_classes:
                raise ValueError(f"need {self.n_classes} base_freqs, got {len(tones)}")
            if any(not 0 < f < self.sample_rate / 2 for f in tones + (self.moved_tone,)):
                raise ValueError("tone frequencies must lie below the Nyquist frequency")

    @property
    def tones(self) -> tuple:
        return tuple(self.base_freqs) if self.base_freqs is not None else DEFAULT_TONES

    @property
    def moved_tone(self) -> float:
        return float(self.new_freq) if self.new_freq is not None else DEFAULT_NEW_TONE

    def rngs(self):
        """Independent generators for the layout, the training set and the stream."""
        return [np.random.default_rng(ss)
                for ss in np.random.SeedSequence(self.seed).spawn(3)]


def mode_centres(sc: DriftScenario):
    """Pre-change centres ``(n_classes, n_modes, dim)`` and the moved class's centres."""
    rng = sc.rngs()[0]
    anchors = rng.standard_normal((sc.n_modes, sc.dim)) * sc.anchor_spread / np.sqrt(2 * sc.dim)
    scale = sc.separation / np.sqrt(2.0)
    centres = np.repeat(anchors[None], sc.n_classes, axis=0)
    for i in range(sc.n_modes):
        axes = rng.permutation(sc.dim)[:sc.n_classes]
        for c in range(sc.n_classes):
            centres[c, i, axes[c]] += scale
    if sc.n_classes == 1:
        moved = centres[0] + sc.separation / np.sqrt(sc.dim)
    else:
        moved = 2.0 * centres[0] - centres[-1]
    return centres, moved


def gen_feature_training(scenario: DriftScenario, per_class: int):
    """Balanced pre-change training set ``(X, y)`` with ``per_class`` rows per class."""
    if scenario.source_kind != FEATURE_SPACE:
        raise ValueError("feature training sets need a feature_space scenario")
    rng = scenario.rngs()[1]
    centres, _ = mode_centres(scenario)
    y = np.repeat(np.arange(scenario.n_classes), per_class)
    rng.shuffle(y)
    modes = rng.integers(0, scenario.n_modes, size=len(y))
    X = centres[y, modes] + rng.standard_normal((len(y), scenario.dim))
    return X, y


def gen_feature_stream(scenario: DriftScenario) -> list[LabeledSample]:
    """Generate the labelled stream of a feature-space scenario."""
    if scenario.source_kind != FEATURE_SPACE:
        raise ValueError("gen_feature_stream needs a feature_space scenario")
    rng = scenario.rngs()[2]
    centres, moved_centres = mode_centres(scenario)
    n = scenario.steps_total
    y = rng.integers(0, scenario.n_classes, size=n)
    modes = rng.integers(0, scenario.n_modes, size=n)
    eps = rng.standard_normal((n, scenario.dim))
    extra = rng.standard_normal((n, scenario.dim))
    post = np.arange(1, n + 1) > scenario.change_step
    X = centres[y, modes] + eps
    if scenario.drift_kind == CLASS_CHANGE:
        moved = post & (y == scenario.n_classes - 1)
        X[moved] = moved_centres[modes[moved]] + eps[moved]
    elif scenario.drift_kind == NOISE_ADDITION:
        X[post] += scenario.noise_sigma * extra[post]
    return [LabeledSample(X[i], int(y[i]), i + 1) for i in range(n)]


def _tone(rng, freq, sc: DriftScenario) -> np.ndarray:
    n = int(round(sc.sample_rate * sc.duration))
    f = freq * (1.0 + sc.freq_jitter * rng.uniform(-1.0, 1.0))
    amp = rng.uniform(0.5, 1.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    tt = np.arange(n) / sc.sample_rate
    return amp * np.sin(2.0 * np.pi * f * tt + phase) + NOISE_FLOOR * rng.standard_normal(n)


def _add_noise(rng, x, snr_db):
    power = np.mean(x * x) / 10.0 ** (snr_db / 10.0)
    return x + np.sqrt(power) * rng.standard_normal(x.size)


def gen_audio_training(scenario: DriftScenario, per_class: int):
    """Balanced pre-change training clips ``(clips, labels)``."""
    if scenario.source_kind != AUDIO:
        raise ValueError("audio training sets need an audio scenario")
    rng = scenario.rngs()[1]
    y = np.repeat(np.arange(scenario.n_classes), per_class)
    rng.shuffle(y)
    tones = scenario.tones
    clips = [AudioClip(_tone(rng, tones[c], scenario), scenario.sample_rate) for c in y]
    return clips, y


def gen_audio_stream(scenario: DriftScenario) -> list[tuple]:
    """Generate ``(AudioClip, label)`` pairs for steps ``1..steps_total``."""
    if scenario.source_kind != AUDIO:
        raise ValueError("gen_audio_stream needs an audio scenario")
    rng = scenario.rngs()[2]
    tones = scenario.tones
    last = scenario.n_classes - 1
    out = []
    for step in range(1, scenario.steps_total + 1):
        c = int(rng.integers(0, scenario.n_classes))
        post = scenario.drift_kind != NO_DRIFT and step > scenario.change_step
        freq = scenario.moved_tone if post and scenario.drift_kind == CLASS_CHANGE and c == last \
            else tones[c]
        x = _tone(rng, freq, scenario)
        # draw noise every step so pre-change clips do not depend on the drift kind
        noisy = _add_noise(rng, x, scenario.snr_db)
        if post and scenario.drift_kind == NOISE_ADDITION:
            x = noisy
        out.append((AudioClip(x, scenario.sample_rate), c))
    return out


def featurize_stream(pairs, extractor) -> list[LabeledSample]:
    """Map ``(clip, label)`` pairs through a fitted extractor to a labelled stream."""
    X = extractor.transform([clip for clip, _ in pairs])
    return [LabeledSample(X[i], int(lab), i + 1) for i, (_, lab) in enumerate(pairs)]


@dataclass
class RunMetrics:
    correctness: list = field(default_factory=list)
    store_sizes: list = field(default_factory=list)
    window_sizes: list = field(default_factory=list)
    detections: list = field(default_factory=list)

    @property
    def accuracy_curve(self) -> np.ndarray:
        return smooth_accuracy(self.correctness)


def run_test_then_train(engine, stream: Sequence[LabeledSample],
                        supervised: Optional[Sequence[bool]] = None) -> RunMetrics:
    """Drive a fitted engine over a labelled stream, predict first, then reveal.

    Stream step ``s`` is presented to the engine at timestamp
    ``engine.n_train_ + s`` so stream samples always postdate the training
    set. Detections are logged in stream steps as ``(step, t_r)``.
    """
    offset = engine.n_train_
    out = RunMetrics()
    for i, s in enumerate(stream):
        reveal = supervised is None or supervised[i]
        res = engine.step(s.x, s.y if reveal else None, t=offset + s.t)
        out.correctness.append(int(res.prediction == s.y))
        out.store_sizes.append(res.store_size)
        out.window_sizes.append(res.window_size)
        if res.detection is not None and res.detection.detected:
            out.detections.append((s.t, res.detection.t_r - offset))
    return out


def smooth_accuracy(correctness, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average of correctness bits.

    Position ``i`` averages bits ``max(0, i - window + 1) .. i``; the first
    ``window - 1`` positions average over the bits available so far.
    """
    bits = np.asarray(correctness, dtype=float)
    if bits.size == 0:
        raise ValueError("empty correctness sequence")
    csum = np.concatenate(([0.0], np.cumsum(bits)))
    idx = np.arange(1, bits.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


@dataclass
class AggregateCurves:
    mean: np.ndarray
    std: np.ndarray
    n_runs: int


def aggregate(curves) -> AggregateCurves:
    arr = np.asarray(curves, dtype=float)
    if arr.ndim != 2:
        raise ValueError("curves must have equal lengths")
    return AggregateCurves(arr.mean(axis=0), arr.std(axis=0), arr.shape[0])


def aggregate_runs(runs: Sequence[RunMetrics]):
    """Per-step mean and population std of smoothed accuracy and store size.

    Returns ``(accuracy, store_sizes)`` as two :class:`AggregateCurves`.
    """
    if not runs:
        raise ValueError("no runs to aggregate")
    lengths = {len(r.correctness) for r in runs}
    if len(lengths) != 1:
        raise ValueError(f"runs have different lengths: {sorted(lengths)}")
    acc = aggregate([r.accuracy_curve for r in runs])
    sizes = aggregate([r.store_sizes for r in runs])
    return acc, sizes
