"""Tiny audio feature extractor: spectrogram image through one conv stage.

A clip becomes a centred STFT magnitude grid, then a 3-channel image via a
dB scale and a colour lookup table. Each selected 7x7x3 filter is applied
as a stride-2 cross-correlation followed by batch normalisation, ReLU and a
3x3 stride-2 max-pool, and the pooled maps are flattened into one vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

KERNEL = 7
CHANNELS = 3
CONV_STRIDE = 2
CONV_PAD = 3
POOL_SIZE = 3
POOL_STRIDE = 2
POOL_PAD = 1
BN_EPS = 1e-5
DB_FLOOR = -80.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass(frozen=True)
class ConvFilterBank:
    """Convolution weights ``(F, 7, 7, 3)`` with per-filter batch-norm parameters."""

    weights: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    selected: tuple = (0,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 4 or w.shape[1:] != (KERNEL, KERNEL, CHANNELS):
            raise ValueError(f"weights must have shape (F, 7, 7, 3), got {w.shape}")
        n = w.shape[0]
        object.__setattr__(self, "weights", w)
        for name in ("gamma", "beta", "mean", "var"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if v.shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
            object.__setattr__(self, name, v)
        if np.any(self.var < 0):
            raise ValueError("batch-norm variances must be non-negative")
        sel = tuple(int(i) for i in self.selected)
        if not sel or any(not 0 <= i < n for i in sel):
            raise ValueError(f"selected indices {sel} out of range for {n} filters")
        object.__setattr__(self, "selected", sel)

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    def with_selected(self, selected) -> "ConvFilterBank":
        return replace(self, selected=tuple(selected))


def random_filter_bank(n_filters: int = 64, seed: int = 0) -> ConvFilterBank:
    """He-initialised bank with identity batch-norm, for tests and desk runs."""
    rng = np.random.default_rng(seed)
    fan_in = KERNEL * KERNEL * CHANNELS
    w = rng.standard_normal((n_filters, KERNEL, KERNEL, CHANNELS)) * np.sqrt(2.0 / fan_in)
    return ConvFilterBank(w, np.ones(n_filters), np.zeros(n_filters),
                          np.zeros(n_filters), np.ones(n_filters))


def stft_magnitude(samples, n_fft: int = 512, hop: int = 512) -> np.ndarray:
    """Centred STFT magnitude with a periodic Hann window, shape ``(bins, frames)``.

    The signal is reflection-padded by ``n_fft // 2`` on both sides, giving
    ``1 + len(samples) // hop`` frames and ``n_fft // 2 + 1`` bins.
    """
    x = np.asarray(samples.samples if isinstance(samples, AudioClip) else samples,
                   dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("need a non-empty mono signal")
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    if hop < 1:
        raise ValueError("hop must be positive")
    half = n_fft // 2
    mode = "reflect" if x.size > half else "constant"
    padded = np.pad(x, half, mode=mode)
    n_frames = 1 + x.size // hop
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(n_fft)[None, :]] * window
    return np.abs(np.fft.rfft(frames, axis=1)).T


def load_colormap(path=None) -> np.ndarray:
    """Read a 256-line ``r g b`` table; ``None`` loads the bundled viridis table."""
    if path is None:
        text = resources.files("tinydrift").joinpath("data/viridis.txt").read_text()
    else:
        with open(path) as f:
            text = f.read()
    rows = [line.split() for line in text.splitlines()
            if line.strip() and not line.lstrip().startswith("#")]
    table = np.array(rows, dtype=float)
    if table.shape != (256, 3):
        raise ValueError(f"colormap must have 256 rows of 3 values, got {table.shape}")
    if np.any((table < 0) | (table > 1)):
        raise ValueError("colormap values must lie in [0, 1]")
    return table


_DEFAULT_CMAP = None


def _default_colormap():
    global _DEFAULT_CMAP
    if _DEFAULT_CMAP is None:
        _DEFAULT_CMAP = load_colormap()
    return _DEFAULT_CMAP


def to_db_and_colormap(mag, colormap: Optional[np.ndarray] = None) -> np.ndarray:
    """Map a magnitude grid to a ``(bins, frames, 3)`` image with values in [0, 1].

    Magnitudes go to dB relative to the grid maximum, floored at -80 dB,
    are min-max normalised and indexed into the 256-entry table. An
    all-zero grid maps to entry 0; any other constant grid to entry 255.
    """
    mag = np.asarray(mag, dtype=float)
    if np.any(mag < 0):
        raise ValueError("magnitudes must be non-negative")
    cmap = _default_colormap() if colormap is None else colormap
    peak = mag.max()
    if peak == 0:
        idx = np.zeros(mag.shape, dtype=np.intp)
    else:
        with np.errstate(divide="ignore"):
            db = np.maximum(20.0 * np.log10(mag / peak), DB_FLOOR)
        lo = db.min()
        if lo == 0.0:
            idx = np.full(mag.shape, 255, dtype=np.intp)
        else:
            idx = np.rint((db - lo) / -lo * 255).astype(np.intp)
    return cmap[idx]


def _conv_responses(spec: np.ndarray, weights: np.ndarray) -> np.ndarray:
    padded = np.pad(spec, ((CONV_PAD, CONV_PAD), (CONV_PAD, CONV_PAD), (0, 0)))
    win = sliding_window_view(padded, (KERNEL, KERNEL), axis=(0, 1))
    win = win[::CONV_STRIDE, ::CONV_STRIDE]          # (H, W, C, kh, kw)
    return np.einsum("hwcij,fijc->fhw", win, weights, optimize=True)


def _max_pool(maps: np.ndarray) -> np.ndarray:
    padded = np.pad(maps, ((0, 0), (POOL_PAD, POOL_PAD), (POOL_PAD, POOL_PAD)),
                    constant_values=-np.inf)
    win = sliding_window_view(padded, (POOL_SIZE, POOL_SIZE), axis=(1, 2))
    return win[:, ::POOL_STRIDE, ::POOL_STRIDE].max(axis=(-2, -1))


def conv_bn_relu_pool(spec, bank: ConvFilterBank, filters=None) -> np.ndarray:
    """Feature maps ``(f, H, W)`` of the selected (or given) filters."""
    spec = np.asarray(spec, dtype=float)
    if spec.ndim != 3 or spec.shape[2] != CHANNELS:
        raise ValueError(f"expected a (bins, frames, 3) image, got shape {spec.shape}")
    idx = np.asarray(bank.selected if filters is None else filters)
    z = _conv_responses(spec, bank.weights[idx])
    scale = bank.gamma[idx] / np.sqrt(bank.var[idx] + BN_EPS)
    z = (z - bank.mean[idx, None, None]) * scale[:, None, None] + bank.beta[idx, None, None]
    return _max_pool(np.maximum(z, 0.0))


def flatten(maps) -> np.ndarray:
    return np.asarray(maps, dtype=float).reshape(-1)


def spectrogram_image(clip, n_fft: int, hop: int, colormap=None) -> np.ndarray:
    return to_db_and_colormap(stft_magnitude(clip, n_fft, hop), colormap)


def select_filters(bank: ConvFilterBank, calibration: Sequence, f: int) -> ConvFilterBank:
    """Keep the ``f`` filters with the highest mean activation over ``calibration``.

    ``calibration`` holds spectrogram images. Ties go to the lower index;
    weights and batch-norm parameters are left untouched.
    """
    if len(calibration) == 0:
        raise ValueError("calibration set is empty")
    if not 1 <= f <= bank.n_filters:
        raise ValueError(f"f must lie in [1, {bank.n_filters}]")
    every = np.arange(bank.n_filters)
    means = np.mean([conv_bn_relu_pool(s, bank, every).mean(axis=(1, 2))
                     for s in calibration], axis=0)
    order = np.lexsort((every, -means))
    return bank.with_selected(sorted(order[:f].tolist()))


def read_weights(path) -> ConvFilterBank:
    """Parse a bank file: ``F 7 7 3`` header, F x 147 weights, F BN lines, optional selection."""
    with open(path) as f:
        lines = [ln.split() for ln in f if ln.strip()]
    if not lines or len(lines[0]) != 4:
        raise ValueError(f"{path}: bad header, expected 'F 7 7 3'")
    n, kh, kw, c = (int(v) for v in lines[0])
    if (kh, kw, c) != (KERNEL, KERNEL, CHANNELS):
        raise ValueError(f"{path}: only 7x7x3 filters are supported")
    tokens = []
    rest = iter(lines[1:])
    need = n * KERNEL * KERNEL * CHANNELS
    for ln in rest:
        tokens.extend(ln)
        if len(tokens) >= need:
            break
    if len(tokens) != need:
        raise ValueError(f"{path}: expected {need} weight values, got {len(tokens)}")
    weights = np.array(tokens, dtype=float).reshape(n, KERNEL, KERNEL, CHANNELS)
    bn = []
    selected = tuple(range(n))
    for ln in rest:
        if ln[0] == "selected":
            selected = tuple(int(v) for v in ln[1:])
            break
        if len(ln) != 4:
            raise ValueError(f"{path}: batch-norm lines need 'gamma beta mu var'")
        bn.append([float(v) for v in ln])
    if len(bn) != n:
        raise ValueError(f"{path}: expected {n} batch-norm lines, got {len(bn)}")
    bn = np.array(bn)
    return ConvFilterBank(weights, bn[:, 0], bn[:, 1], bn[:, 2], bn[:, 3], selected)


def write_weights(path, bank: ConvFilterBank) -> None:
    with open(path, "w") as f:
        f.write(f"{bank.n_filters} {KERNEL} {KERNEL} {CHANNELS}\n")
        for w in bank.weights:
            f.write(" ".join(repr(float(v)) for v in w.reshape(-1)) + "\n")
        for g, b, m, v in zip(bank.gamma, bank.beta, bank.mean, bank.var):
            f.write(f"{float(g)!r} {float(b)!r} {float(m)!r} {float(v)!r}\n")
        f.write("selected " + " ".join(str(i) for i in bank.selected) + "\n")


class SpectrogramFeatureExtractor(BaseEstimator, TransformerMixin):
    """Audio clips to flat feature vectors through the fixed tiny extractor.

    Parameters
    ----------
    bank : ConvFilterBank or None
        Filter bank. ``None`` draws a random bank of ``n_filters`` filters
        seeded with ``random_state``.
    n_fft, hop : int
        STFT window and step.
    n_selected : int or None
        Number of filters kept by :meth:`fit` (highest mean activation on
        the calibration clips). ``None`` keeps the bank's own selection.
    colormap : ndarray or None
        256x3 lookup table; ``None`` uses the bundled one.
    """

    def __init__(self, bank: Optional[ConvFilterBank] = None, n_fft: int = 512,
                 hop: int = 512, n_selected: Optional[int] = 1, colormap=None,
                 n_filters: int = 64, random_state: int = 0):
        self.bank = bank
        self.n_fft = n_fft
        self.hop = hop
        self.n_selected = n_selected
        self.colormap = colormap
        self.n_filters = n_filters
        self.random_state = random_state

    def _images(self, clips):
        return [spectrogram_image(c, self.n_fft, self.hop, self.colormap) for c in clips]

    def fit(self, X, y=None):
        """Select filters on the calibration clips ``X``."""
        bank = self.bank if self.bank is not None else random_filter_bank(
            self.n_filters, self.random_state)
        if self.n_selected is not None:
            bank = select_filters(bank, self._images(X), self.n_selected)
        self.bank_ = bank
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        return np.stack([flatten(conv_bn_relu_pool(img, self.bank_))
                         for img in self._images(X)])
