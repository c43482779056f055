"""Generalized CUSUM change detection on batched classification accuracy.

Correctness bits are grouped into batches of ``n``; the number of correct
predictions in a batch is modelled as Binomial(n, accuracy) and approximated
by a Normal. For each candidate post-change accuracy on a grid the detector
tracks the maximal suffix sum of batch log-likelihood ratios, so the decision
statistic is the maximum over run starts and candidates without storing the
history. The run start of the maximiser gives the change-time estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

FULL = "full"
BELOW_ONLY = "below_only"


class DetectorStateError(RuntimeError):
    """Raised when a detector is stepped after a detection without reset."""


@dataclass(frozen=True)
class CusumConfig:
    """Detector parameters.

    ``upsilon0`` and ``grid`` may be left as ``None``: the detector then
    estimates the stationary accuracy on its first ``xi`` bits and builds a
    grid of ``m`` points excluding an ``epsilon`` neighbourhood of it.
    """

    upsilon0: Optional[float] = None
    grid: Optional[tuple] = None
    n: int = 20
    h: float = 10.0
    xi: int = 100
    m: int = 10
    epsilon: float = 0.05
    grid_mode: str = FULL

    def __post_init__(self):
        if self.grid_mode not in (FULL, BELOW_ONLY):
            raise ValueError(f"unknown grid_mode {self.grid_mode!r}")
        if self.n < 1 or self.xi < 1 or self.m < 1:
            raise ValueError("n, xi and m must be positive integers")
        if self.h <= 0:
            raise ValueError("threshold h must be positive")
        if self.upsilon0 is not None and not 0.0 < self.upsilon0 < 1.0:
            raise ValueError("upsilon0 must lie in (0, 1)")
        if self.grid is not None:
            grid = tuple(float(g) for g in self.grid)
            if not grid:
                raise ValueError("candidate grid is empty")
            if any(not 0.0 < g < 1.0 for g in grid):
                raise ValueError("grid candidates must lie in (0, 1)")
            if self.upsilon0 is not None:
                if any(g == self.upsilon0 for g in grid):
                    raise ValueError("grid must not contain upsilon0")
                if self.grid_mode == BELOW_ONLY and any(g >= self.upsilon0 for g in grid):
                    raise ValueError("below_only grid must lie below upsilon0")
            object.__setattr__(self, "grid", grid)

    def resolve(self, upsilon0: float) -> "CusumConfig":
        """Return a copy with ``upsilon0`` fixed and the grid built around it."""
        grid = self.grid
        if grid is None:
            grid = tuple(build_grid(upsilon0, self.m, self.epsilon, self.grid_mode))
        return replace(self, upsilon0=upsilon0, grid=grid)

    @property
    def resolved(self) -> bool:
        return self.upsilon0 is not None and self.grid is not None


def estimate_upsilon0(bits: Sequence[int]) -> float:
    """Mean of the bits, clamped to ``[1/(2 xi), 1 - 1/(2 xi)]``."""
    xi = len(bits)
    if xi == 0:
        raise ValueError("need at least one bit to estimate the accuracy")
    lo = 1.0 / (2 * xi)
    return min(max(sum(bits) / xi, lo), 1.0 - lo)


def build_grid(upsilon0: float, m: int, epsilon: float, mode: str = FULL) -> list[float]:
    """Equally spaced candidate accuracies avoiding the ``epsilon``-ball of ``upsilon0``.

    ``full`` places ``m`` interior points of (0, 1), i.e. ``i / (m + 1)``, and
    drops those within ``epsilon`` of ``upsilon0``. ``below_only`` places ``m``
    interior points of (0, upsilon0 - epsilon).
    """
    if not 0.0 < upsilon0 < 1.0:
        raise ValueError("upsilon0 must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if mode == FULL:
        pts = [i / (m + 1) for i in range(1, m + 1)]
        grid = [p for p in pts if abs(p - upsilon0) > epsilon]
    elif mode == BELOW_ONLY:
        top = upsilon0 - epsilon
        grid = [top * i / (m + 1) for i in range(1, m + 1)] if top > 0 else []
    else:
        raise ValueError(f"unknown grid mode {mode!r}")
    if not grid:
        raise ValueError(
            f"empty candidate grid for upsilon0={upsilon0}, m={m}, epsilon={epsilon}, mode={mode}")
    return grid


def loglik_ratio(zeta, upsilon0: float, upsilon1: float, n: int):
    """Normal-approximation log-likelihood ratio of a batch count ``zeta``.

    Closed-form quadratic in ``zeta``; equals
    ``log N(zeta; n u1, n u1 (1-u1)) - log N(zeta; n u0, n u0 (1-u0))``.
    Accepts scalars or arrays for ``zeta`` and ``upsilon1``.
    """
    u0 = upsilon0
    u1 = np.asarray(upsilon1, dtype=float)
    if not 0.0 < u0 < 1.0 or np.any((u1 <= 0.0) | (u1 >= 1.0)):
        raise ValueError("accuracies must lie strictly inside (0, 1)")
    if n < 1:
        raise ValueError("batch size must be positive")
    b0, b1 = 1.0 - u0, 1.0 - u1
    v0, v1 = u0 * b0, u1 * b1
    z = np.asarray(zeta, dtype=float)
    s = ((v1 - v0) / (2.0 * n * v0 * v1) * z * z
         + (b0 - b1) / (b0 * b1) * z
         + n * (u0 * b1 - u1 * b0) / (2.0 * b0 * b1)
         + 0.5 * np.log(v0 / v1))
    return float(s) if np.ndim(s) == 0 else s


def normal_loglik_ratio(zeta: float, upsilon0: float, upsilon1: float, n: int) -> float:
    """Reference evaluation of the same ratio from the two Normal log-densities."""
    def logpdf(x, mean, var):
        return -0.5 * math.log(2.0 * math.pi * var) - (x - mean) ** 2 / (2.0 * var)
    return (logpdf(zeta, n * upsilon1, n * upsilon1 * (1 - upsilon1))
            - logpdf(zeta, n * upsilon0, n * upsilon0 * (1 - upsilon0)))


@dataclass
class Detection:
    """Outcome of one detector step.

    ``t_r`` is the first stream step of the batch where the maximising run
    starts and ``j`` that batch's 1-based index since the last reset; both
    are ``None`` before any batch has closed.
    """

    g: float
    detected: bool
    t_r: Optional[int] = None
    upsilon1_hat: Optional[float] = None
    j: Optional[int] = None


@dataclass
class CusumState:
    batch_correct: int = 0
    batch_seen: int = 0
    batch_first_t: Optional[int] = None
    batches_seen: int = 0
    running_sum: Optional[np.ndarray] = None
    run_start: Optional[np.ndarray] = None
    run_start_t: Optional[np.ndarray] = None
    warmup_bits: list = field(default_factory=list)
    g: float = 0.0
    last: Optional[Detection] = None
    alarmed: bool = False


class GeneralizedCusum:
    """Sequential generalized CUSUM over correctness bits.

    Parameters
    ----------
    config : CusumConfig
        If ``config.upsilon0`` is ``None`` the first ``config.xi`` bits
        after construction (and after each :meth:`reset`) are a warm-up used
        to estimate it; no detection can fire during warm-up.

    Examples
    --------
    >>> det = GeneralizedCusum(CusumConfig(upsilon0=0.9, grid=(0.5,), n=2, h=5.0))
    >>> det.step(1, t=1).g
    0.0
    """

    def __init__(self, config: CusumConfig = CusumConfig()):
        self.config = config
        self.reset()

    @property
    def warming_up(self) -> bool:
        return self.active_config is None

    @property
    def g(self) -> float:
        return self.state.g

    def reset(self) -> "GeneralizedCusum":
        """Zero every accumulator; re-enter warm-up when upsilon0 is estimated."""
        self.state = CusumState()
        if self.config.upsilon0 is not None:
            self.active_config = self.config.resolve(self.config.upsilon0)
            self._init_sums()
        else:
            self.active_config = None
        return self

    def _init_sums(self):
        m = len(self.active_config.grid)
        self.state.running_sum = np.zeros(m)
        self.state.run_start = np.zeros(m, dtype=np.int64)
        self.state.run_start_t = np.zeros(m, dtype=np.int64)
        self._grid = np.asarray(self.active_config.grid)

    def step(self, correct: int, t: int) -> Detection:
        """Feed one correctness bit observed at stream step ``t``."""
        st = self.state
        if st.alarmed:
            raise DetectorStateError("detector must be reset after a detection")
        correct = int(bool(correct))

        if self.active_config is None:
            st.warmup_bits.append(correct)
            if len(st.warmup_bits) >= self.config.xi:
                u0 = estimate_upsilon0(st.warmup_bits)
                self.active_config = self.config.resolve(u0)
                self._init_sums()
            return Detection(g=0.0, detected=False)

        cfg = self.active_config
        if st.batch_seen == 0:
            st.batch_first_t = t
        st.batch_correct += correct
        st.batch_seen += 1
        if st.batch_seen < cfg.n:
            return st.last if st.last is not None else Detection(g=0.0, detected=False)

        st.batches_seen += 1
        s = loglik_ratio(st.batch_correct, cfg.upsilon0, self._grid, cfg.n)
        # restart the run wherever the accumulated sum stopped being positive
        restart = st.running_sum <= 0.0
        st.running_sum = np.where(restart, s, st.running_sum + s)
        st.run_start = np.where(restart, st.batches_seen, st.run_start)
        st.run_start_t = np.where(restart, st.batch_first_t, st.run_start_t)
        st.batch_correct = 0
        st.batch_seen = 0

        best = int(np.argmax(st.running_sum))
        st.g = float(st.running_sum[best])
        detected = st.g >= cfg.h
        st.alarmed = detected
        st.last = Detection(g=st.g, detected=detected,
                            t_r=int(st.run_start_t[best]),
                            upsilon1_hat=float(self._grid[best]),
                            j=int(st.run_start[best]))
        return st.last


def brute_force_g(zetas: Sequence[int], config: CusumConfig):
    """Decision statistic by explicit enumeration of run starts and candidates.

    Returns ``(g, j, upsilon1)`` with ``j`` the 1-based run-start batch of the
    maximiser. Among equal values the latest ``j`` and then the first
    candidate are preferred.
    """
    if not config.resolved:
        raise ValueError("config needs upsilon0 and grid")
    if len(zetas) == 0:
        raise ValueError("need at least one batch")
    best = (-math.inf, None, None)
    t = len(zetas)
    for ci, u1 in enumerate(config.grid):
        s = [loglik_ratio(z, config.upsilon0, u1, config.n) for z in zetas]
        for j in range(1, t + 1):
            total = sum(s[j - 1:])
            if total > best[0] or (total == best[0] and j > best[1]):
                best = (total, j, u1)
    return best
