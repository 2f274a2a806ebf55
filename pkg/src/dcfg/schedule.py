"""Diffusion variance schedules and timestep grids.

The cumulative signal fraction `alpha_bar` is indexed from 0 with
``alpha_bar[0] == 1`` so that trajectories may start at a clean sample
(t = 0) and end at one without special cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


#: Offset in the squared-cosine signal curve.
COSINE_OFFSET = 0.008
#: Floor on per-step signal ratios alpha_bar[t] / alpha_bar[t-1].
COSINE_MIN_RATIO = 1e-3

DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal schedule {alpha_bar_t} for t = 0..steps."""

    steps: int
    alpha_bar: np.ndarray
    kind: ScheduleKind

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if ab.shape != (self.steps + 1,):
            raise ValueError(f"alpha_bar must have length steps+1={self.steps + 1}, got {ab.shape}")
        if not np.all(np.isfinite(ab)):
            raise ValueError("alpha_bar contains non-finite values")
        if ab[0] != 1.0:
            raise ValueError(f"alpha_bar[0] must be exactly 1, got {ab[0]}")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ValueError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def signal(self, t: int) -> float:
        """sqrt(alpha_bar_t), the clean-signal coefficient."""
        return math.sqrt(self.alpha_bar[t])

    def noise(self, t: int) -> float:
        """sqrt(1 - alpha_bar_t), the accumulated-noise coefficient."""
        return math.sqrt(1.0 - self.alpha_bar[t])


@dataclass(frozen=True)
class TimestepGrid:
    """Strictly increasing subsequence of 1..T visited by the sampler."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise ValueError("grid must contain at least one timestep")
        if idx[0] < 1:
            raise ValueError(f"first grid index must be >= 1, got {idx[0]}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("grid indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def last(self) -> int:
        return self.indices[-1]


def build_schedule(
    kind: ScheduleKind | str,
    steps: int,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
) -> NoiseSchedule:
    """Build a linear-beta or squared-cosine schedule over `steps` timesteps.

    Linear: per-step variances beta_t linearly spaced in [beta_min, beta_max],
    alpha_bar_t = prod_{s<=t} (1 - beta_s).  Cosine: normalized squared-cosine
    signal curve with per-step ratios floored at COSINE_MIN_RATIO; the beta
    arguments are ignored.
    """
    kind = ScheduleKind(kind)
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if kind is ScheduleKind.LINEAR:
        if not (0.0 < beta_min <= beta_max < 1.0):
            raise ValueError(f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})")
        betas = np.linspace(beta_min, beta_max, steps, dtype=np.float64)
        alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    else:
        t = np.arange(steps + 1, dtype=np.float64)
        f = np.cos(((t / steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * math.pi / 2.0) ** 2
        ratios = np.maximum(f[1:] / f[:-1], COSINE_MIN_RATIO)
        alpha_bar = np.concatenate(([1.0], np.cumprod(ratios)))
    return NoiseSchedule(steps=steps, alpha_bar=alpha_bar, kind=kind)


def make_grid(steps: int, stride: int) -> TimestepGrid:
    """Grid {T, T-stride, ...} in increasing order; always contains T."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stride > steps:
        raise ValueError(f"stride {stride} exceeds step count {steps}")
    return TimestepGrid(indices=tuple(range(steps, 0, -stride))[::-1])
