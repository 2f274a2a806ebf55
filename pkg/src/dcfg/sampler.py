"""Deterministic DDIM integrator: inversion (abduction) and generation.

Both directions iterate the same two-stage update: form the clean estimate
from the current noise prediction, then re-noise it to the next grid level.
The noise scale sigma_t is fixed to zero, so trajectories are invertible
up to discretization error.  States may be a single vector (D,) or a batch
(N, D) sharing one condition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .condition import ConditionSlots
from .errors import NumericalError
from .guidance import EpsilonModel, GuidanceMode, guided_epsilon
from .schedule import NoiseSchedule, TimestepGrid


class Direction(str, Enum):
    INVERT = "invert"
    GENERATE = "generate"


@dataclass
class Trajectory:
    """Visited (t, state) pairs, monotone in the declared direction."""

    states: list[tuple[int, np.ndarray]]
    direction: Direction
    guidance_mode: GuidanceMode

    @property
    def final(self) -> np.ndarray:
        return self.states[-1][1]

    @property
    def timesteps(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.states)


def predict_x0(sched: NoiseSchedule, eps: np.ndarray, x_t: np.ndarray, t: int) -> np.ndarray:
    """Clean estimate (x_t - sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_bar_t).

    At t = T with nearly exhausted signal the 1/sqrt(alpha_bar_T) factor
    amplifies the residual by two orders of magnitude; upstream validation
    keeps alpha_bar finite and positive.
    """
    if not (0 <= t <= sched.steps):
        raise ValueError(f"t must be in 0..{sched.steps}, got {t}")
    return (np.asarray(x_t) - sched.noise(t) * eps) / sched.signal(t)


def _step(
    sched: NoiseSchedule,
    model: EpsilonModel,
    mode: GuidanceMode,
    x: np.ndarray,
    t_from: int,
    t_to: int,
    slots: ConditionSlots,
) -> np.ndarray:
    # The noise-prediction coefficient sqrt(1 - alpha_bar_0) vanishes, and the
    # optimal predictor itself is zero at t = 0, so the backend is never
    # queried outside its 1..T domain.
    if t_from == 0:
        eps = np.zeros_like(np.asarray(x, dtype=np.float64))
    else:
        eps = guided_epsilon(model, x, t_from, slots, mode)
    x0_hat = predict_x0(sched, eps, x, t_from)
    return sched.signal(t_to) * x0_hat + sched.noise(t_to) * eps


def _run(
    sched: NoiseSchedule,
    model: EpsilonModel,
    mode: GuidanceMode,
    start: np.ndarray,
    schedule_points: list[int],
    slots: ConditionSlots,
    direction: Direction,
) -> Trajectory:
    x = np.array(start, dtype=np.float64)
    states = [(schedule_points[0], x.copy())]
    for t_from, t_to in zip(schedule_points, schedule_points[1:]):
        x = _step(sched, model, mode, x, t_from, t_to, slots)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state while stepping {t_from} -> {t_to}")
        states.append((t_to, x.copy()))
    return Trajectory(states=states, direction=direction, guidance_mode=mode)


def invert(
    model: EpsilonModel,
    mode: GuidanceMode,
    x0: np.ndarray,
    slots: ConditionSlots,
    sched: NoiseSchedule,
    grid: TimestepGrid,
) -> Trajectory:
    """Deterministic abduction: carry a clean sample up to the latent at T.

    The default pipeline calls this with mode None (plain conditional score);
    guided inversion exists only for ablations.
    """
    _check_grid(sched, grid)
    points = [0, *grid.indices]
    return _run(sched, model, mode, x0, points, slots, Direction.INVERT)


def generate(
    model: EpsilonModel,
    mode: GuidanceMode,
    x_T: np.ndarray,
    slots: ConditionSlots,
    sched: NoiseSchedule,
    grid: TimestepGrid,
) -> Trajectory:
    """Deterministic prediction: carry a latent at T down to a clean sample.

    The final step lands exactly on the clean estimate because
    alpha_bar_0 = 1.
    """
    _check_grid(sched, grid)
    points = [*reversed(grid.indices), 0]
    return _run(sched, model, mode, x_T, points, slots, Direction.GENERATE)


def stochastic_step(
    sched: NoiseSchedule,
    eps: np.ndarray,
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    sigma: float,
    noise: np.ndarray,
) -> np.ndarray:
    """General predict-and-renoise update with explicit noise scale sigma.

    Plumbing for completeness only: counterfactual runs always use sigma = 0,
    where this reduces to the deterministic step.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    var_prev = 1.0 - float(sched.alpha_bar[t_prev])
    if sigma**2 > var_prev:
        raise ValueError(f"sigma^2={sigma**2} exceeds 1 - alpha_bar[{t_prev}]={var_prev}")
    x0_hat = predict_x0(sched, eps, x_t, t)
    direction = math.sqrt(var_prev - sigma**2) * eps
    return sched.signal(t_prev) * x0_hat + direction + sigma * np.asarray(noise)


def _check_grid(sched: NoiseSchedule, grid: TimestepGrid) -> None:
    if grid.last != sched.steps:
        raise ValueError(f"grid must end at T={sched.steps}, got {grid.last}")


def write_trajectory_csv(path, trajectories: dict[int, "Trajectory"]) -> None:
    """Dump trajectories for plotting: one row per (item_id, t) with x components.

    Batched trajectories expand to one row per batch member; their item ids
    are `item_id` for the key plus the row offset.
    """
    import csv

    dims = {s[1].shape[-1] for traj in trajectories.values() for s in traj.states}
    if len(dims) != 1:
        raise ValueError(f"trajectories mix state dimensions {sorted(dims)}")
    dim = dims.pop()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "t"] + [f"x_{j}" for j in range(dim)])
        for item_id, traj in sorted(trajectories.items()):
            for t, state in traj.states:
                rows = state[None, :] if state.ndim == 1 else state
                for offset, row in enumerate(rows):
                    writer.writerow([item_id + offset, t] + [repr(float(v)) for v in row])
