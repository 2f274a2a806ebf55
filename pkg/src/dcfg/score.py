"""Exact noise-prediction oracle on attribute-conditioned Gaussian mixtures.

Observations are x0 = mu(pa) + sigma0 * z with z standard normal, so the
marginal of the forward diffusion at step t, conditioned on any subset of
attribute values, is again a Gaussian mixture with component means
sqrt(alpha_bar_t) * mu(pa) and shared isotropic variance
v_t = alpha_bar_t * sigma0^2 + (1 - alpha_bar_t).  The optimal noise
predictor and every attribute posterior follow in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .causal import CausalGraph
from .condition import ConditionSlots
from .schedule import NoiseSchedule

LOG_ZERO = -1e300


@dataclass
class GMMWorld:
    """Attribute graph plus the Gaussian observation model x0 | pa.

    Means must be provided for every joint assignment so that interventions
    may condition on combinations the prior never visits.  Immutable after
    construction.
    """

    graph: CausalGraph
    dim: int
    means: dict[tuple[int, ...], np.ndarray]
    sigma0: float
    _assignments: np.ndarray = field(init=False, repr=False)
    _mean_matrix: np.ndarray = field(init=False, repr=False)
    _log_prior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ValueError(f"sigma0 must be nonnegative, got {self.sigma0}")
        self._assignments = self.graph.enumerate_assignments()
        rows = []
        for pa in self._assignments:
            key = tuple(int(v) for v in pa)
            if key not in self.means:
                if self.graph.assignment_prior(key) > 0.0:
                    raise ValueError(f"missing mean for assignment {key} with nonzero prior")
                rows.append(np.full(self.dim, np.nan))
                continue
            mu = np.asarray(self.means[key], dtype=np.float64)
            if mu.shape != (self.dim,):
                raise ValueError(f"mean for {key} must have shape ({self.dim},)")
            rows.append(mu)
        self._mean_matrix = np.array(rows)
        priors = np.array([self.graph.assignment_prior(tuple(pa)) for pa in self._assignments])
        with np.errstate(divide="ignore"):
            self._log_prior = np.where(priors > 0.0, np.log(np.maximum(priors, 1e-300)), LOG_ZERO)
        self._cond_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def k(self) -> int:
        return self.graph.k

    def conditional_components(self, slots: ConditionSlots) -> tuple[np.ndarray, np.ndarray]:
        """(means, normalized log-weights) of assignments consistent with `slots`.

        Assignments carrying zero prior mass are excluded; conditioning with no
        remaining mass is rejected.
        """
        key = slots.values
        cached = self._cond_cache.get(key)
        if cached is not None:
            return cached
        if len(slots) != self.k:
            raise ValueError(f"expected {self.k} slots, got {len(slots)}")
        keep = np.ones(len(self._assignments), dtype=bool)
        for i, v in enumerate(slots.values):
            if v is not None:
                keep &= self._assignments[:, i] == v
        keep &= self._log_prior > LOG_ZERO
        if not np.any(keep):
            raise ValueError(f"conditioning {slots.values} has zero prior probability")
        log_w = self._log_prior[keep]
        log_w = log_w - logsumexp(log_w)
        out = (self._mean_matrix[keep], log_w)
        self._cond_cache[key] = out
        return out

    def slot_prior(self, slots: ConditionSlots) -> float:
        """Marginal prior probability of the valued slots."""
        keep = np.ones(len(self._assignments), dtype=bool)
        for i, v in enumerate(slots.values):
            if v is not None:
                keep &= self._assignments[:, i] == v
        mass = np.exp(self._log_prior[keep & (self._log_prior > LOG_ZERO)])
        return float(mass.sum())


def _noisy_variance(world: GMMWorld, sched: NoiseSchedule, t: int) -> float:
    a = float(sched.alpha_bar[t])
    return a * world.sigma0**2 + (1.0 - a)


def analytic_epsilon(
    world: GMMWorld,
    sched: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    slots: ConditionSlots,
) -> np.ndarray:
    """Optimal noise prediction -sqrt(1 - alpha_bar_t) * grad log p(x_t | slots).

    Accepts a single state of shape (D,) or a batch (N, D); responsibilities
    are computed with log-sum-exp stabilization.
    """
    if not (1 <= t <= sched.steps):
        raise ValueError(f"t must be in 1..{sched.steps}, got {t}")
    x = np.asarray(x_t, dtype=np.float64)
    mus, log_w = world.conditional_components(slots)
    a = float(sched.alpha_bar[t])
    v = _noisy_variance(world, sched, t)
    centers = math.sqrt(a) * mus  # (J, D)
    diff = x[..., None, :] - centers  # (..., J, D)
    log_resp = log_w - 0.5 * np.sum(diff * diff, axis=-1) / v
    log_resp = log_resp - logsumexp(log_resp, axis=-1, keepdims=True)
    resp = np.exp(log_resp)
    posterior_mean = resp @ centers  # (..., D)
    return math.sqrt(1.0 - a) * (x - posterior_mean) / v


def log_density(
    world: GMMWorld,
    sched: NoiseSchedule,
    x_t: np.ndarray,
    t: int,
    slots: ConditionSlots,
) -> np.ndarray:
    """log p(x_t | slots) of the diffused conditional mixture at step t."""
    if not (0 <= t <= sched.steps):
        raise ValueError(f"t must be in 0..{sched.steps}, got {t}")
    x = np.asarray(x_t, dtype=np.float64)
    mus, log_w = world.conditional_components(slots)
    a = float(sched.alpha_bar[t])
    v = a * world.sigma0**2 + (1.0 - a)
    diff = x[..., None, :] - math.sqrt(a) * mus
    log_comp = log_w - 0.5 * np.sum(diff * diff, axis=-1) / v
    const = -0.5 * world.dim * math.log(2.0 * math.pi * v)
    return logsumexp(log_comp, axis=-1) + const


def bayes_posterior(world: GMMWorld, x0: np.ndarray, attribute: int) -> np.ndarray:
    """Exact posterior P(a_i = v | x0) over the values of attribute i.

    Shape (cardinality,) for a single x0, (N, cardinality) for a batch.
    """
    x = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    card = world.graph.cardinalities[attribute]
    if world.sigma0 == 0.0:
        raise ValueError("posterior is degenerate at sigma0 = 0")
    v = world.sigma0**2
    keep = world._log_prior > LOG_ZERO
    mus = world._mean_matrix[keep]
    log_pri = world._log_prior[keep]
    values = world._assignments[keep, attribute]
    diff = x[..., None, :] - mus
    log_joint = log_pri - 0.5 * np.sum(diff * diff, axis=-1) / v
    log_by_value = np.stack(
        [
            logsumexp(log_joint[..., values == c], axis=-1) if np.any(values == c) else np.full(x.shape[:-1], -np.inf)
            for c in range(card)
        ],
        axis=-1,
    )
    log_by_value = log_by_value - logsumexp(log_by_value, axis=-1, keepdims=True)
    return np.exp(log_by_value)


@dataclass
class AnalyticBackend:
    """Noise-prediction backend wrapping the closed-form oracle."""

    world: GMMWorld
    sched: NoiseSchedule

    def __call__(self, x_t: np.ndarray, t: int, slots: ConditionSlots) -> np.ndarray:
        return analytic_epsilon(self.world, self.sched, x_t, t, slots)
