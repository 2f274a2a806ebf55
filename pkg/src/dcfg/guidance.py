"""Score combinators: global and group-decoupled classifier-free guidance.

Both combinators are affine recombinations of backend evaluations under
masked conditions.  The unconditional evaluation is computed once per call
and shared across groups; a single group covering every attribute with one
weight reproduces global guidance bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Union

import numpy as np

from .causal import Partition
from .condition import ConditionSlots, mask

#: A noise-prediction backend: (x_t, t, slots) -> epsilon, batched over x_t.
EpsilonModel = Callable[[np.ndarray, int, ConditionSlots], np.ndarray]


@dataclass(frozen=True)
class GuidanceSpec:
    """Disjoint attribute groups with per-group nonnegative weights."""

    groups: tuple[tuple[tuple[int, ...], float], ...]

    def __init__(self, groups: Iterable[tuple[Iterable[int], float]]):
        norm = tuple(
            (tuple(sorted(int(i) for i in idx)), float(w)) for idx, w in groups
        )
        object.__setattr__(self, "groups", norm)
        seen: set[int] = set()
        for idx, w in norm:
            if len(set(idx)) != len(idx):
                raise ValueError(f"group {idx} repeats an attribute")
            if seen & set(idx):
                raise ValueError("guidance groups must be pairwise disjoint")
            seen |= set(idx)
            if not (math.isfinite(w) and w >= 0.0):
                raise ValueError(f"guidance weight must be finite and >= 0, got {w}")

    @classmethod
    def from_partition(
        cls,
        part: Partition,
        omega_affected: float,
        omega_invariant: float,
        pinned: Iterable[int] = (),
    ) -> "GuidanceSpec":
        """Two causal groups; `pinned` attributes split off at weight 1."""
        pinned = frozenset(int(i) for i in pinned)
        groups: list[tuple[tuple[int, ...], float]] = []
        aff = tuple(sorted(part.affected - pinned))
        inv = tuple(sorted(part.invariant - pinned))
        if aff:
            groups.append((aff, omega_affected))
        if inv:
            groups.append((inv, omega_invariant))
        for i in sorted(pinned):
            groups.append(((i,), 1.0))
        return cls(groups)

    @property
    def covered(self) -> frozenset[int]:
        return frozenset(i for idx, _ in self.groups for i in idx)


@dataclass(frozen=True)
class CFG:
    """Global guidance with a single weight."""

    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega >= 0.0):
            raise ValueError(f"omega must be finite and >= 0, got {self.omega}")


@dataclass(frozen=True)
class DCFG:
    """Decoupled guidance with explicit attribute groups."""

    spec: GuidanceSpec


#: Guidance mode of a sampling pass; None means the plain conditional score.
GuidanceMode = Union[None, CFG, DCFG]


def epsilon_cfg(
    model: EpsilonModel, x_t: np.ndarray, t: int, slots: ConditionSlots, omega: float
) -> np.ndarray:
    """eps(null) + omega * (eps(slots) - eps(null)).

    The interpolation collapses exactly at the trivial weights, where one of
    the two evaluations is also skipped.
    """
    if not (math.isfinite(omega) and omega >= 0.0):
        raise ValueError(f"omega must be finite and >= 0, got {omega}")
    if omega == 1.0:
        return model(x_t, t, slots)
    eps_null = model(x_t, t, ConditionSlots.null(len(slots)))
    if omega == 0.0:
        return eps_null
    eps_cond = model(x_t, t, slots)
    return eps_null + omega * (eps_cond - eps_null)


def epsilon_dcfg(
    model: EpsilonModel, x_t: np.ndarray, t: int, slots: ConditionSlots, spec: GuidanceSpec
) -> np.ndarray:
    """eps(null) + sum_m omega_m * (eps(mask(slots, group_m)) - eps(null)).

    Attributes outside every group are nulled in each masked call.
    """
    k = len(slots)
    for idx, _ in spec.groups:
        if idx and idx[-1] >= k:
            raise ValueError(f"group index {idx[-1]} out of range for {k} slots")
    eps_null = model(x_t, t, ConditionSlots.null(k))
    out = eps_null.copy()
    for idx, w in spec.groups:
        out += w * (model(x_t, t, mask(slots, idx)) - eps_null)
    return out


def guided_epsilon(
    model: EpsilonModel, x_t: np.ndarray, t: int, slots: ConditionSlots, mode: GuidanceMode
) -> np.ndarray:
    """Dispatch on the guidance mode; None is the plain conditional score."""
    if mode is None:
        return model(x_t, t, slots)
    if isinstance(mode, CFG):
        return epsilon_cfg(model, x_t, t, slots, mode.omega)
    if isinstance(mode, DCFG):
        return epsilon_dcfg(model, x_t, t, slots, mode.spec)
    raise TypeError(f"unsupported guidance mode {mode!r}")
