"""Three-step counterfactual pipeline over the diffusion sampler.

Abduction inverts the observation under its factual condition with the
plain conditional score; action updates the attributes through the causal
graph; prediction decodes the latent under the counterfactual condition
with the requested guidance.  The reverse pass re-abducts from the
counterfactual rather than reusing the stored latent, matching the
composed-map definition of reversibility.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .causal import Intervention, Partition, counterfactual_attributes, partition
from .condition import ConditionSlots
from .guidance import CFG, DCFG, EpsilonModel, GuidanceMode, GuidanceSpec
from .sampler import generate, invert
from .schedule import NoiseSchedule, TimestepGrid
from .score import GMMWorld


@dataclass(frozen=True)
class PartitionWeights:
    """Causal two-group guidance: affected weight, invariant weight.

    Resolved into an explicit GuidanceSpec per intervention; attributes named
    in `pinned` form their own groups at weight exactly 1.
    """

    omega_affected: float
    omega_invariant: float
    pinned: tuple[str, ...] = ()


#: Guidance request for a counterfactual run.
CounterfactualMode = GuidanceMode | PartitionWeights

_SAME_MODE = object()


@dataclass
class CounterfactualRecord:
    """One item's factual data, latent, counterfactual, and bookkeeping."""

    x0: np.ndarray
    pa: tuple[int, ...]
    u_attr: tuple[int, ...]
    intervention: Intervention
    pa_cf: tuple[int, ...]
    x_latent: np.ndarray
    x_cf: np.ndarray
    part: Partition
    mode: CounterfactualMode
    x_rev: np.ndarray | None = None
    generation_path: list[tuple[int, np.ndarray]] | None = None


def resolve_mode(
    world: GMMWorld, iv: Intervention, mode: CounterfactualMode
) -> tuple[GuidanceMode, Partition]:
    """Expand partition-based weights into explicit guidance groups."""
    part = partition(world.graph, iv)
    if isinstance(mode, PartitionWeights):
        pinned_idx = tuple(world.graph.index[name] for name in mode.pinned)
        spec = GuidanceSpec.from_partition(
            part, mode.omega_affected, mode.omega_invariant, pinned=pinned_idx
        )
        return DCFG(spec), part
    return mode, part


def counterfactual(
    model: EpsilonModel,
    world: GMMWorld,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    x0: np.ndarray,
    pa: Sequence[int],
    u_attr: Sequence[int],
    iv: Intervention,
    mode: CounterfactualMode = None,
    guided_abduction: bool = False,
) -> CounterfactualRecord:
    """Abduct, act, predict for a single observation."""
    records = counterfactual_batch(
        model,
        world,
        sched,
        grid,
        np.asarray(x0, dtype=np.float64)[None, :],
        [tuple(int(v) for v in pa)],
        [tuple(int(v) for v in u_attr)],
        [iv],
        mode,
        guided_abduction=guided_abduction,
    )
    return records[0]


def reverse(
    model: EpsilonModel,
    world: GMMWorld,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    record: CounterfactualRecord,
    mode: CounterfactualMode = _SAME_MODE,
) -> np.ndarray:
    """Apply the inverse intervention to the counterfactual.

    Restores the factual values on the originally intervened attributes,
    re-runs the full pipeline from x_cf, stores and returns the result.
    By default the forward guidance weights are reused.
    """
    if mode is _SAME_MODE:
        mode = record.mode
    inverse_iv = Intervention(
        {name: record.pa[world.graph.index[name]] for name, _ in record.intervention.assignments}
    )
    clamped = tuple(name for name, _ in record.intervention.assignments)
    back = counterfactual_batch(
        model,
        world,
        sched,
        grid,
        record.x_cf[None, :],
        [record.pa_cf],
        [record.u_attr],
        [inverse_iv],
        mode,
        assume_clamped=clamped,
    )[0]
    record.x_rev = back.x_cf
    return back.x_cf


def counterfactual_batch(
    model: EpsilonModel,
    world: GMMWorld,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    x0: np.ndarray,
    pa: Sequence[tuple[int, ...]],
    u_attr: Sequence[tuple[int, ...]],
    interventions: Sequence[Intervention],
    mode: CounterfactualMode = None,
    guided_abduction: bool = False,
    with_reverse: bool = False,
    assume_clamped: Sequence[str] = (),
) -> list[CounterfactualRecord]:
    """Batched pipeline, vectorized over items that share condition cells.

    Items are grouped by their (factual, counterfactual) attribute pair, so
    each group runs one inversion and one guided generation over a stacked
    state array.  All interventions must target the same attribute set so a
    single partition applies.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    n = x0.shape[0]
    if not (len(pa) == len(u_attr) == len(interventions) == n):
        raise ValueError("x0, pa, u_attr, and interventions must have equal lengths")
    target_sets = {tuple(name for name, _ in iv.assignments) for iv in interventions}
    if len(target_sets) > 1:
        raise ValueError(f"batch mixes interventions on different attribute sets: {sorted(target_sets)}")

    pa_cf = [
        counterfactual_attributes(
            world.graph, pa[i], u_attr[i], interventions[i], assume_clamped=assume_clamped
        )
        for i in range(n)
    ]
    resolved, part = resolve_mode(world, interventions[0], mode)

    x_latent = np.empty_like(x0)
    x_cf = np.empty_like(x0)
    groups: dict[tuple[tuple[int, ...], tuple[int, ...]], list[int]] = {}
    for i in range(n):
        groups.setdefault((pa[i], pa_cf[i]), []).append(i)
    for (pa_key, cf_key), idx in groups.items():
        rows = np.array(idx)
        slots_f = ConditionSlots.from_attributes(pa_key)
        slots_cf = ConditionSlots.from_attributes(cf_key)
        abduction_mode = resolved if guided_abduction else None
        latent = invert(model, abduction_mode, x0[rows], slots_f, sched, grid).final
        x_latent[rows] = latent
        x_cf[rows] = generate(model, resolved, latent, slots_cf, sched, grid).final

    records = [
        CounterfactualRecord(
            x0=x0[i].copy(),
            pa=pa[i],
            u_attr=tuple(int(v) for v in u_attr[i]),
            intervention=interventions[i],
            pa_cf=pa_cf[i],
            x_latent=x_latent[i].copy(),
            x_cf=x_cf[i].copy(),
            part=part,
            mode=mode,
        )
        for i in range(n)
    ]

    if with_reverse:
        inverse_ivs = [
            Intervention(
                {name: pa[i][world.graph.index[name]] for name, _ in interventions[i].assignments}
            )
            for i in range(n)
        ]
        clamped = tuple(name for name, _ in interventions[0].assignments)
        back = counterfactual_batch(
            model, world, sched, grid, x_cf, pa_cf, list(u_attr), inverse_ivs, mode,
            guided_abduction=guided_abduction, assume_clamped=clamped,
        )
        for rec, b in zip(records, back):
            rec.x_rev = b.x_cf
    return records
