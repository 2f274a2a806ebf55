"""Discrete-attribute structural causal models.

A world is a DAG over categorical attributes.  Roots carry prior
probability vectors; every non-root carries a deterministic lookup table
over (parent values, exogenous draw).  Holding the exogenous draws fixed
while clamping intervened nodes gives exact attribute-level counterfactuals
with no inversion machinery.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

PRIOR_TOL = 1e-9


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    cardinality: int = 2

    def __post_init__(self):
        if self.cardinality < 2:
            raise ValueError(f"attribute {self.name!r}: cardinality must be >= 2")


@dataclass(frozen=True)
class Mechanism:
    """Deterministic assignment table for one non-root attribute.

    `table` is flat, row-major over (parent values in `parents` order,
    exogenous index), i.e. the exogenous index varies fastest.
    """

    parents: tuple[str, ...]
    exo_cardinality: int
    table: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "table", tuple(int(v) for v in self.table))
        if self.exo_cardinality < 1:
            raise ValueError("exogenous cardinality must be >= 1")


@dataclass(frozen=True)
class Intervention:
    """do-operator assignments, attribute name -> forced value."""

    assignments: tuple[tuple[str, int], ...]

    def __init__(self, assignments: Mapping[str, int] | Iterable[tuple[str, int]]):
        items = assignments.items() if isinstance(assignments, Mapping) else assignments
        object.__setattr__(
            self, "assignments", tuple(sorted((str(k), int(v)) for k, v in items))
        )

    def as_dict(self) -> dict[str, int]:
        return dict(self.assignments)

    def __bool__(self) -> bool:
        return bool(self.assignments)


@dataclass(frozen=True)
class Partition:
    """Affected (intervened + descendants) vs invariant attribute indices."""

    affected: frozenset[int]
    invariant: frozenset[int]

    def __post_init__(self):
        if self.affected & self.invariant:
            raise ValueError("affected and invariant sets overlap")


class CausalGraph:
    """Validated attribute DAG with priors, mechanisms, and index helpers."""

    def __init__(
        self,
        nodes: Iterable[AttributeSpec],
        edges: Iterable[tuple[str, str]],
        root_priors: Mapping[str, Iterable[float]],
        mechanisms: Mapping[str, Mechanism],
    ):
        self.nodes = tuple(nodes)
        self.edges = tuple((str(a), str(b)) for a, b in edges)
        self.mechanisms = dict(mechanisms)
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")
        self.names = tuple(names)
        self.index = {n: i for i, n in enumerate(names)}
        self.cardinalities = tuple(n.cardinality for n in self.nodes)

        for a, b in self.edges:
            for end in (a, b):
                if end not in self.index:
                    raise ValueError(f"edge endpoint {end!r} is not a declared attribute")
        mech_edges = {
            (p, child) for child, mech in self.mechanisms.items() for p in mech.parents
        }
        if mech_edges != set(self.edges):
            raise ValueError("edge list does not match mechanism parent declarations")

        children = {n: [] for n in names}
        n_parents = {n: 0 for n in names}
        for a, b in self.edges:
            children[a].append(b)
            n_parents[b] += 1
        self._children = {k: tuple(v) for k, v in children.items()}
        self.roots = tuple(n for n in names if n_parents[n] == 0)

        order, pending = [], dict(n_parents)
        ready = [n for n in names if pending[n] == 0]
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in children[n]:
                pending[c] -= 1
                if pending[c] == 0:
                    ready.append(c)
        if len(order) != len(names):
            cycle = sorted(n for n in names if pending[n] > 0)
            raise ValueError(f"graph contains a cycle through {cycle}")
        self.topological = tuple(order)

        self.root_priors: dict[str, np.ndarray] = {}
        for name in self.roots:
            if name not in root_priors:
                raise ValueError(f"root {name!r} is missing a prior")
            p = np.asarray(list(root_priors[name]), dtype=np.float64)
            card = self.cardinalities[self.index[name]]
            if p.shape != (card,):
                raise ValueError(f"prior for {name!r} must have length {card}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > PRIOR_TOL:
                raise ValueError(f"prior for {name!r} must be nonnegative and sum to 1")
            self.root_priors[name] = p
        extra = set(root_priors) - set(self.roots)
        if extra:
            raise ValueError(f"priors given for non-root attributes {sorted(extra)}")

        for name in names:
            if name in self.roots:
                if name in self.mechanisms:
                    raise ValueError(f"root {name!r} must not carry a mechanism")
                continue
            if name not in self.mechanisms:
                raise ValueError(f"non-root {name!r} is missing a mechanism")
            mech = self.mechanisms[name]
            size = mech.exo_cardinality
            for p in mech.parents:
                size *= self.cardinalities[self.index[p]]
            if len(mech.table) != size:
                raise ValueError(
                    f"mechanism table for {name!r} must be total: expected {size} "
                    f"entries, got {len(mech.table)}"
                )
            card = self.cardinalities[self.index[name]]
            if any(not (0 <= v < card) for v in mech.table):
                raise ValueError(f"mechanism table for {name!r} has out-of-range values")

    @property
    def k(self) -> int:
        return len(self.nodes)

    def mechanism_value(self, name: str, parent_values: Iterable[int], u: int) -> int:
        """Evaluate the lookup table for `name` at given parents and draw."""
        mech = self.mechanisms[name]
        flat = 0
        for p, v in zip(mech.parents, parent_values):
            flat = flat * self.cardinalities[self.index[p]] + int(v)
        flat = flat * mech.exo_cardinality + int(u)
        return mech.table[flat]

    def descendants_of(self, names: Iterable[str]) -> set[str]:
        """Transitive descendants of the given attributes (exclusive)."""
        seen: set[str] = set()
        stack = list(names)
        while stack:
            for c in self._children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def validate_intervention(self, iv: Intervention) -> None:
        for name, value in iv.assignments:
            if name not in self.index:
                raise ValueError(f"intervention on unknown attribute {name!r}")
            if not (0 <= value < self.cardinalities[self.index[name]]):
                raise ValueError(f"intervention value {value} out of range for {name!r}")

    def enumerate_assignments(self) -> np.ndarray:
        """All joint attribute assignments, shape (J, K), mixed-radix order."""
        grids = [range(c) for c in self.cardinalities]
        return np.array(list(itertools.product(*grids)), dtype=np.int64)

    def assignment_prior(self, pa: Iterable[int]) -> float:
        """Joint prior probability of one full assignment."""
        pa = tuple(int(v) for v in pa)
        prob = 1.0
        for name in self.topological:
            i = self.index[name]
            if name in self.roots:
                prob *= float(self.root_priors[name][pa[i]])
            else:
                mech = self.mechanisms[name]
                parents = tuple(pa[self.index[p]] for p in mech.parents)
                hits = sum(
                    self.mechanism_value(name, parents, u) == pa[i]
                    for u in range(mech.exo_cardinality)
                )
                prob *= hits / mech.exo_cardinality
        return prob


def sample_attributes(graph: CausalGraph, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Ancestral sample: returns (pa, u) with one exogenous entry per node.

    Root entries of `u` store the sampled value itself (a root's value is its
    exogenous realization); mechanism entries store the exogenous index.
    """
    pa = [0] * graph.k
    u = [0] * graph.k
    for name in graph.topological:
        i = graph.index[name]
        if name in graph.roots:
            value = int(rng.choice(graph.cardinalities[i], p=graph.root_priors[name]))
            pa[i] = value
            u[i] = value
        else:
            mech = graph.mechanisms[name]
            draw = int(rng.integers(mech.exo_cardinality))
            parents = tuple(pa[graph.index[p]] for p in mech.parents)
            pa[i] = graph.mechanism_value(name, parents, draw)
            u[i] = draw
    return tuple(pa), tuple(u)


def counterfactual_attributes(
    graph: CausalGraph,
    pa: Iterable[int],
    u: Iterable[int],
    iv: Intervention,
    assume_clamped: Iterable[str] = (),
) -> tuple[int, ...]:
    """Attribute-level counterfactual: hold u fixed, clamp, re-evaluate.

    Non-descendants of the intervened nodes keep their factual values.
    `assume_clamped` names attributes whose values in `pa` were forced by an
    earlier intervention; they are exempt from the consistency check (their
    exogenous entries are vestigial while clamped).
    """
    graph.validate_intervention(iv)
    pa = tuple(int(v) for v in pa)
    u = tuple(int(v) for v in u)
    if not is_consistent(graph, pa, u, ignore=assume_clamped):
        raise ValueError("(pa, u) is inconsistent with the graph mechanisms")
    forced = iv.as_dict()
    out = [0] * graph.k
    for name in graph.topological:
        i = graph.index[name]
        if name in forced:
            out[i] = forced[name]
        elif name in graph.roots:
            out[i] = u[i]
        else:
            mech = graph.mechanisms[name]
            parents = tuple(out[graph.index[p]] for p in mech.parents)
            out[i] = graph.mechanism_value(name, parents, u[i])
    return tuple(out)


def is_consistent(
    graph: CausalGraph, pa: Iterable[int], u: Iterable[int], ignore: Iterable[str] = ()
) -> bool:
    """True when re-evaluating the mechanisms under `u` reproduces `pa`.

    Attributes named in `ignore` are skipped (previously clamped values)."""
    pa = tuple(int(v) for v in pa)
    u = tuple(int(v) for v in u)
    skip = set(ignore)
    for name in graph.topological:
        i = graph.index[name]
        if name in skip:
            continue
        if name in graph.roots:
            if pa[i] != u[i]:
                return False
        else:
            mech = graph.mechanisms[name]
            if not (0 <= u[i] < mech.exo_cardinality):
                return False
            parents = tuple(pa[graph.index[p]] for p in mech.parents)
            if graph.mechanism_value(name, parents, u[i]) != pa[i]:
                return False
    return True


def partition(graph: CausalGraph, iv: Intervention) -> Partition:
    """Intervened nodes plus their transitive descendants vs the complement."""
    graph.validate_intervention(iv)
    targets = [name for name, _ in iv.assignments]
    affected_names = set(targets) | graph.descendants_of(targets)
    affected = frozenset(graph.index[n] for n in affected_names)
    invariant = frozenset(range(graph.k)) - affected
    return Partition(affected=affected, invariant=invariant)
