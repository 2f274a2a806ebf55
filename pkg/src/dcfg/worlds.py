"""Built-in attribute graphs and the mixture-means policy.

Three graphs mirror the shapes used throughout the evaluation protocol:
three independent binaries, two independent binaries (the default), and a
four-attribute DAG in which age is a parent of finding.  Means place the
2^K cell centers at scale * M * (2 pa - 1): axis-aligned columns when the
attribute count fits the ambient dimension, otherwise a seeded projection
with orthonormal rows.
"""
from __future__ import annotations

import numpy as np

from .causal import AttributeSpec, CausalGraph, Mechanism
from .score import GMMWorld

DEFAULT_DIM = 2
DEFAULT_SCALE = 0.5
DEFAULT_SIGMA0 = 0.5

BUILTIN_GRAPHS = ("two_binary", "three_binary", "age_finding")


def two_binary(correlation: float = 0.0) -> CausalGraph:
    """Two binary attributes; independent unless a correlation is requested.

    With correlation rho, a2 copies a1 with probability (1 + rho) / 2 via a
    four-valued exogenous draw, keeping full support for |rho| < 1.
    """
    if not (-1.0 < correlation < 1.0):
        raise ValueError(f"correlation must be in (-1, 1), got {correlation}")
    if correlation == 0.0:
        nodes = [AttributeSpec("a1"), AttributeSpec("a2")]
        priors = {"a1": (0.5, 0.5), "a2": (0.5, 0.5)}
        return CausalGraph(nodes, edges=(), root_priors=priors, mechanisms={})
    p_copy = (1.0 + correlation) / 2.0
    n_copy = round(p_copy * 4)
    if not (0 < n_copy < 4):
        raise ValueError(f"correlation {correlation} is not representable with 4 exogenous draws")
    # u < n_copy copies a1, otherwise flips it; exo draws are uniform.
    table = []
    for a1 in (0, 1):
        for u in range(4):
            table.append(a1 if u < n_copy else 1 - a1)
    nodes = [AttributeSpec("a1"), AttributeSpec("a2")]
    mech = Mechanism(parents=("a1",), exo_cardinality=4, table=tuple(table))
    return CausalGraph(
        nodes, edges=(("a1", "a2"),), root_priors={"a1": (0.5, 0.5)}, mechanisms={"a2": mech}
    )


def three_binary() -> CausalGraph:
    """Three independent balanced binary attributes."""
    nodes = [AttributeSpec("a1"), AttributeSpec("a2"), AttributeSpec("a3")]
    priors = {n.name: (0.5, 0.5) for n in nodes}
    return CausalGraph(nodes, edges=(), root_priors=priors, mechanisms={})


def age_finding() -> CausalGraph:
    """Four binary attributes with one edge: age -> finding.

    P(finding = 1 | age) is 0.25 / 0.75, realized by a four-valued exogenous
    draw so every joint assignment keeps positive prior mass.
    """
    nodes = [
        AttributeSpec("race"),
        AttributeSpec("sex"),
        AttributeSpec("age"),
        AttributeSpec("finding"),
    ]
    priors = {"race": (0.5, 0.5), "sex": (0.5, 0.5), "age": (0.5, 0.5)}
    table = []
    for age in (0, 1):
        threshold = 1 if age == 0 else 3
        for u in range(4):
            table.append(1 if u < threshold else 0)
    mech = Mechanism(parents=("age",), exo_cardinality=4, table=tuple(table))
    return CausalGraph(
        nodes, edges=(("age", "finding"),), root_priors=priors, mechanisms={"finding": mech}
    )


def builtin_graph(name: str, correlation: float = 0.0) -> CausalGraph:
    if name == "two_binary":
        return two_binary(correlation)
    if correlation != 0.0:
        raise ValueError(f"correlation knob is only supported on two_binary, not {name!r}")
    if name == "three_binary":
        return three_binary()
    if name == "age_finding":
        return age_finding()
    raise ValueError(f"unknown builtin graph {name!r}; choose from {BUILTIN_GRAPHS}")


def mixture_means(
    graph: CausalGraph, dim: int, scale: float, means_seed: int = 0
) -> dict[tuple[int, ...], np.ndarray]:
    """Cell centers scale * M @ s(pa) with s mapping values into [-1, 1].

    M has axis-aligned columns when K <= dim; otherwise it is a seeded
    dim x K matrix with orthonormal rows so centers stay at scale sqrt(K).
    """
    k = graph.k
    if k <= dim:
        projection = np.eye(dim)[:, :k]
    else:
        rng = np.random.default_rng(means_seed)
        gauss = rng.standard_normal((k, dim))
        q, _ = np.linalg.qr(gauss)
        projection = q[:, :dim].T  # (dim, k), orthonormal rows
    means = {}
    for pa in graph.enumerate_assignments():
        key = tuple(int(v) for v in pa)
        signed = np.array(
            [2.0 * v / (c - 1) - 1.0 for v, c in zip(key, graph.cardinalities)]
        )
        means[key] = scale * (projection @ signed)
    return means


def builtin_world(
    name: str = "two_binary",
    dim: int = DEFAULT_DIM,
    scale: float = DEFAULT_SCALE,
    sigma0: float = DEFAULT_SIGMA0,
    means_seed: int = 0,
    correlation: float = 0.0,
) -> GMMWorld:
    graph = builtin_graph(name, correlation)
    means = mixture_means(graph, dim, scale, means_seed)
    return GMMWorld(graph=graph, dim=dim, means=means, sigma0=sigma0)
