"""Synthetic dataset generation from a Gaussian-mixture world."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .causal import sample_attributes
from .score import GMMWorld


@dataclass
class Dataset:
    """Joint samples (x0, pa, exogenous draws) from one world and seed."""

    x0: np.ndarray  # (N, D)
    pa: np.ndarray  # (N, K) int
    u: np.ndarray  # (N, K) int
    seed: int | None = None

    def __len__(self) -> int:
        return self.x0.shape[0]

    def pa_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.pa]

    def u_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.u]


def sample_dataset(world: GMMWorld, n: int, rng: np.random.Generator, seed: int | None = None) -> Dataset:
    """Draw n items: ancestral attributes, then x0 = mu(pa) + sigma0 * z.

    Attribute draws happen item by item in topological order, followed by one
    block of observation noise, so the stream layout is fixed for a given
    world shape.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    pa_rows = np.empty((n, world.k), dtype=np.int64)
    u_rows = np.empty((n, world.k), dtype=np.int64)
    means = np.empty((n, world.dim))
    for i in range(n):
        pa, u = sample_attributes(world.graph, rng)
        pa_rows[i] = pa
        u_rows[i] = u
        means[i] = world.means[pa]
    x0 = means + world.sigma0 * rng.standard_normal((n, world.dim))
    return Dataset(x0=x0, pa=pa_rows, u=u_rows, seed=seed)


def dataset_columns(world: GMMWorld) -> list[str]:
    names = world.graph.names
    return (
        ["item_id"]
        + [f"pa_{n}" for n in names]
        + [f"u_{n}" for n in names]
        + [f"x0_{j}" for j in range(world.dim)]
    )


def write_dataset_csv(path: str | Path, world: GMMWorld, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_columns(world))
        for i in range(len(ds)):
            writer.writerow(
                [i]
                + [int(v) for v in ds.pa[i]]
                + [int(v) for v in ds.u[i]]
                + [repr(float(v)) for v in ds.x0[i]]
            )
