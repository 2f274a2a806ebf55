"""Structured conditioning: per-attribute slots, masking, dropout, embedding.

Conditioning stays in slot form (value-or-null per attribute) through the
whole pipeline; the dense concatenated embedding is applied only at the
trainable-denoiser boundary.  Null slots embed as zero blocks, so masking
before embedding equals zeroing blocks after embedding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class ConditionSlots:
    """Length-K condition with per-attribute value or None (the null token)."""

    values: tuple[int | None, ...]

    def __post_init__(self):
        vals = tuple(None if v is None else int(v) for v in self.values)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_attributes(cls, pa: Iterable[int]) -> "ConditionSlots":
        return cls(tuple(int(v) for v in pa))

    @classmethod
    def null(cls, k: int) -> "ConditionSlots":
        return cls((None,) * k)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def is_all_null(self) -> bool:
        return all(v is None for v in self.values)

    @property
    def valued_indices(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.values) if v is not None)


def mask(slots: ConditionSlots, group: Iterable[int]) -> ConditionSlots:
    """Keep slots in `group`, replace all others with the null token."""
    keep = set(int(i) for i in group)
    k = len(slots)
    bad = [i for i in keep if not (0 <= i < k)]
    if bad:
        raise ValueError(f"mask indices {sorted(bad)} out of range for {k} slots")
    return ConditionSlots(tuple(v if i in keep else None for i, v in enumerate(slots.values)))


def dropout(slots: ConditionSlots, p: float, rng: np.random.Generator) -> ConditionSlots:
    """Joint classifier-free dropout: the whole vector becomes null with
    probability p, otherwise it is returned unchanged.  Never per-slot."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if rng.random() < p:
        return ConditionSlots.null(len(slots))
    return slots


@dataclass(frozen=True)
class SplitEmbedder:
    """Per-attribute embedding tables; attribute i maps value v to tables[i][v].

    The dense condition vector is the concatenation of the K per-attribute
    blocks, each of width d; null slots contribute zero blocks.
    """

    tables: tuple[np.ndarray, ...]

    def __post_init__(self):
        tabs = tuple(np.asarray(t, dtype=np.float64) for t in self.tables)
        object.__setattr__(self, "tables", tabs)
        if not tabs:
            raise ValueError("embedder needs at least one attribute table")
        widths = {t.shape[1] for t in tabs}
        if any(t.ndim != 2 for t in tabs) or len(widths) != 1:
            raise ValueError("all tables must be 2-D with a common embedding width")

    @property
    def k(self) -> int:
        return len(self.tables)

    @property
    def d(self) -> int:
        return self.tables[0].shape[1]

    @property
    def width(self) -> int:
        return self.k * self.d

    def embed(self, slots: ConditionSlots) -> np.ndarray:
        """Concatenate per-attribute embeddings; zeros for null slots."""
        if len(slots) != self.k:
            raise ValueError(f"expected {self.k} slots, got {len(slots)}")
        blocks = []
        for table, v in zip(self.tables, slots.values):
            if v is None:
                blocks.append(np.zeros(self.d))
            else:
                if not (0 <= v < table.shape[0]):
                    raise ValueError(f"slot value {v} out of range for table of size {table.shape[0]}")
                blocks.append(table[v])
        return np.concatenate(blocks)


def init_embedder(
    cardinalities: Iterable[int], d: int, rng: np.random.Generator | None = None
) -> SplitEmbedder:
    """Zero-initialized tables: the conditional branch starts identical to the
    unconditional one and only moves once value slots receive gradient."""
    del rng  # reserved for non-zero initialization schemes
    return SplitEmbedder(tuple(np.zeros((int(c), d)) for c in cardinalities))
