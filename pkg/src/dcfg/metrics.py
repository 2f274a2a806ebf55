"""Counterfactual quality metrics: effectiveness, reversibility, composition.

Effectiveness is the AUROC of the exact attribute posterior evaluated on
counterfactuals against the counterfactual labels; shifts are reported in
AUROC percentage points relative to a baseline batch.  Reversibility is the
per-coordinate error between an observation and its double-counterfactual
reconstruction; mean squared error stands in for the perceptual metric,
which has no meaning in a low-dimensional synthetic space.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binom, rankdata

from .counterfactual import CounterfactualRecord, counterfactual
from .causal import Intervention
from .guidance import EpsilonModel
from .schedule import NoiseSchedule, TimestepGrid
from .score import GMMWorld, bayes_posterior


def auroc(pairs: Sequence[tuple[float, int]]) -> float:
    """Rank-based Mann-Whitney estimator with average ranks for ties."""
    scores = np.array([s for s, _ in pairs], dtype=np.float64)
    labels = np.array([l for _, l in pairs], dtype=np.int64)
    return auroc_arrays(scores, labels)


def auroc_arrays(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"AUROC needs both classes; got {n_pos} positives of {len(labels)}")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def posterior_scores(world: GMMWorld, x: np.ndarray, attribute: int) -> np.ndarray:
    """P(a_i = 1 | x) for every row; binary attributes only."""
    if world.graph.cardinalities[attribute] != 2:
        raise ValueError("posterior scoring assumes a binary attribute")
    return bayes_posterior(world, x, attribute)[..., 1]


def effectiveness(world: GMMWorld, records: Sequence[CounterfactualRecord]) -> dict[str, float]:
    """Per-attribute AUROC of the exact posterior against counterfactual labels."""
    x_cf = np.stack([r.x_cf for r in records])
    labels = np.array([r.pa_cf for r in records])
    return effectiveness_arrays(world, x_cf, labels)


def effectiveness_arrays(
    world: GMMWorld, x_cf: np.ndarray, labels_cf: np.ndarray
) -> dict[str, float]:
    """Array form of `effectiveness`.

    Attributes whose label column is single-class (or non-binary) report NaN
    rather than failing the whole evaluation.
    """
    out: dict[str, float] = {}
    for i, name in enumerate(world.graph.names):
        if world.graph.cardinalities[i] != 2:
            out[name] = float("nan")
            continue
        try:
            out[name] = auroc_arrays(posterior_scores(world, x_cf, i), labels_cf[:, i])
        except ValueError:
            out[name] = float("nan")
    return out


def per_item_abs_error(x0: np.ndarray, x_other: np.ndarray) -> np.ndarray:
    """Per-item mean absolute per-coordinate deviation."""
    return np.mean(np.abs(np.asarray(x0) - np.asarray(x_other)), axis=-1)


def reversibility(records: Sequence[CounterfactualRecord]) -> tuple[float, float]:
    """(MAE, MSE) between originals and reversed counterfactuals."""
    missing = [i for i, r in enumerate(records) if r.x_rev is None]
    if missing:
        raise ValueError(f"records {missing[:5]} lack a reversed image")
    x0 = np.stack([r.x0 for r in records])
    x_rev = np.stack([r.x_rev for r in records])
    diff = x0 - x_rev
    return float(np.mean(np.abs(diff))), float(np.mean(diff**2))


def composition(
    model: EpsilonModel,
    world: GMMWorld,
    sched: NoiseSchedule,
    grid: TimestepGrid,
    x0: np.ndarray,
    pa: Sequence[int],
) -> float:
    """Reconstruction error of the null-intervention pipeline, unguided.

    Diagnostic only; guided variants are excluded because a null intervention
    gives the grouped and global combinators nothing to distinguish.
    """
    rec = counterfactual(
        model, world, sched, grid, x0, pa, _trivial_u(world, pa), Intervention({}), mode=None
    )
    return float(np.mean(np.abs(rec.x_cf - np.asarray(x0))))


def _trivial_u(world: GMMWorld, pa: Sequence[int]) -> tuple[int, ...]:
    """Exogenous vector consistent with `pa` for worlds without mechanisms."""
    if world.graph.mechanisms:
        raise ValueError("composition over mechanism graphs needs explicit exogenous draws")
    return tuple(int(v) for v in pa)


def delta_points(value: float, baseline: float) -> float:
    """AUROC difference in percentage points."""
    return 100.0 * (value - baseline)


def paired_sign_test(diffs: np.ndarray) -> float:
    """One-sided sign test p-value for H1: median(diffs) > 0; zeros dropped."""
    diffs = np.asarray(diffs)
    wins = int(np.sum(diffs > 0))
    n = wins + int(np.sum(diffs < 0))
    if n == 0:
        return 1.0
    return float(binom.sf(wins - 1, n, 0.5))


def signed_amplification(
    world: GMMWorld,
    attribute: int,
    labels: np.ndarray,
    x_cf: np.ndarray,
    x_cf_baseline: np.ndarray,
) -> np.ndarray:
    """Per-item posterior shift toward the conditioned label vs a baseline.

    Positive entries mean the attribute was pushed further toward its label
    than the baseline pipeline pushed it.
    """
    sign = 2.0 * labels - 1.0
    shift = posterior_scores(world, x_cf, attribute) - posterior_scores(
        world, x_cf_baseline, attribute
    )
    return sign * shift


@dataclass
class EvalReport:
    """One evaluated configuration against the unit-weight baseline."""

    label: str
    auroc_by_attr: dict[str, float]
    delta_by_attr: dict[str, float]
    reversibility_mae: float
    reversibility_mse: float
    composition_mae: float
    sample_count: int
    fingerprint: str

    def __post_init__(self):
        for v in (self.reversibility_mae, self.reversibility_mse, self.composition_mae):
            if not math.isnan(v) and v < 0:
                raise ValueError("error metrics must be nonnegative")


def report_columns(attr_names: Sequence[str]) -> list[str]:
    cols = ["configuration"]
    for n in attr_names:
        cols += [f"auroc_{n}", f"delta_{n}"]
    cols += ["rev_mae", "mse_lpips_standin", "comp_mae", "n", "fingerprint"]
    return cols


def write_report_csv(path: str | Path, attr_names: Sequence[str], reports: Sequence[EvalReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(report_columns(attr_names))
        for r in reports:
            row: list = [r.label]
            for n in attr_names:
                row += [_fmt(r.auroc_by_attr.get(n)), _fmt(r.delta_by_attr.get(n))]
            row += [
                _fmt(r.reversibility_mae),
                _fmt(r.reversibility_mse),
                _fmt(r.composition_mae),
                r.sample_count,
                r.fingerprint,
            ]
            writer.writerow(row)


def write_plot_data_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    """Long-form (configuration, attribute, delta) rows for grouped bars."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["configuration", "attribute", "delta"])
        for r in reports:
            for name, d in r.delta_by_attr.items():
                writer.writerow([r.label, name, _fmt(d)])


def summarize(attr_names: Sequence[str], reports: Sequence[EvalReport]) -> str:
    lines = ["configuration".ljust(26) + "  ".join(f"{n:>14}" for n in attr_names) + f"{'rev_mae':>10}"]
    for r in reports:
        cells = []
        for n in attr_names:
            a = r.auroc_by_attr.get(n, float("nan"))
            d = r.delta_by_attr.get(n, float("nan"))
            cells.append(f"{100 * a:6.1f}/{d:+5.1f}")
        rev = f"{r.reversibility_mae:10.4f}" if not math.isnan(r.reversibility_mae) else " " * 10
        lines.append(r.label.ljust(26) + "  ".join(f"{c:>14}" for c in cells) + rev)
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    v = float(value)
    return "nan" if math.isnan(v) else repr(v)
