import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcfg.causal import AttributeSpec, CausalGraph, Intervention
from dcfg.counterfactual import counterfactual_batch
from dcfg.data import sample_dataset
from dcfg.metrics import (
    auroc,
    auroc_arrays,
    composition,
    delta_points,
    effectiveness,
    effectiveness_arrays,
    paired_sign_test,
    per_item_abs_error,
    reversibility,
)
from dcfg.schedule import build_schedule, make_grid
from dcfg.score import AnalyticBackend, GMMWorld
from dcfg.worlds import builtin_world


def test_auroc_perfect_separation():
    assert auroc([(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)]) == 1.0


def test_auroc_constant_scores_are_chance():
    assert auroc([(0.5, 1), (0.5, 0), (0.5, 1), (0.5, 0)]) == 0.5


def test_auroc_enumerated_pairs():
    # Positive-negative pairs: (.35,.1) win, (.35,.4) loss, (.8,.1) win,
    # (.8,.4) win -> 3 of 4.
    assert auroc([(0.1, 0), (0.4, 0), (0.35, 1), (0.8, 1)]) == 0.75


def test_auroc_rejects_single_class():
    with pytest.raises(ValueError, match="both classes"):
        auroc([(0.3, 1), (0.9, 1)])


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_auroc_invariant_under_monotone_transforms(data):
    n = data.draw(st.integers(min_value=4, max_value=40))
    # Quantized scores: distinct values stay distinct through exp().
    scores = np.array(data.draw(st.lists(
        st.integers(min_value=-80, max_value=80), min_size=n, max_size=n
    ))) / 16.0
    labels = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    if labels.sum() in (0, n):
        labels[0], labels[-1] = 0, 1
    base = auroc_arrays(scores, labels)
    assert auroc_arrays(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert auroc_arrays(3.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)


def test_reversibility_closed_forms():
    class Rec:
        def __init__(self, x0, x_rev):
            self.x0, self.x_rev = np.asarray(x0, float), np.asarray(x_rev, float)

    same = [Rec([1.0, 2.0], [1.0, 2.0])]
    assert reversibility(same) == (0.0, 0.0)
    shifted = [Rec([1.0, 2.0], [1.1, 2.1]), Rec([0.0, 0.0], [0.1, 0.1])]
    mae, mse = reversibility(shifted)
    assert mae == pytest.approx(0.1, abs=1e-12)
    assert mse == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(ValueError, match="lack a reversed"):
        reversibility([Rec([0.0], [0.0]), type("R", (), {"x0": np.zeros(1), "x_rev": None})()])


def test_reversibility_zero_iff_equal(rng):
    class Rec:
        def __init__(self, x0, x_rev):
            self.x0, self.x_rev = x0, x_rev

    x0 = rng.standard_normal((5, 2))
    recs = [Rec(a, a.copy()) for a in x0]
    assert reversibility(recs) == (0.0, 0.0)
    recs[2].x_rev = recs[2].x_rev + 1e-3
    mae, mse = reversibility(recs)
    assert mae > 0 and mse > 0


def test_effectiveness_on_separated_world_unguided():
    world = builtin_world("two_binary", scale=3.0, sigma0=0.5)
    sched = build_schedule("linear", 100)
    grid = make_grid(100, 1)
    backend = AnalyticBackend(world, sched)
    rng = np.random.default_rng(0)
    ds = sample_dataset(world, 300, rng)
    pa, u = ds.pa_tuples(), ds.u_tuples()
    ivs = [Intervention({"a1": 1 - p[0]}) for p in pa]
    recs = counterfactual_batch(backend, world, sched, grid, ds.x0, pa, u, ivs, None)
    eff = effectiveness(world, recs)
    assert eff["a1"] > 0.9


def test_effectiveness_shuffled_labels_are_chance(rng):
    world = builtin_world("two_binary")
    x = rng.standard_normal((500, 2))
    labels = np.column_stack([rng.integers(0, 2, 500), rng.integers(0, 2, 500)])
    eff = effectiveness_arrays(world, x, labels)
    assert abs(eff["a1"] - 0.5) < 0.05
    assert abs(eff["a2"] - 0.5) < 0.05


def test_effectiveness_reports_nan_for_degenerate_labels(rng):
    world = builtin_world("two_binary")
    x = rng.standard_normal((20, 2))
    labels = np.column_stack([np.ones(20, dtype=int), rng.integers(0, 2, 20)])
    eff = effectiveness_arrays(world, x, labels)
    assert math.isnan(eff["a1"])
    assert not math.isnan(eff["a2"])


def test_delta_of_baseline_is_exactly_zero():
    assert delta_points(0.8375, 0.8375) == 0.0


def test_composition_improves_with_grid_resolution(world2, backend2, sched50, rng):
    ds = sample_dataset(world2, 5, rng)
    maes = {
        stride: np.mean(
            [
                composition(
                    backend2, world2, sched50, make_grid(50, stride), ds.x0[i], ds.pa[i]
                )
                for i in range(5)
            ]
        )
        for stride in (16, 1)
    }
    assert maes[16] > maes[1]
    assert maes[1] < 0.02


def test_composition_exact_for_point_mass_world():
    graph = CausalGraph([AttributeSpec("a")], [], {"a": (1.0, 0.0)}, {})
    means = {(0,): np.array([0.7, -0.3]), (1,): np.zeros(2)}
    world = GMMWorld(graph=graph, dim=2, means=means, sigma0=0.0)
    sched = build_schedule("linear", 50)
    backend = AnalyticBackend(world, sched)
    mae = composition(backend, world, sched, make_grid(50, 1), means[(0,)], (0,))
    assert mae < 1e-12


def test_paired_sign_test_extremes():
    assert paired_sign_test(np.ones(100)) < 1e-25
    assert paired_sign_test(-np.ones(100)) == 1.0
    assert paired_sign_test(np.zeros(10)) == 1.0
    balanced = np.array([1.0, -1.0] * 50)
    assert 0.4 < paired_sign_test(balanced) < 0.7


def test_per_item_abs_error_shape(rng):
    a = rng.standard_normal((6, 2))
    b = a + 0.5
    out = per_item_abs_error(a, b)
    assert out.shape == (6,)
    assert np.allclose(out, 0.5, atol=1e-12)
