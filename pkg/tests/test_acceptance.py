"""Acceptance criteria, one test per criterion, at their stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion.  Statistical criteria share a single N=500 paired dataset; all
guidance settings reuse the same items so per-item comparisons pair up.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from dcfg import (
    CFG,
    AnalyticBackend,
    Intervention,
    PartitionWeights,
    build_schedule,
    builtin_world,
    counterfactual_batch,
    make_grid,
    paired_sign_test,
    sample_dataset,
)
from dcfg.cli import main
from dcfg.condition import ConditionSlots
from dcfg.data import Dataset
from dcfg.denoiser import TrainConfig, make_batch, mlp_epsilon, train
from dcfg.guidance import GuidanceSpec, epsilon_cfg, epsilon_dcfg
from dcfg.metrics import auroc_arrays, per_item_abs_error, posterior_scores, signed_amplification
from dcfg.sampler import generate, invert
from dcfg.score import analytic_epsilon, log_density
from tests.test_denoiser import grad_check_slice
from tests.test_score import single_component_world

N_ITEMS = 500
STEPS = 200


def report(criterion: str, detail: str) -> None:
    print(f"PASS  {criterion}: {detail}")


@pytest.fixture(scope="module")
def bench():
    world = builtin_world("two_binary")
    sched = build_schedule("linear", STEPS)
    grid = make_grid(STEPS, 1)
    backend = AnalyticBackend(world, sched)
    ds = sample_dataset(world, N_ITEMS, np.random.default_rng(2024))
    return world, sched, grid, backend, ds


@pytest.fixture(scope="module")
def batches(bench):
    """All guidance settings over the same items: label -> records."""
    world, sched, grid, backend, ds = bench
    pa, u = ds.pa_tuples(), ds.u_tuples()
    ivs = [Intervention({"a1": 1 - p[0]}) for p in pa]

    def run(mode, with_reverse=False):
        return counterfactual_batch(
            backend, world, sched, grid, ds.x0, pa, u, ivs, mode, with_reverse=with_reverse
        )

    t0 = time.time()
    out = {
        "base": run(CFG(1.0)),
        "cfg3": run(CFG(3.0)),
        "dcfg_3_1": run(PartitionWeights(3.0, 1.0)),
        "cfg25": run(CFG(2.5), with_reverse=True),
        "dcfg_25_12": run(PartitionWeights(2.5, 1.2), with_reverse=True),
    }
    for w in (1.0, 1.5, 2.0, 2.5):
        out[f"dcfg_25_{w}"] = run(PartitionWeights(2.5, w))
    out["_runtime"] = time.time() - t0
    return out


def attr_auroc(world, records, attribute):
    labels = np.array([r.pa_cf[attribute] for r in records])
    scores = posterior_scores(world, np.stack([r.x_cf for r in records]), attribute)
    return auroc_arrays(scores, labels)


def test_criterion_1_decoupled_recovers_global_guidance(bench):
    world, sched, _, backend, _ = bench
    rng = np.random.default_rng(1)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        x = rng.standard_normal(world.dim) * 2.0
        t = int(rng.integers(1, sched.steps + 1))
        omega = float(rng.uniform(0.0, 3.0))
        values = tuple(
            None if rng.random() < 0.25 else int(rng.integers(0, c))
            for c in world.graph.cardinalities
        )
        slots = ConditionSlots(values)
        spec = GuidanceSpec([(range(world.k), omega)])
        diff = epsilon_dcfg(backend, x, t, slots, spec) - epsilon_cfg(backend, x, t, slots, omega)
        worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.time() - t0
    assert worst < 1e-12
    assert elapsed < 5.0
    report("criterion 1", f"single-group identity max |diff| {worst:.1e} over 1000 probes ({elapsed:.1f}s)")


def test_criterion_2_score_oracle_matches_finite_differences():
    t0 = time.time()
    h = 1e-4
    worst = 0.0
    for name in ("two_binary", "three_binary", "age_finding"):
        world = builtin_world(name)
        sched = build_schedule("linear", STEPS)
        rng = np.random.default_rng(7)
        done = 0
        while done < 100:
            t = int(rng.integers(1, sched.steps + 1))
            x = rng.standard_normal(world.dim) * 1.5
            values = tuple(
                None if rng.random() < 0.35 else int(rng.integers(0, c))
                for c in world.graph.cardinalities
            )
            slots = ConditionSlots(values)
            if world.slot_prior(slots) == 0.0:
                continue
            grad = np.zeros(world.dim)
            for j in range(world.dim):
                e = np.zeros(world.dim)
                e[j] = h
                grad[j] = (
                    log_density(world, sched, x + e, t, slots)
                    - log_density(world, sched, x - e, t, slots)
                ) / (2 * h)
            expected = -math.sqrt(1.0 - sched.alpha_bar[t]) * grad
            got = analytic_epsilon(world, sched, x, t, slots)
            rel = np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-12)
            worst = max(worst, float(rel))
            done += 1
    elapsed = time.time() - t0
    assert worst < 1e-4
    assert elapsed < 5.0
    report("criterion 2", f"worst relative error {worst:.1e} over 3x100 probes ({elapsed:.1f}s)")


def test_criterion_3_sharpened_posterior_gradient(bench):
    world, sched, _, backend, _ = bench
    rng = np.random.default_rng(3)
    h = 1e-4
    spec = GuidanceSpec([((0,), 2.2), ((1,), 0.7)])
    null = ConditionSlots.null(world.k)
    worst = 0.0
    for _ in range(50):
        x = rng.standard_normal(world.dim) * 1.5
        t = int(rng.integers(1, sched.steps + 1))
        slots = ConditionSlots(tuple(int(rng.integers(0, c)) for c in world.graph.cardinalities))

        def sharpened(p):
            base = log_density(world, sched, p, t, null)
            total = base
            for idx, w in spec.groups:
                group = ConditionSlots(
                    tuple(slots.values[i] if i in idx else None for i in range(world.k))
                )
                total += w * (log_density(world, sched, p, t, group) - base)
            return total

        grad = np.zeros(world.dim)
        for j in range(world.dim):
            e = np.zeros(world.dim)
            e[j] = h
            grad[j] = (sharpened(x + e) - sharpened(x - e)) / (2 * h)
        expected = -math.sqrt(1.0 - sched.alpha_bar[t]) * grad
        got = epsilon_dcfg(backend, x, t, slots, spec)
        rel = np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-12)
        worst = max(worst, float(rel))
    assert worst < 1e-4
    report("criterion 3", f"worst relative error {worst:.1e} over 50 probes")


def test_criterion_4_round_trip_and_stride_ordering(bench):
    world, sched, _, backend, ds = bench
    t0 = time.time()
    x0 = ds.x0[:100]
    pa = ds.pa_tuples()[:100]
    maes = {}
    for stride in (16, 4, 1):
        grid = make_grid(STEPS, stride)
        err = np.empty(len(x0))
        for cell in sorted(set(pa)):
            rows = [i for i, p in enumerate(pa) if p == cell]
            slots = ConditionSlots.from_attributes(cell)
            lat = invert(backend, None, x0[rows], slots, sched, grid).final
            back = generate(backend, None, lat, slots, sched, grid).final
            err[rows] = np.mean(np.abs(back - x0[rows]), axis=1)
        maes[stride] = float(err.mean())
    elapsed = time.time() - t0
    assert maes[1] < 0.02
    assert maes[16] > maes[4] > maes[1]
    assert elapsed < 60.0
    report(
        "criterion 4",
        f"round-trip MAE stride 16/4/1 = {maes[16]:.4f}/{maes[4]:.4f}/{maes[1]:.4f} ({elapsed:.1f}s)",
    )


def test_criterion_5_amplification_pattern(bench, batches):
    world, *_ = bench
    target, invariant = 0, 1
    base_t = attr_auroc(world, batches["base"], target)
    d_target_cfg = 100 * (attr_auroc(world, batches["cfg3"], target) - base_t)
    d_target_dcfg = 100 * (attr_auroc(world, batches["dcfg_3_1"], target) - base_t)
    assert d_target_cfg > 5.0
    assert d_target_dcfg > 5.0

    base_i = attr_auroc(world, batches["base"], invariant)
    d_inv_cfg = 100 * (attr_auroc(world, batches["cfg3"], invariant) - base_i)
    d_inv_dcfg = 100 * (attr_auroc(world, batches["dcfg_3_1"], invariant) - base_i)
    assert abs(d_inv_dcfg) < abs(d_inv_cfg)

    labels = np.array([r.pa_cf[invariant] for r in batches["base"]])
    x_base = np.stack([r.x_cf for r in batches["base"]])
    amp_cfg = signed_amplification(
        world, invariant, labels, np.stack([r.x_cf for r in batches["cfg3"]]), x_base
    )
    amp_dcfg = signed_amplification(
        world, invariant, labels, np.stack([r.x_cf for r in batches["dcfg_3_1"]]), x_base
    )
    p = paired_sign_test(amp_cfg - amp_dcfg)
    assert p < 0.01
    assert batches["_runtime"] < 600.0
    report(
        "criterion 5",
        f"target delta cfg3 {d_target_cfg:+.1f} / dcfg(3,1) {d_target_dcfg:+.1f}; "
        f"invariant |delta| {abs(d_inv_dcfg):.1f} < {abs(d_inv_cfg):.1f}, sign test p={p:.1e} "
        f"(all guided batches {batches['_runtime']:.0f}s)",
    )


def test_criterion_6_reversibility_pattern(bench, batches):
    _ = bench
    x0 = np.stack([r.x0 for r in batches["cfg25"]])
    rev_cfg = per_item_abs_error(x0, np.stack([r.x_rev for r in batches["cfg25"]]))
    rev_dcfg = per_item_abs_error(x0, np.stack([r.x_rev for r in batches["dcfg_25_12"]]))
    p = paired_sign_test(rev_cfg - rev_dcfg)
    assert rev_dcfg.mean() < rev_cfg.mean()
    assert p < 0.01
    report(
        "criterion 6",
        f"reversibility MAE dcfg(2.5,1.2) {rev_dcfg.mean():.4f} < cfg(2.5) {rev_cfg.mean():.4f}, p={p:.1e}",
    )


def test_criterion_7_invariant_weight_sweep(bench, batches):
    world, *_ = bench
    invariant = 1
    base_i = attr_auroc(world, batches["base"], invariant)
    weights = [1.0, 1.5, 2.0, 2.5]
    deltas = [
        100 * (attr_auroc(world, batches[f"dcfg_25_{w}"], invariant) - base_i) for w in weights
    ]
    rho = spearmanr(weights, deltas).statistic
    assert rho > 0
    d_cfg25 = 100 * (attr_auroc(world, batches["cfg25"], invariant) - base_i)
    assert abs(deltas[-1] - d_cfg25) < 2.0
    report(
        "criterion 7",
        "invariant delta by w_inv "
        + ", ".join(f"{w}:{d:+.2f}" for w, d in zip(weights, deltas))
        + f"; spearman {rho:+.2f}; |{deltas[-1]:+.2f} - cfg2.5 {d_cfg25:+.2f}| < 2",
    )


def test_criterion_8_trainable_backend(bench):
    t0 = time.time()
    rng = np.random.default_rng(8)
    world = single_component_world(mu=(0.8, -0.4), sigma0=0.7)
    sched = build_schedule("linear", STEPS)

    from dcfg.denoiser import init_denoiser

    params, embedder = init_denoiser(
        world.dim, world.graph.cardinalities, sched.steps, rng, emb_dim=4, hidden=128, layers=3
    )
    for table in embedder.tables:
        table[:] = 0.1 * rng.standard_normal(table.shape)
    probe_set = sample_dataset(world, 64, rng)
    batch = make_batch(world, sched, probe_set.x0, probe_set.pa, p_null=0.5, rng=rng)
    picks = [("w", 0, 11), ("w", 1, 200), ("w", 3, 5), ("b", 2, 17), ("e", 0, 2)]
    worst = grad_check_slice(params, embedder, batch, picks, h=1e-5)
    assert worst < 1e-4

    result = train(world, sched, TrainConfig(), np.random.default_rng(80))
    slots = ConditionSlots((0,))
    sq_errs = []
    eval_rng = np.random.default_rng(81)
    mu = world.means[(0,)]
    for _ in range(500):
        t = int(eval_rng.integers(1, sched.steps + 1))
        a = sched.alpha_bar[t]
        x_t = (
            np.sqrt(a) * (mu + world.sigma0 * eval_rng.standard_normal(2))
            + np.sqrt(1 - a) * eval_rng.standard_normal(2)
        )
        got = mlp_epsilon(result.params, result.embedder, x_t, t, slots)
        want = analytic_epsilon(world, sched, x_t, t, slots)
        sq_errs.append(np.mean((got - want) ** 2))
    mse = float(np.mean(sq_errs))
    elapsed = time.time() - t0
    assert mse < 0.05
    assert elapsed < 300.0
    report(
        "criterion 8",
        f"gradient check worst rel {worst:.1e}; trained-vs-oracle MSE {mse:.4f} ({elapsed:.0f}s)",
    )


def test_criterion_9_batch_determinism(tmp_path):
    cfg = {
        "schedule": {"steps": 60},
        "n": 25,
        "seed": 99,
        "guidance": {"mode": "dcfg", "omega_aff": 2.5, "omega_inv": 1.2},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert main(["cf", "--config", str(path), "--out", str(tmp_path / "run1")]) == 0
    assert main(["cf", "--config", str(path), "--out", str(tmp_path / "run2")]) == 0
    a = (tmp_path / "run1/batch.csv").read_bytes()
    b = (tmp_path / "run2/batch.csv").read_bytes()
    assert a == b
    report("criterion 9", f"byte-identical batches ({len(a)} bytes)")
