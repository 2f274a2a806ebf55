"""Command-line harness: training, counterfactual batches, evaluation, sweeps.

Subcommands:
  train     fit the trainable backend, write a checkpoint and loss trace
  cf        generate a batch of counterfactuals (CSV + manifest)
  eval      aggregate batches into a delta report against the unit baseline
  sweep     cf + eval over a guidance-weight grid, optionally in parallel
  selftest  run a quick built-in identity suite

Exit codes: 0 success, 2 config validation, 3 numerical failure,
4 missing baseline.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime
import json
import math
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .causal import Intervention
from .condition import ConditionSlots, mask
from .config import (
    build_grid,
    build_mode,
    build_sched,
    build_world,
    canonical_json,
    config_hash,
    guidance_label,
    is_baseline,
    load_config,
    normalize_config,
    world_fingerprint,
)
from .counterfactual import counterfactual_batch
from .data import sample_dataset
from .denoiser import TrainConfig, TrainedBackend, load_checkpoint, save_checkpoint, train
from .errors import ConfigError, MissingBaselineError, NumericalError
from .guidance import epsilon_cfg, epsilon_dcfg, GuidanceSpec
from .metrics import (
    EvalReport,
    auroc_arrays,
    delta_points,
    summarize,
    write_plot_data_csv,
    write_report_csv,
)
from .score import AnalyticBackend, analytic_epsilon, log_density
from .schedule import make_grid


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _resolve_backend(cfg: dict, world, sched):
    if cfg["backend"]["kind"] == "analytic":
        return AnalyticBackend(world, sched)
    params, embedder, meta = load_checkpoint(cfg["backend"]["checkpoint"])
    expected = _model_hash(cfg)
    if meta.get("model_hash") != expected:
        raise ConfigError(
            f"checkpoint was trained for model hash {meta.get('model_hash')}, "
            f"config requires {expected}"
        )
    return TrainedBackend(params, embedder)


def _model_hash(cfg: dict) -> str:
    import hashlib

    basis = {"world": cfg["world"], "schedule": cfg["schedule"]}
    return hashlib.sha256(canonical_json(basis).encode()).hexdigest()[:16]


def _interventions(cfg: dict, world, pa_rows) -> list[Intervention]:
    iv = cfg["intervention"]
    if iv is None:
        return [Intervention({}) for _ in pa_rows]
    name = iv["attribute"]
    if name not in world.graph.index:
        raise ConfigError(f"intervention attribute {name!r} not in world")
    idx = world.graph.index[name]
    if iv["value"] == "flip":
        if world.graph.cardinalities[idx] != 2:
            raise ConfigError(f"flip intervention needs a binary attribute, {name!r} is not")
        return [Intervention({name: 1 - int(pa[idx])}) for pa in pa_rows]
    return [Intervention({name: int(iv["value"])}) for _ in pa_rows]


def batch_columns(world) -> list[str]:
    names = world.graph.names
    cols = ["item_id"]
    cols += [f"pa_{n}" for n in names]
    cols += [f"pacf_{n}" for n in names]
    cols += [f"u_{n}" for n in names]
    for prefix in ("x0", "xlat", "xcf", "xrev"):
        cols += [f"{prefix}_{j}" for j in range(world.dim)]
    cols += [f"post1_{n}" for i, n in enumerate(names) if world.graph.cardinalities[i] == 2]
    return cols


def cmd_cf(cfg: dict, out_dir: Path) -> Path:
    """Generate one counterfactual batch; deterministic per (config, seed)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg)
    sched = build_sched(cfg)
    grid = build_grid(cfg)
    backend = _resolve_backend(cfg, world, sched)
    mode = build_mode(cfg, world)
    rng = np.random.default_rng(cfg["seed"])
    ds = sample_dataset(world, cfg["n"], rng, seed=cfg["seed"])
    interventions = _interventions(cfg, world, ds.pa_tuples())
    try:
        records = counterfactual_batch(
            backend,
            world,
            sched,
            grid,
            ds.x0,
            ds.pa_tuples(),
            ds.u_tuples(),
            interventions,
            mode,
            with_reverse=True,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    from .score import bayes_posterior

    x_cf = np.stack([r.x_cf for r in records])
    posteriors = {
        i: bayes_posterior(world, x_cf, i)[:, 1]
        for i, c in enumerate(world.graph.cardinalities)
        if c == 2 and world.sigma0 > 0
    }

    batch_path = out_dir / "batch.csv"
    with open(batch_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(batch_columns(world))
        for i, rec in enumerate(records):
            row: list = [i]
            row += [int(v) for v in rec.pa]
            row += [int(v) for v in rec.pa_cf]
            row += [int(v) for v in rec.u_attr]
            for arr in (rec.x0, rec.x_latent, rec.x_cf, rec.x_rev):
                row += [repr(float(v)) for v in arr]
            row += [repr(float(posteriors[j][i])) for j in sorted(posteriors)]
            writer.writerow(row)

    manifest = {
        "schema_version": cfg["schema_version"],
        "label": guidance_label(cfg),
        "baseline": is_baseline(cfg),
        "config": cfg,
        "config_hash": config_hash(cfg),
        "world_fingerprint": world_fingerprint(cfg),
        "versions": {"dcfg": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "created_utc": _utc_now(),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return batch_path


def cmd_train(cfg: dict, out_dir: Path) -> Path:
    """Train the regressor backend; writes checkpoint.npz and loss_trace.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg)
    sched = build_sched(cfg)
    t = cfg["train"]
    tc = TrainConfig(
        steps=int(t["steps"]),
        batch=int(t["batch"]),
        lr=float(t["lr"]),
        momentum=float(t["momentum"]),
        p_null=float(t["p_null"]),
        emb_dim=int(t["emb_dim"]),
        hidden=int(t["hidden"]),
        layers=int(t["layers"]),
        n_train=int(t["n_train"]),
    )
    rng = np.random.default_rng(cfg["seed"])
    result = train(world, sched, tc, rng)
    ckpt = out_dir / "checkpoint.npz"
    save_checkpoint(
        ckpt,
        result.params,
        result.embedder,
        meta={
            "p_null": tc.p_null,
            "schedule_kind": cfg["schedule"]["kind"],
            "model_hash": _model_hash(cfg),
            "config_hash": config_hash(cfg),
            "seed": cfg["seed"],
            "version": __version__,
        },
    )
    with open(out_dir / "loss_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(result.losses):
            writer.writerow([i, repr(float(loss))])
    return ckpt


def _load_batch(batch_dir: Path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest_path = batch_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{batch_dir} has no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(batch_dir / "batch.csv") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    table = {name: np.array([row[i] for row in rows]) for i, name in enumerate(header)}
    return manifest, table


def _columns(table: dict, prefix: str, dtype=float) -> np.ndarray:
    names = sorted(
        (k for k in table if k.startswith(prefix)),
        key=lambda k: int(k[len(prefix):]) if k[len(prefix):].isdigit() else k,
    )
    return np.stack([table[k].astype(dtype) for k in names], axis=1)


def cmd_eval(batch_dirs: list[Path], out_dir: Path, svg: bool = False) -> Path:
    """Aggregate batches; deltas are against the unit-weight baseline batch."""
    out_dir.mkdir(parents=True, exist_ok=True)
    loaded = [(_load_batch(Path(d))) for d in batch_dirs]
    fingerprints = {m["world_fingerprint"] for m, _ in loaded}
    if len(fingerprints) > 1:
        raise ConfigError(
            "batches evaluate different worlds; fingerprints: " + ", ".join(sorted(fingerprints))
        )
    baselines = [(m, t) for m, t in loaded if m.get("baseline")]
    if not baselines:
        raise MissingBaselineError(
            "no unit-weight baseline batch (guidance cfg omega=1.0 or none) among inputs"
        )
    base_manifest, base_table = baselines[0]

    world = build_world(normalize_config(base_manifest["config"]))
    attr_names = list(world.graph.names)

    def batch_aurocs(table) -> dict[str, float]:
        labels = {n: table[f"pacf_{n}"].astype(int) for n in attr_names}
        out = {}
        for i, n in enumerate(attr_names):
            key = f"post1_{n}"
            if key not in table:
                out[n] = float("nan")
                continue
            try:
                out[n] = auroc_arrays(table[key].astype(float), labels[n])
            except ValueError:
                out[n] = float("nan")
        return out

    base_auroc = batch_aurocs(base_table)
    reports = []
    ordered = [baselines[0]] + [(m, t) for m, t in loaded if not m.get("baseline")]
    for manifest, table in ordered:
        aur = batch_aurocs(table)
        deltas = {
            n: delta_points(aur[n], base_auroc[n])
            if not (math.isnan(aur[n]) or math.isnan(base_auroc[n]))
            else float("nan")
            for n in attr_names
        }
        x0 = _columns(table, "x0_")
        x_rev = _columns(table, "xrev_")
        diff = x0 - x_rev
        rev_mae = float(np.mean(np.abs(diff)))
        rev_mse = float(np.mean(diff**2))
        comp = float("nan")
        if manifest["config"].get("intervention") is None:
            x_cf = _columns(table, "xcf_")
            comp = float(np.mean(np.abs(x0 - x_cf)))
        reports.append(
            EvalReport(
                label=manifest["label"],
                auroc_by_attr=aur,
                delta_by_attr=deltas,
                reversibility_mae=rev_mae,
                reversibility_mse=rev_mse,
                composition_mae=comp,
                sample_count=x0.shape[0],
                fingerprint=manifest["world_fingerprint"],
            )
        )

    report_path = out_dir / "report.csv"
    write_report_csv(report_path, attr_names, reports)
    write_plot_data_csv(out_dir / "plot_data.csv", reports)
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(summarize(attr_names, reports))
    if svg:
        _write_svg(out_dir / "report.svg", attr_names, reports)
    return report_path


def _write_svg(path: Path, attr_names: list[str], reports: list[EvalReport]) -> None:
    """Minimal static grouped-bar chart of delta by configuration."""
    width, height, margin = 760, 320, 48
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    values = [
        (r.label, n, r.delta_by_attr.get(n, float("nan")))
        for r in reports
        for n in attr_names
        if not math.isnan(r.delta_by_attr.get(n, float("nan")))
    ]
    if not values:
        path.write_text("<svg xmlns='http://www.w3.org/2000/svg'/>\n")
        return
    lo = min(0.0, min(v for _, _, v in values))
    hi = max(0.0, max(v for _, _, v in values))
    span = (hi - lo) or 1.0
    bar_w = plot_w / max(len(values), 1)
    palette = ["#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"]
    y0 = margin + plot_h * hi / span
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}' "
        f"font-family='monospace' font-size='9'>",
        f"<line x1='{margin}' y1='{y0:.1f}' x2='{width - margin}' y2='{y0:.1f}' stroke='#333'/>",
    ]
    for i, (label, attr, v) in enumerate(values):
        color = palette[attr_names.index(attr) % len(palette)]
        x = margin + i * bar_w
        h = plot_h * abs(v) / span
        y = y0 - h if v >= 0 else y0
        parts.append(
            f"<rect x='{x + 1:.1f}' y='{y:.1f}' width='{bar_w - 2:.1f}' height='{h:.1f}' fill='{color}'/>"
        )
        parts.append(
            f"<text x='{x + bar_w / 2:.1f}' y='{height - margin + 12}' text-anchor='end' "
            f"transform='rotate(-45 {x + bar_w / 2:.1f} {height - margin + 12})'>{label}:{attr}</text>"
        )
    parts.append(f"<text x='{margin}' y='{margin - 8}'>delta (AUROC points) vs unit baseline</text>")
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _sweep_settings(cfg: dict) -> list[dict]:
    settings = []
    omegas = [float(w) for w in cfg["sweep"]["cfg_omegas"]]
    if 1.0 not in omegas:
        omegas.insert(0, 1.0)
    for w in omegas:
        derived = json.loads(canonical_json(cfg))
        derived["guidance"] = {"mode": "cfg", "omega": w}
        settings.append(normalize_config(derived))
    for aff, inv in cfg["sweep"]["dcfg_pairs"]:
        derived = json.loads(canonical_json(cfg))
        derived["guidance"] = {"mode": "dcfg", "omega_aff": float(aff), "omega_inv": float(inv)}
        settings.append(normalize_config(derived))
    return settings


def _sweep_worker(cfg_json: str, out_dir: str) -> str:
    cfg = normalize_config(json.loads(cfg_json))
    cmd_cf(cfg, Path(out_dir))
    return out_dir


def cmd_sweep(cfg: dict, out_dir: Path, jobs: int, svg: bool = False) -> Path:
    """Run the configured weight grid (same seed per setting) and evaluate."""
    out_dir.mkdir(parents=True, exist_ok=True)
    settings = _sweep_settings(cfg)
    dirs = [out_dir / guidance_label(s) for s in settings]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_sweep_worker, canonical_json(s), str(d))
                for s, d in zip(settings, dirs)
            ]
            for f in futures:
                f.result()
    else:
        for s, d in zip(settings, dirs):
            cmd_cf(s, d)
    return cmd_eval(dirs, out_dir, svg=svg)


def cmd_selftest(quick: bool = True) -> int:
    """Cheap identity suite over the default world; prints PASS/FAIL lines."""
    del quick
    from .worlds import builtin_world
    from .schedule import build_schedule

    failures = 0

    def check(name: str, ok: bool) -> None:
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    world = builtin_world("two_binary")
    sched = build_schedule("linear", 50)
    backend = AnalyticBackend(world, sched)
    rng = np.random.default_rng(7)

    worst = 0.0
    for _ in range(50):
        x = rng.standard_normal(world.dim) * 2.0
        t = int(rng.integers(1, sched.steps + 1))
        omega = float(rng.uniform(0.0, 3.0))
        slots = ConditionSlots(tuple(int(v) for v in rng.integers(0, 2, world.k)))
        full = GuidanceSpec([(range(world.k), omega)])
        worst = max(
            worst,
            float(
                np.max(
                    np.abs(
                        epsilon_dcfg(backend, x, t, slots, full)
                        - epsilon_cfg(backend, x, t, slots, omega)
                    )
                )
            ),
        )
    check(f"single-group decoupled equals global guidance (max |diff| {worst:.2e})", worst < 1e-12)

    worst = 0.0
    h = 1e-4
    for _ in range(10):
        x = rng.standard_normal(world.dim) * 2.0
        t = int(rng.integers(1, sched.steps + 1))
        slots = ConditionSlots.null(world.k)
        grad = np.zeros(world.dim)
        for j in range(world.dim):
            e = np.zeros(world.dim)
            e[j] = h
            grad[j] = (
                log_density(world, sched, x + e, t, slots)
                - log_density(world, sched, x - e, t, slots)
            ) / (2 * h)
        fd = -math.sqrt(1.0 - sched.alpha_bar[t]) * grad
        got = analytic_epsilon(world, sched, x, t, slots)
        worst = max(worst, float(np.linalg.norm(got - fd) / max(np.linalg.norm(fd), 1e-12)))
    check(f"noise prediction matches density gradient (worst rel {worst:.2e})", worst < 1e-4)

    s = ConditionSlots((0, 1))
    ok = mask(mask(s, {0}), {0}) == mask(s, {0}) and mask(s, ()) == ConditionSlots.null(2)
    check("masking is idempotent and empty mask nulls everything", ok)

    from .sampler import generate, invert

    grid = make_grid(sched.steps, 1)
    ds = sample_dataset(world, 8, np.random.default_rng(3))
    slots_rows = [ConditionSlots.from_attributes(pa) for pa in ds.pa_tuples()]
    errs = []
    for i in range(len(ds)):
        lat = invert(backend, None, ds.x0[i], slots_rows[i], sched, grid).final
        back = generate(backend, None, lat, slots_rows[i], sched, grid).final
        errs.append(float(np.mean(np.abs(back - ds.x0[i]))))
    check(f"inversion round-trip mean abs error {np.mean(errs):.2e}", float(np.mean(errs)) < 0.05)

    print(f"{'OK' if failures == 0 else 'FAILED'}: {4 - failures}/4 checks passed")
    return 0 if failures == 0 else 3


def _apply_overrides(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "backend", None):
        cfg["backend"]["kind"] = args.backend
    if getattr(args, "checkpoint", None):
        cfg["backend"]["checkpoint"] = args.checkpoint
    return normalize_config(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_train = sub.add_parser("train", help="train the regressor backend")
    add_common(p_train)

    p_cf = sub.add_parser("cf", help="generate a counterfactual batch")
    add_common(p_cf)
    p_cf.add_argument("--backend", choices=("analytic", "trained"), default=None)
    p_cf.add_argument("--checkpoint", default=None)

    p_eval = sub.add_parser("eval", help="evaluate batch directories")
    p_eval.add_argument("batches", nargs="+", help="batch directories to aggregate")
    p_eval.add_argument("--out", default="out", help="report output directory")
    p_eval.add_argument("--svg", action="store_true", help="also emit a static SVG bar chart")

    p_sweep = sub.add_parser("sweep", help="cf + eval over the configured weight grid")
    add_common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel settings")
    p_sweep.add_argument("--svg", action="store_true")

    sub.add_parser("selftest", help="run the built-in identity suite")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest()
        if args.command == "eval":
            cmd_eval([Path(b) for b in args.batches], Path(args.out), svg=args.svg)
            return 0
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        out_dir = Path(args.out) if args.out else Path(cfg["out"])
        if args.command == "train":
            path = cmd_train(cfg, out_dir)
        elif args.command == "cf":
            path = cmd_cf(cfg, out_dir)
        else:
            path = cmd_sweep(cfg, out_dir, jobs=args.jobs, svg=args.svg)
        print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except MissingBaselineError as exc:
        print(f"missing baseline: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
