"""Run configuration: JSON schema, validation, hashing, object construction.

A run config is a single versioned JSON document.  Validation happens
before any compute; every output carries the config hash, and batches to be
compared must share a world fingerprint (world + schedule + seed + size).
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .causal import AttributeSpec, CausalGraph, Mechanism
from .condition import ConditionSlots
from .counterfactual import PartitionWeights
from .errors import ConfigError
from .guidance import CFG, DCFG, GuidanceSpec
from .schedule import (
    DEFAULT_BETA_MAX,
    DEFAULT_BETA_MIN,
    NoiseSchedule,
    ScheduleKind,
    TimestepGrid,
    build_schedule,
    make_grid,
)
from .score import GMMWorld
from .worlds import (
    BUILTIN_GRAPHS,
    DEFAULT_DIM,
    DEFAULT_SCALE,
    DEFAULT_SIGMA0,
    builtin_graph,
    mixture_means,
)

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "world": {
        "builtin": "two_binary",
        "dim": DEFAULT_DIM,
        "scale": DEFAULT_SCALE,
        "sigma0": DEFAULT_SIGMA0,
        "means_seed": 0,
        "correlation": 0.0,
    },
    "schedule": {
        "kind": "linear",
        "steps": 200,
        "beta_min": DEFAULT_BETA_MIN,
        "beta_max": DEFAULT_BETA_MAX,
    },
    "sampling": {"stride": 1},
    "backend": {"kind": "analytic", "checkpoint": None},
    "intervention": {"attribute": "a1", "value": "flip"},
    "guidance": {"mode": "cfg", "omega": 1.0},
    "train": {
        "steps": 4000,
        "batch": 128,
        "lr": 1e-3,
        "momentum": 0.9,
        "p_null": 0.5,
        "emb_dim": 4,
        "hidden": 128,
        "layers": 3,
        "n_train": 4096,
        "groupwise_dropout": False,
    },
    "sweep": {"cfg_omegas": [1.0, 1.5, 2.0, 2.5, 3.0], "dcfg_pairs": [[1.5, 1.0], [2.5, 1.2], [3.0, 1.2]]},
    "n": 100,
    "seed": 0,
    "out": "out",
}


def load_config(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return normalize_config(raw)


def normalize_config(raw: dict) -> dict:
    """Apply defaults, then validate the merged document."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in raw.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if key == "intervention" and value is None:
            cfg[key] = None
        elif isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            unknown = set(value) - set(cfg[key]) - ({"graph"} if key == "world" else set())
            if key == "guidance":
                unknown -= {"omega_aff", "omega_inv", "pinned", "groups"}
            if unknown:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
            cfg[key].update(copy.deepcopy(value))
        else:
            cfg[key] = copy.deepcopy(value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']}")
    w = cfg["world"]
    if "graph" not in w and w["builtin"] not in BUILTIN_GRAPHS:
        raise ConfigError(f"world.builtin must be one of {BUILTIN_GRAPHS}")
    if w["dim"] < 1:
        raise ConfigError("world.dim must be >= 1")
    if w["sigma0"] < 0:
        raise ConfigError("world.sigma0 must be >= 0")
    s = cfg["schedule"]
    try:
        ScheduleKind(s["kind"])
    except ValueError as exc:
        raise ConfigError(f"schedule.kind: {exc}") from exc
    if s["steps"] < 1:
        raise ConfigError("schedule.steps must be >= 1")
    if not (1 <= cfg["sampling"]["stride"] <= s["steps"]):
        raise ConfigError("sampling.stride must be in 1..schedule.steps")
    if cfg["backend"]["kind"] not in ("analytic", "trained"):
        raise ConfigError("backend.kind must be 'analytic' or 'trained'")
    if cfg["backend"]["kind"] == "trained" and not cfg["backend"]["checkpoint"]:
        raise ConfigError("trained backend needs backend.checkpoint")
    g = cfg["guidance"]
    if g["mode"] not in ("none", "cfg", "dcfg"):
        raise ConfigError("guidance.mode must be none|cfg|dcfg")
    if g["mode"] == "cfg" and float(g.get("omega", -1)) < 0:
        raise ConfigError("guidance.omega must be >= 0")
    if g["mode"] == "dcfg" and "groups" not in g:
        if float(g.get("omega_aff", -1)) < 0 or float(g.get("omega_inv", -1)) < 0:
            raise ConfigError("guidance.omega_aff and omega_inv must be >= 0")
    iv = cfg["intervention"]
    if iv is not None:
        if not isinstance(iv.get("attribute"), str):
            raise ConfigError("intervention.attribute must be a string")
        if iv.get("value") != "flip" and not isinstance(iv.get("value"), int):
            raise ConfigError("intervention.value must be an integer or 'flip'")
    if cfg["train"]["groupwise_dropout"]:
        raise ConfigError("train.groupwise_dropout is reserved and must remain false")
    if not (0.0 <= cfg["train"]["p_null"] <= 1.0):
        raise ConfigError("train.p_null must be in [0, 1]")
    if cfg["n"] < 1:
        raise ConfigError("n must be >= 1")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    scrubbed = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(canonical_json(scrubbed).encode()).hexdigest()[:16]


def world_fingerprint(cfg: dict) -> str:
    """Hash of everything that determines the evaluated items themselves."""
    basis = {
        "world": cfg["world"],
        "schedule": cfg["schedule"],
        "sampling": cfg["sampling"],
        "seed": cfg["seed"],
        "n": cfg["n"],
        "intervention": cfg["intervention"],
    }
    return hashlib.sha256(canonical_json(basis).encode()).hexdigest()[:16]


def build_graph(cfg: dict) -> CausalGraph:
    w = cfg["world"]
    if "graph" in w:
        return graph_from_dict(w["graph"])
    return builtin_graph(w["builtin"], w.get("correlation", 0.0))


def graph_from_dict(g: dict) -> CausalGraph:
    """Explicit graph description: nodes, edges, priors, flat mechanism tables."""
    try:
        nodes = [AttributeSpec(n["name"], int(n.get("cardinality", 2))) for n in g["nodes"]]
        edges = [tuple(e) for e in g.get("edges", [])]
        priors = {k: tuple(v) for k, v in g.get("priors", {}).items()}
        mechanisms = {
            child: Mechanism(
                parents=tuple(m["parents"]),
                exo_cardinality=int(m["exo_cardinality"]),
                table=tuple(m["table"]),
            )
            for child, m in g.get("mechanisms", {}).items()
        }
        return CausalGraph(nodes, edges, priors, mechanisms)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid world.graph: {exc}") from exc


def build_world(cfg: dict) -> GMMWorld:
    w = cfg["world"]
    graph = build_graph(cfg)
    means = mixture_means(graph, int(w["dim"]), float(w["scale"]), int(w["means_seed"]))
    try:
        return GMMWorld(graph=graph, dim=int(w["dim"]), means=means, sigma0=float(w["sigma0"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_sched(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    try:
        return build_schedule(s["kind"], int(s["steps"]), float(s["beta_min"]), float(s["beta_max"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_grid(cfg: dict) -> TimestepGrid:
    return make_grid(int(cfg["schedule"]["steps"]), int(cfg["sampling"]["stride"]))


def build_mode(cfg: dict, world: GMMWorld):
    """Resolve the guidance section into a sampler mode."""
    g = cfg["guidance"]
    if g["mode"] == "none":
        return None
    if g["mode"] == "cfg":
        return CFG(float(g["omega"]))
    if "groups" in g:
        groups = []
        for entry in g["groups"]:
            idx = [world.graph.index[name] for name in entry["attributes"]]
            groups.append((idx, float(entry["weight"])))
        spec = GuidanceSpec(groups)
        valued = frozenset(range(world.k))
        if spec.covered != valued:
            import warnings

            missing = sorted(world.graph.names[i] for i in valued - spec.covered)
            warnings.warn(f"guidance groups leave attributes {missing} permanently null")
        return DCFG(spec)
    return PartitionWeights(
        omega_affected=float(g["omega_aff"]),
        omega_invariant=float(g["omega_inv"]),
        pinned=tuple(g.get("pinned", ())),
    )


def guidance_label(cfg: dict) -> str:
    g = cfg["guidance"]
    if g["mode"] == "none":
        return "none"
    if g["mode"] == "cfg":
        return f"cfg_w{float(g['omega']):g}"
    if "groups" in g:
        return "dcfg_custom"
    return f"dcfg_aff{float(g['omega_aff']):g}_inv{float(g['omega_inv']):g}"


def is_baseline(cfg: dict) -> bool:
    """The unit-weight global configuration every delta is measured against."""
    g = cfg["guidance"]
    return g["mode"] == "none" or (g["mode"] == "cfg" and float(g["omega"]) == 1.0)


def slots_from_pa(pa) -> ConditionSlots:
    return ConditionSlots.from_attributes(pa)
