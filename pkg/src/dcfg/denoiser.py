"""Trainable noise-prediction backend: a small fully connected regressor.

The network maps (x_t, sinusoidal time features, dense condition embedding)
to a predicted noise vector and is fit by minibatch SGD on the standard
noise-prediction objective, with joint classifier-free condition dropout.
Gradients are accumulated by hand in reverse mode; tanh keeps the
derivative explicit.  The analytic oracle remains the ground truth this
backend is validated against.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .condition import ConditionSlots, SplitEmbedder, init_embedder
from .data import sample_dataset
from .errors import NumericalError
from .schedule import NoiseSchedule
from .score import GMMWorld

TIME_FEATURE_PAIRS = 8
DIVERGENCE_LIMIT = 1e6


def time_features(t: np.ndarray | int, steps: int) -> np.ndarray:
    """8 sinusoidal pairs of the normalized timestep, geometric frequencies."""
    tt = np.asarray(t, dtype=np.float64) / steps
    freqs = 2.0 ** np.arange(TIME_FEATURE_PAIRS) * np.pi
    angles = tt[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class DenoiserParams:
    """Layer weights/biases of the regressor plus its timestep range."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    steps: int

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape} / {b.shape}")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input width {w.shape[0]} does not chain")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]


@dataclass
class TrainConfig:
    steps: int = 4000
    batch: int = 128
    lr: float = 1e-3
    momentum: float = 0.9
    p_null: float = 0.5
    emb_dim: int = 4
    hidden: int = 128
    layers: int = 3
    n_train: int = 4096


@dataclass
class TrainResult:
    params: DenoiserParams
    embedder: SplitEmbedder
    losses: np.ndarray


def init_denoiser(
    dim: int,
    cardinalities: tuple[int, ...],
    steps: int,
    rng: np.random.Generator,
    emb_dim: int = 4,
    hidden: int = 128,
    layers: int = 3,
) -> tuple[DenoiserParams, SplitEmbedder]:
    embedder = init_embedder(cardinalities, emb_dim)
    sizes = [dim + 2 * TIME_FEATURE_PAIRS + len(cardinalities) * emb_dim]
    sizes += [hidden] * layers + [dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return DenoiserParams(weights=weights, biases=biases, steps=steps), embedder


def _forward(params: DenoiserParams, inputs: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    h = inputs
    cached = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else np.tanh(z)
        cached.append(h)
    return h, cached


def _embed_rows(
    embedder: SplitEmbedder, values: np.ndarray, null_mask: np.ndarray
) -> np.ndarray:
    n = values.shape[0]
    c = np.zeros((n, embedder.width))
    live = ~null_mask
    for i, table in enumerate(embedder.tables):
        block = c[:, i * embedder.d : (i + 1) * embedder.d]
        block[live] = table[values[live, i]]
    return c


def mlp_epsilon(
    params: DenoiserParams,
    embedder: SplitEmbedder,
    x_t: np.ndarray,
    t: int,
    slots: ConditionSlots,
) -> np.ndarray:
    """Deterministic forward pass; null slots flow through as zero blocks."""
    x = np.asarray(x_t, dtype=np.float64)
    single = x.ndim == 1
    rows = x[None, :] if single else x
    n = rows.shape[0]
    tf = np.tile(time_features(t, params.steps), (n, 1))
    c = np.tile(embedder.embed(slots), (n, 1))
    inputs = np.concatenate([rows, tf, c], axis=1)
    if inputs.shape[1] != params.input_dim:
        raise ValueError(f"input width {inputs.shape[1]} does not match model {params.input_dim}")
    out, _ = _forward(params, inputs)
    return out[0] if single else out


@dataclass
class FrozenBatch:
    """A fixed training minibatch, for deterministic loss/gradient evaluation."""

    x_t: np.ndarray
    target: np.ndarray
    t: np.ndarray
    values: np.ndarray
    null_mask: np.ndarray


def loss_and_grads(
    params: DenoiserParams, embedder: SplitEmbedder, batch: FrozenBatch
) -> tuple[float, list[np.ndarray], list[np.ndarray], list[np.ndarray]]:
    """Mean squared noise-prediction error and its exact parameter gradients."""
    n, dim = batch.x_t.shape
    tf = time_features(batch.t, params.steps)
    c = _embed_rows(embedder, batch.values, batch.null_mask)
    inputs = np.concatenate([batch.x_t, tf, c], axis=1)
    out, cached = _forward(params, inputs)
    resid = out - batch.target
    loss = float(np.mean(resid**2))

    g = 2.0 * resid / resid.size
    w_grads = [np.empty_like(w) for w in params.weights]
    b_grads = [np.empty_like(b) for b in params.biases]
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        h_in = cached[i]
        w_grads[i] = h_in.T @ g
        b_grads[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (1.0 - cached[i] ** 2)
    g_input = g @ params.weights[0].T

    d = embedder.d
    offset = dim + 2 * TIME_FEATURE_PAIRS
    emb_grads = [np.zeros_like(t) for t in embedder.tables]
    live = ~batch.null_mask
    for i in range(embedder.k):
        block = g_input[:, offset + i * d : offset + (i + 1) * d]
        np.add.at(emb_grads[i], batch.values[live, i], block[live])
    return loss, w_grads, b_grads, emb_grads


def make_batch(
    world: GMMWorld,
    sched: NoiseSchedule,
    x0: np.ndarray,
    pa: np.ndarray,
    p_null: float,
    rng: np.random.Generator,
) -> FrozenBatch:
    """Diffuse clean samples to random steps and apply joint dropout."""
    n = x0.shape[0]
    t = rng.integers(1, sched.steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    a = sched.alpha_bar[t]
    x_t = np.sqrt(a)[:, None] * x0 + np.sqrt(1.0 - a)[:, None] * eps
    null_mask = rng.random(n) < p_null
    return FrozenBatch(x_t=x_t, target=eps, t=t, values=pa.copy(), null_mask=null_mask)


def train(
    world: GMMWorld,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainResult:
    """Minibatch SGD with momentum on the noise-prediction objective."""
    if cfg.n_train < 1:
        raise ValueError("training set size must be >= 1")
    params, embedder = init_denoiser(
        world.dim,
        world.graph.cardinalities,
        sched.steps,
        rng,
        emb_dim=cfg.emb_dim,
        hidden=cfg.hidden,
        layers=cfg.layers,
    )
    train_set = sample_dataset(world, cfg.n_train, rng)
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    vel_e = [np.zeros_like(t) for t in embedder.tables]
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, cfg.n_train, size=cfg.batch)
        batch = make_batch(world, sched, train_set.x0[idx], train_set.pa[idx], cfg.p_null, rng)
        loss, w_g, b_g, e_g = loss_and_grads(params, embedder, batch)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise NumericalError(f"training diverged at step {step}: loss={loss}")
        losses[step] = loss
        for i in range(len(params.weights)):
            vel_w[i] = cfg.momentum * vel_w[i] + w_g[i]
            vel_b[i] = cfg.momentum * vel_b[i] + b_g[i]
            params.weights[i] -= cfg.lr * vel_w[i]
            params.biases[i] -= cfg.lr * vel_b[i]
        for i in range(embedder.k):
            vel_e[i] = cfg.momentum * vel_e[i] + e_g[i]
            np.subtract(embedder.tables[i], cfg.lr * vel_e[i], out=embedder.tables[i])
    return TrainResult(params=params, embedder=embedder, losses=losses)


@dataclass
class TrainedBackend:
    """Noise-prediction backend wrapping trained regressor parameters."""

    params: DenoiserParams
    embedder: SplitEmbedder

    def __call__(self, x_t: np.ndarray, t: int, slots: ConditionSlots) -> np.ndarray:
        return mlp_epsilon(self.params, self.embedder, x_t, t, slots)


def save_checkpoint(
    path: str | Path,
    params: DenoiserParams,
    embedder: SplitEmbedder,
    meta: dict,
) -> None:
    """npz container: parameter arrays plus a JSON metadata blob."""
    arrays = {f"w_{i}": w for i, w in enumerate(params.weights)}
    arrays |= {f"b_{i}": b for i, b in enumerate(params.biases)}
    arrays |= {f"emb_{i}": t for i, t in enumerate(embedder.tables)}
    arrays["meta"] = np.frombuffer(
        json.dumps({**meta, "steps": params.steps}, sort_keys=True).encode(), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[DenoiserParams, SplitEmbedder, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        n_layers = sum(1 for k in data.files if k.startswith("w_"))
        weights = [data[f"w_{i}"] for i in range(n_layers)]
        biases = [data[f"b_{i}"] for i in range(n_layers)]
        n_emb = sum(1 for k in data.files if k.startswith("emb_"))
        tables = tuple(data[f"emb_{i}"] for i in range(n_emb))
    params = DenoiserParams(weights=weights, biases=biases, steps=int(meta["steps"]))
    return params, SplitEmbedder(tables), meta
