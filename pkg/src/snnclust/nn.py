"""Mirror-symmetric dense autoencoder with hand-derived backprop and Adam.

The network is ``d-h1-h2-h3-c-h3-h2-h1-d``.  The code layer and the
reconstruction layer are logistic, every other layer is ReLU.  ``forward``
keeps every post-activation output so a loss can be attached to any layer,
and ``backward`` accepts those extra gradients alongside the output gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

DEFAULT_HIDDEN = (500, 500, 2000)
LOGISTIC_CLAMP = 1e-7
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str  # "relu" or "logistic"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dims must be >= 1")
        if self.activation not in ("relu", "logistic"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class ModelParams:
    layers: list[LayerSpec]
    weights: list[np.ndarray]  # (out_dim, in_dim)
    biases: list[np.ndarray]
    latent_index: int

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def latent_dim(self) -> int:
        return self.layers[self.latent_index - 1].out_dim

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def tensors(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "ModelParams":
        return ModelParams(list(self.layers), [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.latent_index)


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def tensors(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, **hyper) -> "AdamState":
        tensors = params.tensors()
        return cls([np.zeros_like(p) for p in tensors], [np.zeros_like(p) for p in tensors], **hyper)


@dataclass
class ForwardTrace:
    # activations[0] is the input, activations[-1] the reconstruction
    activations: list[np.ndarray]
    latent_index: int = field(default=4)

    @property
    def latent(self) -> np.ndarray:
        return self.activations[self.latent_index]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def build_autoencoder(d: int, c: int, seed: int, hidden=DEFAULT_HIDDEN) -> ModelParams:
    """He-initialised autoencoder: weights ~ N(0, 2/fan_in), zero biases."""
    if d < 1 or c < 1:
        raise ValueError("input and latent dims must be >= 1")
    hidden = tuple(int(h) for h in hidden)
    dims = [d, *hidden, c, *reversed(hidden), d]
    latent_index = len(hidden) + 1
    n_layers = len(dims) - 1
    logistic = {latent_index, n_layers}
    rng = np.random.default_rng(seed)
    layers, weights, biases = [], [], []
    for i in range(n_layers):
        fan_in, fan_out = dims[i], dims[i + 1]
        layers.append(LayerSpec(fan_in, fan_out, "logistic" if i + 1 in logistic else "relu"))
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(layers, weights, biases, latent_index)


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected input of shape (b, {params.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite value in network input")
    acts = [x]
    a = x
    for spec, w, b in zip(params.layers, params.weights, params.biases):
        pre = a @ w.T + b
        if spec.activation == "relu":
            a = np.maximum(pre, 0.0)
        else:
            a = np.clip(expit(pre), LOGISTIC_CLAMP, 1.0 - LOGISTIC_CLAMP)
        acts.append(a)
    return ForwardTrace(acts, params.latent_index)


def backward(params: ModelParams, trace: ForwardTrace, output_grad: np.ndarray,
             layer_grads: dict[int, np.ndarray] | None = None) -> Gradients:
    """Reverse-mode gradients of (output loss + attached layer losses).

    ``output_grad`` is dL/d(reconstruction); ``layer_grads[i]`` is an extra
    dL/d(activations[i]) for hidden layer ``i`` and is added to the gradient
    flowing back through that layer.
    """
    acts = trace.activations
    n_layers = len(params.layers)
    if output_grad.shape != acts[-1].shape:
        raise ValueError(f"output_grad shape {output_grad.shape} != output shape {acts[-1].shape}")
    layer_grads = layer_grads or {}
    for i, g in layer_grads.items():
        if not 1 <= i <= n_layers:
            raise ValueError(f"layer index {i} outside 1..{n_layers}")
        if g.shape != acts[i].shape:
            raise ValueError(f"gradient for layer {i} has shape {g.shape}, expected {acts[i].shape}")

    dws: list[np.ndarray] = [None] * n_layers
    dbs: list[np.ndarray] = [None] * n_layers
    g = output_grad
    if n_layers in layer_grads:
        g = g + layer_grads[n_layers]
    for i in range(n_layers, 0, -1):
        a = acts[i]
        if params.layers[i - 1].activation == "relu":
            delta = g * (a > 0.0)
        else:
            delta = g * a * (1.0 - a)
        dws[i - 1] = delta.T @ acts[i - 1]
        dbs[i - 1] = delta.sum(axis=0)
        if i > 1:
            g = delta @ params.weights[i - 1]
            if i - 1 in layer_grads:
                g = g + layer_grads[i - 1]
    return Gradients(dws, dbs)


def adam_step(params: ModelParams, grads: Gradients, state: AdamState) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update, applied in place; returns its inputs."""
    g_all = grads.tensors()
    p_all = params.tensors()
    if len(g_all) != len(p_all):
        raise ValueError("gradient/parameter tensor count mismatch")
    for g, p in zip(g_all, p_all):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; aborting update")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step = state.lr / bc1
    for p, g, m, v in zip(p_all, g_all, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step * m / (np.sqrt(v / bc2) + state.eps)
    return params, state


def encode(params: ModelParams, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Latent codes for every row of ``x``."""
    out = np.empty((len(x), params.latent_dim))
    for start in range(0, len(x), batch_size):
        out[start:start + batch_size] = forward(params, x[start:start + batch_size]).latent
    return out


def save_checkpoint(path, params: ModelParams, *, seed: int, epoch: int,
                    adam: AdamState | None = None) -> None:
    """Write an ``.npz`` checkpoint; metadata lives in a JSON string entry."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "dims": [params.layers[0].in_dim] + [s.out_dim for s in params.layers],
        "activations": [s.activation for s in params.layers],
        "latent_index": params.latent_index,
        "seed": int(seed),
        "epoch": int(epoch),
        "adam": None if adam is None else {
            "t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    if adam is not None:
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict, AdamState | None]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        dims, acts = meta["dims"], meta["activations"]
        layers = [LayerSpec(dims[i], dims[i + 1], acts[i]) for i in range(len(acts))]
        weights = [data[f"W{i}"].copy() for i in range(len(layers))]
        biases = [data[f"b{i}"].copy() for i in range(len(layers))]
        for spec, w, b in zip(layers, weights, biases):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ValueError("checkpoint tensor shapes do not match declared dims")
        params = ModelParams(layers, weights, biases, meta["latent_index"])
        adam = None
        if meta.get("adam") is not None:
            n = 2 * len(layers)
            adam = AdamState([data[f"adam_m{i}"].copy() for i in range(n)],
                             [data[f"adam_v{i}"].copy() for i in range(n)], **meta["adam"])
    return params, meta, adam
