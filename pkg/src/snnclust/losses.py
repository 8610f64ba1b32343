"""Reconstruction and soft-nearest-neighbour losses with analytic gradients.

Pairwise distances inside the soft nearest neighbour loss are cosine
distances, ``1 - cos(a_i, a_j)``.  In the unsupervised variant the positive
set of a point is its single nearest neighbour (cosine distance) in *input*
space within the batch; this is an interpretation, since a label-free
positive set has to be defined somehow for the loss to be non-trivial.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .nn import ForwardTrace

# guards the row norm so all-zero ReLU rows stay differentiable
NORM_EPS = 1e-12
DEFAULT_LAYERS = (1, 2, 3, 4)


class UndefinedLossError(ValueError):
    """No point in the batch has a positive partner."""


@dataclass(frozen=True)
class TemperatureSchedule:
    mode: str = "fixed"  # "fixed" or "annealing"
    fixed_T: float = 1.0
    eta: float = 1.0
    gamma: float = 0.55

    def __post_init__(self):
        if self.mode not in ("fixed", "annealing"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")
        if self.fixed_T <= 0:
            raise ValueError("fixed_T must be positive")
        if self.mode == "annealing" and (self.eta <= 0 or self.gamma <= 0):
            raise ValueError("annealing needs eta > 0 and gamma > 0")


@dataclass(frozen=True)
class LossConfig:
    name: str = "custom"
    supervised: bool = True
    layer_mode: str = "sum"  # "sum" or "argmin"
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    alpha: float = 100.0
    snnl_layers: tuple[int, ...] = DEFAULT_LAYERS

    def __post_init__(self):
        if self.layer_mode not in ("sum", "argmin"):
            raise ValueError(f"unknown layer mode {self.layer_mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    @property
    def uses_snnl(self) -> bool:
        return bool(self.snnl_layers)


@dataclass
class LossReport:
    total: float
    reconstruction: float
    snnl_per_layer: list[float]
    chosen_layer: int | None
    temperature_used: float
    snnl: float = 0.0  # aggregated value that alpha multiplies


TABLE_I = {
    # name: (supervised, argmin, annealing)
    "snnl-1": (True, False, False),
    "snnl-2": (False, False, False),
    "snnl-3": (True, True, False),
    "snnl-4": (False, True, False),
    "snnl-5": (True, False, True),
    "snnl-6": (False, False, True),
    "snnl-7": (True, True, True),
    "snnl-8": (False, True, True),
}
MODEL_NAMES = ("baseline-ae", *TABLE_I)


def config_from_name(name: str, *, alpha: float = 100.0, fixed_T: float = 1.0,
                     eta: float = 1.0, gamma: float = 0.55,
                     snnl_layers: tuple[int, ...] = DEFAULT_LAYERS) -> LossConfig:
    """Map ``"snnl-1"``..``"snnl-8"`` or ``"baseline-ae"`` to a LossConfig."""
    key = name.lower()
    if key == "baseline-ae":
        return LossConfig(name=key, supervised=False, alpha=0.0, snnl_layers=())
    if key not in TABLE_I:
        raise ValueError(f"unknown model config {name!r}; choose from {MODEL_NAMES}")
    supervised, argmin, annealing = TABLE_I[key]
    schedule = TemperatureSchedule("annealing" if annealing else "fixed", fixed_T, eta, gamma)
    return LossConfig(key, supervised, "argmin" if argmin else "sum", schedule, alpha,
                      tuple(snnl_layers))


def temperature(schedule: TemperatureSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.mode == "fixed":
        return schedule.fixed_T
    return float((schedule.eta + epoch) ** (-schedule.gamma))


def bce_loss(x: np.ndarray, r: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy over all entries and its gradient w.r.t. ``r``."""
    if x.shape != r.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {r.shape}")
    n = x.size
    value = -np.sum(x * np.log(r) + (1.0 - x) * np.log1p(-r)) / n
    grad = (r - x) / (r * (1.0 - r)) / n
    return float(value), grad


def _unit_rows(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", a, a) + NORM_EPS)
    return a / norms[:, None], norms


def _logits(acts: np.ndarray, T: float, distance: str):
    """Pairwise -dist/T and a function mapping dL/d(logits) back to dL/d(acts)."""
    if distance == "cosine":
        u, norms = _unit_rows(acts)
        logits = (u @ u.T - 1.0) / T

        def pullback(g_logits):
            g_u = (g_logits + g_logits.T) @ u / T
            return (g_u - u * np.einsum("ij,ij->i", u, g_u)[:, None]) / norms[:, None]
    elif distance == "euclidean":
        sq = np.einsum("ij,ij->i", acts, acts)
        logits = -np.maximum(sq[:, None] - 2.0 * acts @ acts.T + sq[None, :], 0.0) / T

        def pullback(g_logits):
            w = -(g_logits + g_logits.T) / T
            return 2.0 * (w.sum(axis=1)[:, None] * acts - w @ acts)
    else:
        raise ValueError(f"unknown distance {distance!r}")
    return logits, pullback


def _snnl_with_positives(acts, positives, T, distance="cosine") -> tuple[float, np.ndarray]:
    logits, pullback = _logits(acts, T, distance)
    np.fill_diagonal(logits, -np.inf)
    np.fill_diagonal(positives, False)
    valid = positives.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise UndefinedLossError("no point in the batch has a positive partner")

    # separate log-sum-exps so a far-away positive set cannot underflow to log(0)
    pos_logits = np.where(positives, logits, -np.inf)
    pos_logits[~valid, 0] = 0.0
    log_num = logsumexp(pos_logits, axis=1)
    log_den = logsumexp(logits, axis=1)
    # the positive set is a subset of the denominator's, so the true value is >= 0
    per_point = np.maximum(log_den - log_num, 0.0)
    value = per_point[valid].sum() / n_valid

    p = np.exp(logits - log_den[:, None])
    q = np.where(positives, np.exp(pos_logits - log_num[:, None]), 0.0)
    g_logits = (p - q) * (valid[:, None] / n_valid)
    return float(value), pullback(g_logits)


def snnl(acts: np.ndarray, labels: np.ndarray, T: float, distance: str = "cosine"
         ) -> tuple[float, np.ndarray]:
    """Supervised soft nearest neighbour loss and its gradient w.r.t. ``acts``.

    Points whose label occurs nowhere else in the batch are left out of the
    average. ``distance`` is ``"cosine"`` (1 - cosine similarity) or
    ``"euclidean"`` (squared Euclidean).
    """
    if len(acts) < 2:
        raise ValueError("need at least two points")
    if T <= 0:
        raise ValueError("temperature must be positive")
    labels = np.asarray(labels)
    if labels.shape != (len(acts),):
        raise ValueError("one label per row required")
    return _snnl_with_positives(acts, labels[:, None] == labels[None, :], T, distance)


def nearest_input_neighbours(raw_inputs: np.ndarray) -> np.ndarray:
    """Index of each row's nearest other row by cosine distance (ties: lowest index)."""
    u, _ = _unit_rows(np.asarray(raw_inputs, dtype=np.float64))
    sim = u @ u.T
    np.fill_diagonal(sim, -np.inf)
    return sim.argmax(axis=1)


def snnl_unsupervised(acts: np.ndarray, raw_inputs: np.ndarray, T: float,
                      distance: str = "cosine") -> tuple[float, np.ndarray]:
    """Label-free soft nearest neighbour loss; each point's positive is its input-space nearest neighbour."""
    if len(acts) < 3:
        raise ValueError("need at least three points")
    if len(raw_inputs) != len(acts):
        raise ValueError("acts and raw_inputs must have the same number of rows")
    if T <= 0:
        raise ValueError("temperature must be positive")
    b = len(acts)
    positives = np.zeros((b, b), dtype=bool)
    positives[np.arange(b), nearest_input_neighbours(raw_inputs)] = True
    return _snnl_with_positives(acts, positives, T, distance)


def composite_loss(config: LossConfig, trace: ForwardTrace, x: np.ndarray,
                   labels: np.ndarray | None = None, epoch: int = 0
                   ) -> tuple[LossReport, np.ndarray, dict[int, np.ndarray]]:
    """Reconstruction BCE plus alpha-weighted SNNL over the configured layers.

    Returns the report, dL/d(reconstruction) and a dict of per-layer
    gradients ready for :func:`snnclust.nn.backward`.
    """
    recon, out_grad = bce_loss(x, trace.output)
    T = temperature(config.schedule, epoch)
    if not config.uses_snnl:
        return LossReport(recon, recon, [], None, T), out_grad, {}
    if config.supervised and labels is None:
        raise ValueError(f"{config.name} is supervised but no labels were given")

    values, grads = [], []
    n_layers = len(trace.activations) - 1
    for i in config.snnl_layers:
        if not 1 <= i <= n_layers:
            raise ValueError(f"snnl layer {i} outside 1..{n_layers}")
        acts = trace.activations[i]
        if config.supervised:
            v, g = snnl(acts, labels, T)
        else:
            v, g = snnl_unsupervised(acts, x, T)
        values.append(v)
        grads.append(g)

    chosen = None
    if config.layer_mode == "argmin":
        k = int(np.argmin(values))
        chosen = config.snnl_layers[k]
        aggregated = values[k]
        layer_grads = {chosen: config.alpha * grads[k]}
    else:
        aggregated = float(sum(values))
        layer_grads = {}
        for i, g in zip(config.snnl_layers, grads):
            layer_grads[i] = layer_grads.get(i, 0.0) + config.alpha * g
    total = recon + config.alpha * aggregated
    return LossReport(total, recon, values, chosen, T, aggregated), out_grad, layer_grads


def with_temperature(config: LossConfig, **changes) -> LossConfig:
    """Copy of ``config`` with schedule fields replaced."""
    return replace(config, schedule=replace(config.schedule, **changes))
