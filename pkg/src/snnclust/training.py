from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataio import Dataset, batches
from .losses import LossConfig, UndefinedLossError, composite_loss, temperature

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    temperature: float
    total: float
    reconstruction: float
    snnl: float
    batches: int
    skipped_batches: int = 0
    # argmin mode: how often each layer was picked this epoch
    chosen_layers: dict[int, int] = field(default_factory=dict)


@dataclass
class TrainResult:
    params: nn.ModelParams
    adam: nn.AdamState
    history: list[EpochLog]


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence((seed, 1, epoch)).generate_state(1)[0])


def train_autoencoder(ds: Dataset, config: LossConfig, *, latent_dim: int = 70, epochs: int = 50,
                      batch_size: int = 256, lr: float = 1e-3, seed: int = 0,
                      hidden=nn.DEFAULT_HIDDEN, on_epoch=None) -> TrainResult:
    """Train the autoencoder on ``ds`` with the composite loss described by ``config``.

    Batches whose labels leave every point without a same-class partner are
    skipped with a warning. Any non-finite loss or gradient raises
    :class:`TrainingDiverged`.
    """
    if config.supervised and config.uses_snnl and ds.labels is None:
        raise ValueError(f"{config.name} needs a labelled dataset")
    params = nn.build_autoencoder(ds.dim, latent_dim, seed, hidden)
    adam = nn.AdamState.for_params(params, lr=lr)
    history = []
    for epoch in range(epochs):
        totals = np.zeros(3)
        n_batches = skipped = 0
        chosen: dict[int, int] = {}
        for batch in batches(ds, batch_size, epoch_seed(seed, epoch)):
            trace = nn.forward(params, batch.features)
            try:
                report, out_grad, layer_grads = composite_loss(
                    config, trace, batch.features, batch.labels, epoch)
            except UndefinedLossError as exc:
                log.warning("epoch %d: skipping batch (%s)", epoch, exc)
                skipped += 1
                continue
            if not math.isfinite(report.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {report}")
            grads = nn.backward(params, trace, out_grad, layer_grads)
            try:
                nn.adam_step(params, grads, adam)
            except nn.NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            totals += (report.total, report.reconstruction, report.snnl)
            n_batches += 1
            if report.chosen_layer is not None:
                chosen[report.chosen_layer] = chosen.get(report.chosen_layer, 0) + 1
        means = totals / max(n_batches, 1)
        entry = EpochLog(epoch, temperature(config.schedule, epoch), *map(float, means),
                         n_batches, skipped, dict(sorted(chosen.items())))
        history.append(entry)
        log.info("epoch %d T=%.4f loss=%.5f rec=%.5f snnl=%.5f", epoch, entry.temperature,
                 entry.total, entry.reconstruction, entry.snnl)
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(params, adam, history)
