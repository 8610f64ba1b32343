"""Experiment runner: train or project, encode the test split, cluster, evaluate, repeat over seeds."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cluster, dataio, losses, metrics, nn
from .dataio import Dataset
from .training import EpochLog, TrainingDiverged, train_autoencoder

log = logging.getLogger(__name__)

DATASETS = ("mnist", "fashion-mnist", "emnist-balanced", "synthetic-gaussian", "csv")
MODELS = ("original-pca", *losses.MODEL_NAMES)
SUPERVISED_SUBSET = {"emnist-balanced": 20_000}
DEFAULT_SUPERVISED_SUBSET = 10_000
# where files live, not what was computed; kept out of report.json
LOCATION_KEYS = ("output_dir", "data_root")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one table row.

    ``labelled_subset_size`` left unset means: 10,000 training rows (20,000
    for EMNIST) for supervised SNNL configs, the full training split for
    everything else. When set it applies to every model.
    """
    dataset: str = "mnist"
    model: str = "snnl-5"
    labelled_subset_size: int | None = None
    latent_dim: int = 70
    epochs: int = 50
    batch_size: int = 256
    lr: float = 1e-3
    alpha: float = 100.0
    fixed_T: float = 1.0
    eta: float = 1.0
    gamma: float = 0.55
    snnl_layers: tuple[int, ...] = losses.DEFAULT_LAYERS
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    k: int | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    output_dir: str = "runs/experiment"
    data_root: str | None = None
    train_csv: str | None = None
    test_csv: str | None = None
    synthetic_n: int = 2000
    synthetic_classes: int = 4
    synthetic_dim: int = 20
    synthetic_seed: int = 0
    export_embeddings: bool = True

    def __post_init__(self):
        self.snnl_layers = tuple(int(i) for i in self.snnl_layers)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}; choose from {DATASETS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.latent_dim < 1 or self.epochs < 0 or self.batch_size < 2:
            raise ValueError("latent_dim >= 1, epochs >= 0 and batch_size >= 2 required")
        if len(self.hidden) != 3:
            raise ValueError("hidden takes exactly three widths")
        if self.dataset == "csv" and not self.train_csv:
            raise ValueError("dataset=csv needs train_csv")

    @property
    def repeats(self) -> int:
        return len(self.seeds)

    def loss_config(self) -> losses.LossConfig:
        return losses.config_from_name(self.model, alpha=self.alpha, fixed_T=self.fixed_T,
                                       eta=self.eta, gamma=self.gamma,
                                       snnl_layers=self.snnl_layers)

    def subset_size(self) -> int | None:
        if self.labelled_subset_size is not None:
            return self.labelled_subset_size
        if self.model in losses.TABLE_I and losses.TABLE_I[self.model][0]:
            return SUPERVISED_SUBSET.get(self.dataset, DEFAULT_SUPERVISED_SUBSET)
        return None

    def to_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, values: dict, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        """Build from string or typed values; unknown keys are an error."""
        base = base or cls()
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            changes[name] = parse_value(kinds[name], raw)
        return dataclasses.replace(base, **changes)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Read a flat ``key = value`` file (``#`` starts a comment), then apply overrides."""
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        cfg = cls.from_mapping(values)
        return cls.from_mapping(overrides, cfg) if overrides else cfg


def _jsonable(v):
    return list(v) if isinstance(v, tuple) else v


def parse_value(kind: str, raw):
    """Coerce a config value given the annotation string of its field."""
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    optional = "None" in kind
    if optional and text.lower() in ("", "none", "null"):
        return None
    if kind.startswith("tuple"):
        return tuple(int(p) for p in text.replace(",", " ").split())
    if kind.startswith("bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


# ---------------------------------------------------------------- datasets

def synthetic_gaussian(n: int, classes: int, dim: int, seed: int, name="synthetic-gaussian") -> Dataset:
    """Gaussian blobs squashed into (0, 1) so they can feed a logistic-output autoencoder."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 2.0, size=(classes, dim))
    labels = rng.integers(0, classes, n)
    raw = means[labels] + rng.normal(size=(n, dim))
    return Dataset(1.0 / (1.0 + np.exp(-raw)), labels, name, classes)


def read_dataset_csv(path, name="csv") -> Dataset:
    """CSV with a header; a column named ``label`` is taken as labels, the rest as features."""
    with open(path, newline="") as f:
        header = next(csv.reader(f))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if "label" in header:
        j = header.index("label")
        labels = data[:, j].astype(np.int64)
        feats = np.delete(data, j, axis=1)
        return Dataset(feats, labels, name)
    return Dataset(data, None, name)


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "synthetic-gaussian":
        # both splits share class means (same seed); rows differ through the larger draw
        full = synthetic_gaussian(2 * cfg.synthetic_n, cfg.synthetic_classes, cfg.synthetic_dim,
                                  cfg.synthetic_seed)
        n = cfg.synthetic_n
        cut = lambda sl: Dataset(full.features[sl], full.labels[sl], full.name, full.num_classes)
        return cut(slice(0, n)), cut(slice(n, 2 * n))
    if cfg.dataset == "csv":
        train = read_dataset_csv(cfg.train_csv, "csv")
        test = read_dataset_csv(cfg.test_csv, "csv") if cfg.test_csv else train
        return train, test
    return (dataio.load_dataset(cfg.dataset, "train", cfg.data_root),
            dataio.load_dataset(cfg.dataset, "test", cfg.data_root))


# ---------------------------------------------------------------- outputs

def write_embeddings_csv(codes: np.ndarray, labels, path) -> Path:
    """``z0..z{c-1},label`` rows; values are float32 printed with 9 significant digits."""
    codes = np.asarray(codes, dtype=np.float32)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    c = codes.shape[1]
    with open(path, "w", newline="") as f:
        f.write(",".join([f"z{i}" for i in range(c)] + ["label"]) + "\n")
        labs = np.full(len(codes), -1, dtype=np.int64) if labels is None else np.asarray(labels)
        for row, lab in zip(codes, labs):
            f.write(",".join("%.9g" % v for v in row) + f",{int(lab)}\n")
    return path


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Load codes (and labels when present) from an embeddings CSV or a ``.npy`` matrix."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64), None
    with open(path, newline="") as f:
        header = next(csv.reader(f))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(header)))
    if header and header[-1] == "label":
        labels = data[:, -1].astype(np.int64)
        return data[:, :-1], None if np.all(labels < 0) else labels
    return data, None


def export_embeddings(checkpoint, dataset: Dataset, path) -> Path:
    params, _, _ = nn.load_checkpoint(checkpoint)
    if dataset.dim != params.input_dim:
        raise ValueError(f"checkpoint expects {params.input_dim}-d inputs, dataset has {dataset.dim}")
    codes = nn.encode(params, dataset.features) if len(dataset) else np.zeros((0, params.latent_dim))
    return write_embeddings_csv(codes, dataset.labels, path)


LOSS_TRACE_FIELDS = ("seed", "epoch", "temperature", "total", "reconstruction", "snnl",
                     "batches", "skipped_batches")


def write_loss_trace(path, rows: list[tuple[int, EpochLog]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOSS_TRACE_FIELDS)
        for seed, e in rows:
            w.writerow([seed, e.epoch, repr(e.temperature), repr(e.total), repr(e.reconstruction),
                        repr(e.snnl), e.batches, e.skipped_batches])


# ---------------------------------------------------------------- runs

@dataclass
class SeedOutcome:
    seed: int
    report: metrics.MetricsReport | None
    error: str | None = None
    checkpoint: str | None = None
    embeddings: str | None = None
    history: list[EpochLog] = field(default_factory=list)
    inertia: float | None = None

    def to_dict(self) -> dict:
        return {"seed": self.seed, "error": self.error,
                "metrics": None if self.report is None else self.report.as_dict(),
                "checkpoint": self.checkpoint, "embeddings": self.embeddings,
                "inertia": self.inertia, "epochs_run": len(self.history)}


@dataclass
class RunRecord:
    config: ExperimentConfig
    outcomes: list[SeedOutcome]
    aggregate: dict[str, metrics.Aggregate]
    wall_clock: float = 0.0
    output_dir: Path | None = None

    @property
    def reports(self) -> list[metrics.MetricsReport]:
        return [o.report for o in self.outcomes if o.report is not None]

    @property
    def failures(self) -> list[SeedOutcome]:
        return [o for o in self.outcomes if o.error is not None]

    def to_dict(self) -> dict:
        # wall-clock lives in timing.json so the report itself stays reproducible
        snapshot = {k: v for k, v in self.config.to_dict().items() if k not in LOCATION_KEYS}
        return {"config": snapshot, "subset_size": self.config.subset_size(),
                "seeds": [o.to_dict() for o in self.outcomes],
                "aggregate": metrics.aggregate_to_json(self.aggregate)}


def encode_for_seed(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int,
                    seed_dir: Path | None) -> tuple[np.ndarray, list[EpochLog], str | None]:
    """Fit the representation for one seed; return test codes, the epoch log and a checkpoint path."""
    n = cfg.subset_size()
    fit_on = train if n is None or n >= len(train) else dataio.sample_labelled_subset(train, n, seed)
    if cfg.model == "original-pca":
        proj = cluster.pca_fit(fit_on.features, cfg.latent_dim)
        ck = None
        if seed_dir is not None:
            np.savez(seed_dir / "pca.npz", mean=proj.mean, components=proj.components,
                     explained_variance=proj.explained_variance)
            ck = "pca.npz"
        return cluster.pca_transform(proj, test.features), [], ck
    result = train_autoencoder(fit_on, cfg.loss_config(), latent_dim=cfg.latent_dim,
                               epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr,
                               seed=seed, hidden=cfg.hidden)
    ck = None
    if seed_dir is not None:
        nn.save_checkpoint(seed_dir / "checkpoint.npz", result.params, seed=seed,
                           epoch=cfg.epochs, adam=result.adam)
        ck = "checkpoint.npz"
    return nn.encode(result.params, test.features), result.history, ck


def run_experiment(cfg: ExperimentConfig, *, write: bool = True,
                   splits: tuple[Dataset, Dataset] | None = None) -> RunRecord:
    """Run every seed of ``cfg`` and aggregate.

    Each seed picks the labelled subset, initialises the network, shuffles
    batches and seeds k-means, so repeats differ in all of these together.
    A seed whose training diverges is recorded as a failure and left out
    of the aggregate.
    """
    start = time.perf_counter()
    train, test = splits if splits is not None else load_splits(cfg)
    if test.labels is None:
        raise ValueError("evaluation needs a labelled test split")
    k = cfg.k or test.num_classes
    out = Path(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    outcomes, trace_rows, timing = [], [], {}
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        seed_dir = out / f"seed_{seed}" if write else None
        if seed_dir is not None:
            seed_dir.mkdir(exist_ok=True)
        rel = lambda name: None if name is None else f"seed_{seed}/{name}"
        try:
            codes, history, ck = encode_for_seed(cfg, train, test, seed, seed_dir)
        except TrainingDiverged as exc:
            log.error("seed %d diverged: %s", seed, exc)
            outcomes.append(SeedOutcome(seed, None, error=str(exc)))
            continue
        trace_rows += [(seed, e) for e in history]
        runs = cluster.nine_run_protocol(codes, k, seed)
        final = cluster.reported_result(runs)
        report = metrics.evaluate(codes, test.labels, final.assignments, silhouette_seed=seed)
        emb = None
        if seed_dir is not None:
            cluster.write_cluster_csv(final, seed_dir)
            if cfg.export_embeddings:
                write_embeddings_csv(codes, test.labels, seed_dir / "embeddings.csv")
                emb = "embeddings.csv"
        outcomes.append(SeedOutcome(seed, report, None, rel(ck), rel(emb), history, final.inertia))
        timing[str(seed)] = time.perf_counter() - t0
        log.info("%s seed %d: acc=%.4f nmi=%.4f (%.1fs)", cfg.model, seed, report.acc, report.nmi,
                 timing[str(seed)])
    record = RunRecord(cfg, outcomes, metrics.aggregate([o.report for o in outcomes if o.report]),
                       time.perf_counter() - start, out if write else None)
    if write:
        metrics.dump_json(record.to_dict(), out / "report.json")
        metrics.write_report_csv(out / "report.csv", [(cfg.model, record.aggregate)])
        write_loss_trace(out / "loss_trace.csv", trace_rows)
        metrics.dump_json({"total_seconds": record.wall_clock, "per_seed_seconds": timing},
                          out / "timing.json")
    return record


def few_labels_sweep(cfg: ExperimentConfig, sizes, *, splits=None) -> list[tuple[int, RunRecord]]:
    """One experiment per subset size; writes ``sweep.csv`` with ACC and NMI per size."""
    splits = splits if splits is not None else load_splits(cfg)
    root = Path(cfg.output_dir)
    results = []
    for n in sizes:
        sub = cfg.replace(labelled_subset_size=int(n), output_dir=str(root / f"size_{n}"))
        results.append((int(n), run_experiment(sub, splits=splits)))
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["size", "acc_average", "acc_best", "nmi_average", "nmi_best"])
        for n, rec in results:
            a, m = rec.aggregate["acc"], rec.aggregate["nmi"]
            w.writerow([n, repr(a.average), repr(a.best), repr(m.average), repr(m.best)])
    return results


# ---------------------------------------------------------------- demo

@dataclass
class DemoTrace:
    schedule: str
    temperatures: list[float]
    loss: list[float]            # SNNL at the schedule's own temperature, epochs 0..E
    loss_at_unit_T: list[float]  # same coordinates scored at T = 1, for a common yardstick
    snapshots: dict[int, np.ndarray]
    final: np.ndarray
    accuracy: float | None = None


@dataclass
class DemoResult:
    initial: np.ndarray
    labels: np.ndarray
    traces: dict[str, DemoTrace]


def synthetic_gaussian_demo(n: int = 300, classes: int = 4, epochs: int = 50, *, dim: int = 8,
                            lr: float = 0.1, seed: int = 0, eta: float = 1.0, gamma: float = 0.55,
                            fixed_T: float = 1.0, schedules=("fixed", "annealing"),
                            snapshot_every: int = 10) -> DemoResult:
    """Move randomly labelled Gaussian points directly under full-batch SNNL with Adam.

    Coordinates are kept at epochs 0, ``snapshot_every``, ... and the last
    epoch. The clustering accuracy is that of the reported run of the
    nine-run k-means protocol on the final coordinates.
    """
    if not n >= classes >= 2:
        raise ValueError("need n >= classes >= 2")
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(n, dim))
    labels = rng.integers(0, classes, n)
    traces = {}
    for mode in schedules:
        sched = losses.TemperatureSchedule(mode, fixed_T, eta, gamma)
        x = x0.copy()
        m, v = np.zeros_like(x), np.zeros_like(x)
        temps, own, unit, snaps = [], [], [], {}
        for epoch in range(epochs + 1):
            T = losses.temperature(sched, epoch)
            val, g = losses.snnl(x, labels, T)
            temps.append(T)
            own.append(val)
            unit.append(losses.snnl(x, labels, 1.0)[0])
            if epoch % snapshot_every == 0 or epoch == epochs:
                snaps[epoch] = x.copy()
            if epoch == epochs:
                break
            t = epoch + 1
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        final = cluster.reported_result(cluster.nine_run_protocol(x, classes, seed))
        acc = metrics.clustering_accuracy(labels, final.assignments)
        traces[mode] = DemoTrace(mode, temps, own, unit, snaps, x, acc)
    return DemoResult(x0, labels, traces)


def first_epoch_reaching(trace: list[float], level: float) -> int | None:
    for i, v in enumerate(trace):
        if v <= level:
            return i
    return None


def write_demo(result: DemoResult, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    modes = list(result.traces)
    with open(directory / "loss_trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch"] + [f"{m}_{c}" for m in modes for c in ("T", "snnl", "snnl_T1")])
        for e in range(len(result.traces[modes[0]].loss)):
            row = [e]
            for mname in modes:
                tr = result.traces[mname]
                row += [repr(tr.temperatures[e]), repr(tr.loss[e]), repr(tr.loss_at_unit_T[e])]
            w.writerow(row)
    for mname, tr in result.traces.items():
        for epoch, pts in tr.snapshots.items():
            write_embeddings_csv(pts, result.labels, directory / f"coords_{mname}_epoch{epoch:03d}.csv")
    summary = {m: {"accuracy": tr.accuracy, "snnl_first": tr.loss[0], "snnl_last": tr.loss[-1]}
               for m, tr in result.traces.items()}
    metrics.dump_json(summary, directory / "summary.json")
    return directory
