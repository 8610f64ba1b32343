"""Command-line entry point: ``snnclust <verb> [options]``.

Every :class:`ExperimentConfig` key is also a flag (``latent_dim`` becomes
``--latent-dim``). Flags override values read from ``--config``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cluster, dataio, experiment, metrics, nn
from .experiment import ExperimentConfig
from .training import TrainingDiverged, train_autoencoder


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    g = p.add_argument_group("experiment keys")
    for f in dataclasses.fields(ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}",
                       default=argparse.SUPPRESS, metavar=f.name.upper(),
                       help=f"default: {f.default!r}" if f.default is not dataclasses.MISSING else None)


def config_from_args(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_mapping(overrides)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_experiment(args) -> int:
    rec = experiment.run_experiment(config_from_args(args))
    _print_json({"output_dir": str(rec.output_dir),
                 "aggregate": metrics.aggregate_to_json(rec.aggregate),
                 "failures": [o.seed for o in rec.failures]})
    return 1 if len(rec.failures) == len(rec.outcomes) else 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    sizes = [int(s) for s in args.sizes.replace(",", " ").split()]
    for n, rec in experiment.few_labels_sweep(cfg, sizes):
        print(f"{n}\tacc={rec.aggregate['acc'].average:.4f}\tnmi={rec.aggregate['nmi'].average:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    if cfg.model == "original-pca":
        print("original-pca has nothing to train; use `experiment`", file=sys.stderr)
        return 2
    train, _ = experiment.load_splits(cfg)
    n = cfg.subset_size()
    if n is not None and n < len(train):
        train = dataio.sample_labelled_subset(train, n, args.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = train_autoencoder(train, cfg.loss_config(), latent_dim=cfg.latent_dim, epochs=cfg.epochs,
                                batch_size=cfg.batch_size, lr=cfg.lr, seed=args.seed, hidden=cfg.hidden)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    nn.save_checkpoint(out / "checkpoint.npz", res.params, seed=args.seed, epoch=cfg.epochs, adam=res.adam)
    experiment.write_loss_trace(out / "loss_trace.csv", [(args.seed, e) for e in res.history])
    print(out / "checkpoint.npz")
    return 0


def cmd_cluster(args) -> int:
    codes, _ = experiment.read_embeddings(args.embeddings)
    runs = cluster.nine_run_protocol(codes, args.k, args.seed)
    final = cluster.reported_result(runs)
    cluster.write_cluster_csv(final, args.out)
    _print_json({"runs": [{"max_iters": r.max_iters, "iterations": r.iterations_run,
                           "inertia": r.inertia, "converged": r.converged} for r in runs],
                 "reported_inertia": final.inertia, "out": str(args.out)})
    return 0


def _read_assignments(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return data[np.argsort(data[:, 0]), 1]


def cmd_evaluate(args) -> int:
    codes, labels = experiment.read_embeddings(args.embeddings)
    if args.labels:
        _, labels = experiment.read_embeddings(args.labels)
    if labels is None:
        print("no ground-truth labels: pass an embeddings CSV with a label column", file=sys.stderr)
        return 2
    pred = _read_assignments(args.assignments)
    report = metrics.evaluate(codes, labels, pred, silhouette_seed=args.seed)
    if args.out:
        metrics.dump_json(report.as_dict(), args.out)
    _print_json(report.as_dict())
    return 0


def cmd_demo(args) -> int:
    result = experiment.synthetic_gaussian_demo(args.n, args.classes, args.epochs, dim=args.dim,
                                                lr=args.lr, seed=args.seed)
    out = experiment.write_demo(result, args.out)
    fixed, anneal = result.traces["fixed"], result.traces["annealing"]
    reach = experiment.first_epoch_reaching(anneal.loss, fixed.loss[-1])
    _print_json({"out": str(out), "fixed_acc": fixed.accuracy, "annealing_acc": anneal.accuracy,
                 "fixed_final_snnl": fixed.loss[-1], "annealing_epoch_reaching_fixed_final": reach})
    return 0


def cmd_export(args) -> int:
    if args.csv:
        ds = experiment.read_dataset_csv(args.csv)
    else:
        ds = dataio.load_dataset(args.dataset, args.split, args.data_root)
    print(experiment.export_embeddings(args.checkpoint, ds, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snnclust", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("experiment", help="train/project, cluster and evaluate over all seeds")
    _add_config_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="repeat the experiment over labelled-subset sizes")
    _add_config_flags(p)
    p.add_argument("--sizes", default="1000,3000,6000")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train one autoencoder and save a checkpoint")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="nine-run k-means on an embeddings file")
    p.add_argument("--embeddings", required=True, help="embeddings CSV or .npy matrix")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="clusters")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="score assignments against labels")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--assignments", required=True)
    p.add_argument("--labels", help="CSV whose last column is the label, if not in --embeddings")
    p.add_argument("--seed", type=int, default=0, help="silhouette subsample seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("demo", help="SNNL on randomly labelled Gaussian points, fixed vs annealing")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="demo")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("export", help="write latent codes of a dataset split as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="mnist", choices=sorted(dataio.NUM_CLASSES))
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--data-root")
    p.add_argument("--csv", help="read the dataset from this CSV instead")
    p.add_argument("--out", default="embeddings.csv")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
