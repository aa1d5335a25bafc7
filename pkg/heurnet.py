"""
heurnet command-line entry point.

Sub-commands:
    data fetch       download and verify MNIST / Fashion-MNIST into the cache
    newton train     train DeepNewton on a synthetic polynomial task
    newton eval      Newton / Newton-LS / DeepNewton-LS comparison table
    newton sweep     x_out of all three methods over a grid of S
    cluster init     baseline ClusterNet built from random training images
    cluster train    SGD on a ClusterNet checkpoint
    cluster eval     overall accuracy and row-percent confusion matrix
    gradcheck        finite-difference check of every op and both models

Every run prints its resolved configuration and seed first, so it can be
repeated exactly.

Exit codes: 0 ok, 1 gradient check failed, 2 checksum, 3 network,
4 numeric, 5 parse/usage, 6 checkpoint/format.

Usage:
    python heurnet.py data fetch --dataset mnist
    python heurnet.py newton train --task sqrt --epochs 50 --ckpt runs/sqrt.hnet --out runs/sqrt_loss.csv
    python heurnet.py newton eval --task sqrt --ckpt runs/sqrt.hnet --out runs/table.csv
    python heurnet.py newton sweep --poly "x^5 - S" --s-min 0.1 --s-max 2 --steps 100 --out runs/sweep.csv
    python heurnet.py cluster init --dataset mnist --per-class 10 --ckpt runs/mnist.hnet
    python heurnet.py cluster train --ckpt runs/mnist.hnet --epochs 10 --train-subset 10000
    python heurnet.py cluster eval --ckpt runs/mnist.hnet --confusion runs/confusion.csv
    python heurnet.py gradcheck --seed 0
"""
from __future__ import annotations
import argparse
import json
import logging
import sys
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from shared.config import get_config
from shared.errors import CheckpointError, GradcheckFailure, HeurnetError
from shared.gradcheck import format_report, op_entries, run_suite
from shared.io_http import fetch_dataset, fetch_files
from shared.schemas import ClusterConfig, DeepNewtonConfig, TrainConfig
from shared.seed_utils import derive_seed
from shared import trainer
from apps.clusternet import network as clusternet
from apps.clusternet.metrics import confusion
from apps.deepnewton import network as deepnewton
from apps.deepnewton.datasets import TASKS, TRAINING_DEFAULTS, PolyDataset, gen_poly_dataset
from apps.deepnewton.experiments import compare_methods, eval_mse, sweep, sweep_errors
from parsers.poly_text import parse_poly
from writers.checkpoint import load_checkpoint, read_sidecar, save_checkpoint, write_sidecar
from writers.csv_writer import matrix_rows, write_csv

logger = logging.getLogger("heurnet")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
USAGE_EXIT = 5


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors on exit code 5 (2 means checksum failure here)."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def print_resolved(args: argparse.Namespace, **models: Any) -> None:
    """The reproducibility header: environment config, flags and model configs."""
    flags = {k: v for k, v in vars(args).items() if k not in ("func",)}
    block: Dict[str, Any] = {"env": get_config().safe_dict(), "flags": flags}
    for name, model in models.items():
        block[name] = model.model_dump() if hasattr(model, "model_dump") else model
    print("resolved config:")
    print(json.dumps(block, indent=2, sort_keys=True, default=str))
    print(f"seed: {getattr(args, 'seed', None)}")


# ---------------------------------------------------------------------------
# checkpoints

def _restore(params, path: str) -> None:
    try:
        params.load_state(load_checkpoint(path))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: {e}") from e


def save_newton(net: deepnewton.DeepNewtonNet, path: str) -> None:
    write_newton_meta(net.config, path)
    save_checkpoint(net.params.state(), path)


def write_newton_meta(cfg: DeepNewtonConfig, path: str) -> None:
    write_sidecar(path, {"model": "deepnewton", "config": cfg.model_dump(mode="json")})


def load_newton(path: str) -> deepnewton.DeepNewtonNet:
    meta = read_sidecar(path, "deepnewton")
    try:
        cfg = DeepNewtonConfig.model_validate(meta.get("config", {}))
    except ValidationError as e:
        raise CheckpointError(f"{path}: bad stored config: {e}") from e
    net = deepnewton.DeepNewtonNet.init_baseline(cfg)
    _restore(net.params, path)
    return net


def save_cluster(net: clusternet.ClusterNet, path: str, dataset: str) -> None:
    write_sidecar(path, {
        "model": "clusternet",
        "dataset": dataset,
        "config": net.config.model_dump(mode="json"),
        "center_classes": [int(c) for c in net.center_classes],
    })
    save_checkpoint(net.params.state(), path)


def load_cluster(path: str):
    """(net, dataset name) from a checkpoint written by `cluster init`."""
    meta = read_sidecar(path, "clusternet")
    try:
        cfg = ClusterConfig.model_validate(meta.get("config", {}))
    except ValidationError as e:
        raise CheckpointError(f"{path}: bad stored config: {e}") from e
    classes = np.asarray(meta.get("center_classes", []), dtype=np.int64)
    k = len(classes)
    placeholder = np.zeros((k, cfg.height, cfg.width))
    net = clusternet.ClusterNet.from_centers(cfg, placeholder, classes)
    _restore(net.params, path)
    return net, meta.get("dataset", "mnist")


# ---------------------------------------------------------------------------
# data

def cmd_data_fetch(args: argparse.Namespace) -> None:
    print_resolved(args)
    files = fetch_files(args.dataset, args.cache, args.mirror, args.offline, workers=args.workers)
    for filename, (path, hit) in sorted(files.items()):
        print(f"{filename}: {'cache hit' if hit else 'downloaded'} ({path})")


# ---------------------------------------------------------------------------
# newton

def _newton_config(args: argparse.Namespace) -> DeepNewtonConfig:
    train_gamma = getattr(args, "train_gamma", None)
    return DeepNewtonConfig(
        layers=args.layers,
        history=args.history,
        alphas=args.alphas,
        d=2 if args.task == "poly2d" else 1,
        task=args.task,
        x0_mode=args.x0_mode,
        x0=args.x0,
        train_gamma=TRAINING_DEFAULTS[args.task].train_gamma if train_gamma is None else train_gamma,
    )


def _newton_train_config(args: argparse.Namespace) -> TrainConfig:
    defaults = TRAINING_DEFAULTS[args.task]
    clip = defaults.clip_norm if args.clip_norm is None else (args.clip_norm or None)
    return TrainConfig(epochs=args.epochs, lr=defaults.lr if args.lr is None else args.lr,
                       batch_size=args.batch, seed=args.seed, eval_every=args.eval_every,
                       checkpoint=args.ckpt, workers=args.workers, clip_norm=clip)


def _newton_net(args: argparse.Namespace) -> deepnewton.DeepNewtonNet:
    if args.ckpt:
        net = load_newton(args.ckpt)
        logger.info("loaded DeepNewton checkpoint %s", args.ckpt)
        return net
    return deepnewton.DeepNewtonNet.init_baseline(_newton_config(args))


def held_out_set(task: str, count: int, seed: int) -> PolyDataset:
    """Held-out systems, drawn from a stream independent of the training set."""
    return gen_poly_dataset(task, count, derive_seed(seed, "test"))


def cmd_newton_train(args: argparse.Namespace) -> None:
    cfg = _newton_config(args)
    train_cfg = _newton_train_config(args)
    print_resolved(args, model=cfg, train=train_cfg)
    net = deepnewton.DeepNewtonNet.init_baseline(cfg)
    data = gen_poly_dataset(cfg.task, args.count, args.seed)
    held_out = held_out_set(cfg.task, args.test_count, args.seed)

    def evaluate(model) -> float:
        return eval_mse("DeepNewton-LS", model.predict(held_out.systems), held_out.systems, held_out.roots).mse

    if args.ckpt:
        write_newton_meta(cfg, args.ckpt)
    result = trainer.run(net, data, train_cfg, evaluate=evaluate, metrics_csv=args.out)
    if result.metrics:
        print(f"trained {result.steps} steps; held-out MSE {result.metrics[-1].metric:.6g}")
    _print_rows(compare_methods(net, held_out))


def _print_rows(rows) -> None:
    print(f"{'method':<14} {'mse':>12} {'residual':>12} {'singular':>9} {'reference':>10}")
    for r in rows:
        print(f"{r.method:<14} {r.mse:>12.6g} {r.residual_mse:>12.6g} {r.singular_frac:>9.3f} {r.reference:>10.4g}")


def cmd_newton_eval(args: argparse.Namespace) -> None:
    net = _newton_net(args)
    print_resolved(args, model=net.config)
    data = held_out_set(net.config.task, args.count, args.seed)
    rows = compare_methods(net, data)
    _print_rows(rows)
    if args.out:
        write_csv([r.as_dict() for r in rows], args.out)
    if args.trace:
        out = net.forward(data.systems)
        trace_rows = [
            {"system": b, "layer": n, "selected": int(t.selected[b]), "residual": float(t.residual[b]),
             "singular": int(t.singular[b])}
            for n, t in enumerate(out.trace) for b in range(len(data))
        ]
        write_csv(trace_rows, args.trace, columns=["system", "layer", "selected", "residual", "singular"])


def cmd_newton_sweep(args: argparse.Namespace) -> None:
    template = parse_poly(args.poly, d=1)
    net = _newton_net(args)
    print_resolved(args, model=net.config)
    rows = sweep(net, template, args.s_min, args.s_max, args.steps)
    if args.out:
        write_csv([r.as_dict() for r in rows], args.out,
                  columns=["S", "x_Newton", "x_NewtonLS", "x_DeepNewton", "truth"])
    for method, err in sweep_errors(rows).items():
        print(f"{method:<14} mean |x - root| = {err:.6g}")


# ---------------------------------------------------------------------------
# cluster

def cmd_cluster_init(args: argparse.Namespace) -> None:
    cfg = ClusterConfig(per_class=args.per_class, shift_radius=args.shift_radius, lam_init=args.lam,
                        seed=args.seed)
    print_resolved(args, model=cfg)
    train, _ = fetch_dataset(args.dataset, offline=args.offline)
    net = clusternet.init_from_samples(train, cfg)
    save_cluster(net, args.ckpt, args.dataset)
    print(f"{net.k} centers saved to {args.ckpt}")


def cmd_cluster_train(args: argparse.Namespace) -> None:
    net, dataset = load_cluster(args.ckpt)
    train_cfg = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch, seed=args.seed,
                            eval_every=args.eval_every, checkpoint=args.ckpt, workers=args.workers,
                            shard_size=args.shard_size)
    print_resolved(args, model=net.config, train=train_cfg, dataset=dataset)
    train, test = fetch_dataset(dataset, offline=args.offline)
    train = train.subset(args.train_subset)
    test = test.subset(args.test_subset)

    def evaluate(model) -> float:
        return confusion(model, test, workers=args.workers).accuracy

    result = trainer.run(net, train, train_cfg, evaluate=evaluate, metrics_csv=args.out)
    if result.metrics:
        print(f"trained {result.steps} steps; test accuracy {result.metrics[-1].metric:.2f}%")


def cmd_cluster_eval(args: argparse.Namespace) -> None:
    net, dataset = load_cluster(args.ckpt)
    print_resolved(args, model=net.config, dataset=dataset)
    _, test = fetch_dataset(dataset, offline=args.offline)
    test = test.subset(args.test_subset)
    result = confusion(net, test, workers=args.workers)
    print(f"overall accuracy: {result.accuracy:.2f}% on {len(test)} {dataset} test images")
    if args.confusion:
        classes = list(range(net.config.n_classes))
        write_csv(matrix_rows(result.percent, classes, classes), args.confusion,
                  columns=["true"] + [str(c) for c in classes])


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(args: argparse.Namespace) -> None:
    print_resolved(args)
    entries = op_entries(args.instances)
    if not args.ops_only:
        entries += [deepnewton.gradcheck_entry(args.model_instances),
                    clusternet.gradcheck_entry(args.model_instances)]
    rows = run_suite(entries, seed=args.seed)
    print(format_report(rows))
    failing = [r.name for r in rows if not r.passed]
    if failing:
        raise GradcheckFailure(failing)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="heurnet",
        description="Heuristics as trainable networks: DeepNewton and ClusterNet",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Exit codes: 0 ok, 1 gradcheck, 2 checksum, 3 network, 4 numeric, 5 parse/usage, 6 checkpoint",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="DEBUG logging")
    groups = parser.add_subparsers(dest="command", required=True)

    # data
    data = groups.add_parser("data", help="dataset cache management")
    data_cmds = data.add_subparsers(dest="action", required=True)
    fetch = data_cmds.add_parser("fetch", help="download and verify a dataset")
    fetch.add_argument("--dataset", choices=["mnist", "fashion"], default="mnist")
    fetch.add_argument("--cache", help="cache root (default: HEURNET_CACHE)")
    fetch.add_argument("--mirror", help="mirror base URL (default: HEURNET_MIRROR or the dataset's own)")
    fetch.add_argument("--offline", action="store_true", help="fail instead of downloading")
    fetch.add_argument("--workers", type=int, default=4)
    fetch.set_defaults(func=cmd_data_fetch)

    # newton
    newton = groups.add_parser("newton", help="DeepNewton experiments")
    newton_cmds = newton.add_subparsers(dest="action", required=True)

    def newton_common(p: argparse.ArgumentParser, count: Optional[int] = None) -> None:
        p.add_argument("--task", choices=TASKS, default="sqrt")
        p.add_argument("--layers", type=int, default=3)
        p.add_argument("--history", type=int, default=1, help="past iterates per layer")
        p.add_argument("--alphas", type=_float_list, default=(0.5, 1.0, 1.5))
        p.add_argument("--x0", type=float, default=0.5, help="start point for all methods")
        p.add_argument("--x0-mode", choices=["zero", "constant", "linear"], default="constant")
        p.add_argument("--seed", type=int, default=0)
        if count is not None:
            p.add_argument("--count", type=int, default=count, help="number of systems")
        p.add_argument("--ckpt", help="checkpoint path")
        p.add_argument("--out", help="CSV output")

    train = newton_cmds.add_parser("train", help="train on a synthetic task")
    newton_common(train, 2000)
    train.add_argument("--test-count", type=int, default=500)
    train.add_argument("--epochs", type=int, default=50)
    train.add_argument("--lr", type=float, help="learning rate (default: per task)")
    train.add_argument("--clip-norm", type=float, help="gradient norm bound, 0 disables (default: per task)")
    train.add_argument("--train-gamma", action=argparse.BooleanOptionalAction, default=None,
                       help="train the F' matrices C (default: per task)")
    train.add_argument("--batch", type=int, default=32)
    train.add_argument("--eval-every", type=int, default=0)
    train.add_argument("--workers", type=int, default=1)
    train.set_defaults(func=cmd_newton_train)

    ev = newton_cmds.add_parser("eval", help="compare Newton, Newton-LS and DeepNewton-LS")
    newton_common(ev, 500)
    ev.add_argument("--trace", help="CSV of the per-layer selected candidate and residual")
    ev.set_defaults(func=cmd_newton_eval)

    sw = newton_cmds.add_parser("sweep", help="x_out over a grid of S")
    newton_common(sw)
    sw.add_argument("--poly", default="x^5 - S", help="1-variable template with placeholder S")
    sw.add_argument("--s-min", type=float, default=0.1)
    sw.add_argument("--s-max", type=float, default=2.0)
    sw.add_argument("--steps", type=int, default=100)
    sw.set_defaults(func=cmd_newton_sweep)

    # cluster
    cluster = groups.add_parser("cluster", help="ClusterNet experiments")
    cluster_cmds = cluster.add_subparsers(dest="action", required=True)

    def cluster_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--ckpt", required=True, help="checkpoint path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--offline", action="store_true", help="use the cache only")

    init = cluster_cmds.add_parser("init", help="baseline weights from random training images")
    cluster_common(init)
    init.add_argument("--dataset", choices=["mnist", "fashion"], default="mnist")
    init.add_argument("--per-class", type=int, default=10)
    init.add_argument("--shift-radius", type=int, default=2)
    init.add_argument("--lam", type=float, default=0.1, help="initial Laplacian penalty weight")
    init.set_defaults(func=cmd_cluster_init)

    ctrain = cluster_cmds.add_parser("train", help="continue training a checkpoint")
    cluster_common(ctrain)
    ctrain.add_argument("--epochs", type=int, default=10)
    ctrain.add_argument("--lr", type=float, default=1e-2)
    ctrain.add_argument("--batch", type=int, default=32)
    ctrain.add_argument("--shard-size", type=int, default=1, help="images per graph")
    ctrain.add_argument("--eval-every", type=int, default=1, help="epochs between held-out evaluations")
    ctrain.add_argument("--train-subset", type=int)
    ctrain.add_argument("--test-subset", type=int)
    ctrain.add_argument("--out", help="metrics CSV")
    ctrain.set_defaults(func=cmd_cluster_train)

    cev = cluster_cmds.add_parser("eval", help="accuracy and confusion matrix")
    cluster_common(cev)
    cev.add_argument("--test-subset", type=int)
    cev.add_argument("--confusion", help="row-percent confusion matrix CSV")
    cev.set_defaults(func=cmd_cluster_eval)

    # gradcheck
    gc = groups.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=100, help="random instances per op")
    gc.add_argument("--model-instances", type=int, default=5)
    gc.add_argument("--ops-only", action="store_true", help="skip the two full-model graphs")
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else get_config().LOG_LEVEL
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        args.func(args)
    except HeurnetError as e:
        logger.error("%s", e)
        return e.exit_code
    except ValidationError as e:
        logger.error("invalid configuration: %s", e)
        return USAGE_EXIT
    except ValueError as e:
        logger.error("%s", e)
        return USAGE_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
