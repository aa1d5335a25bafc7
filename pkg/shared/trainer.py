"""Plain minibatch SGD shared by every trainable heurnet model.

A model only needs `parameters()` (a ParameterSet) and `loss(graph, items)`
returning a scalar mean-loss node for a list of dataset items. Minibatches
can be split into fixed-order shards that are differentiated on separate
graphs (optionally on a thread pool); shard gradients are combined in shard
order, so results do not depend on the worker count.
"""
from __future__ import annotations
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from shared.autodiff import Graph, NodeRef, backward
from shared.errors import NonFiniteLossError, ShapeError
from shared.schemas import MetricRow, ParameterSet, Tensor, TrainConfig
from shared.seed_utils import epoch_seed
from writers.checkpoint import save_checkpoint
from writers.csv_writer import write_csv

logger = logging.getLogger(__name__)


class Trainable(Protocol):
    def parameters(self) -> ParameterSet: ...

    def loss(self, graph: Graph, items: Sequence) -> NodeRef: ...


def sgd_step(params: ParameterSet, grads: Dict[str, Tensor], lr: float) -> None:
    """w <- w - lr * g for trainable parameters that received a gradient."""
    if lr == 0.0:
        return
    for p in params:
        if not p.trainable or p.name not in grads:
            continue
        g = np.asarray(grads[p.name])
        if g.shape != p.value.shape:
            raise ShapeError("sgd_step", p.value.shape, g.shape, detail=p.name)
        p.value = p.value - lr * g


def gradient_norm(grads: Dict[str, Tensor]) -> float:
    """Global L2 norm over every gradient array, safe from overflow in the squares."""
    if not grads:
        return 0.0
    peak = max(float(np.max(np.abs(g))) if np.size(g) else 0.0 for g in grads.values())
    if peak == 0.0 or not math.isfinite(peak):
        return peak
    return peak * math.sqrt(sum(float(np.sum(np.square(np.asarray(g) / peak))) for g in grads.values()))


def clip_gradients(grads: Dict[str, Tensor], max_norm: float) -> Tuple[Dict[str, Tensor], float]:
    """Rescale all gradients together so their global norm is at most max_norm.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    Directions are unchanged.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = gradient_norm(grads)
    if not math.isfinite(norm) or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: np.asarray(g) * factor for name, g in grads.items()}, norm


def batch_gradient(model: Trainable, items: Sequence, shard_size: Optional[int] = None,
                   workers: int = 1) -> Tuple[float, Dict[str, Tensor]]:
    """Mean loss and its gradient over `items`."""
    n = len(items)
    size = n if not shard_size else min(shard_size, n)
    shards = [items[i:i + size] for i in range(0, n, size)]

    def one(shard):
        g = Graph()
        loss = model.loss(g, shard)
        return float(g.value(loss)), backward(g, loss)

    if workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, shards))
    else:
        results = [one(s) for s in shards]

    if len(results) == 1:
        return results[0]
    total = 0.0
    grads: Dict[str, Tensor] = {}
    for shard, (loss, g) in zip(shards, results):
        w = len(shard) / n
        total += w * loss
        for name, value in g.items():
            grads[name] = w * value if name not in grads else grads[name] + w * value
    return total, grads


@dataclass
class TrainResult:
    metrics: List[MetricRow] = field(default_factory=list)
    steps: int = 0
    clipped: int = 0        # steps whose gradient was rescaled by clip_norm


def run(model: Trainable, dataset: Sequence, config: TrainConfig,
        evaluate: Optional[Callable[[Trainable], float]] = None,
        metrics_csv: Optional[str] = None) -> TrainResult:
    """Seeded-shuffle SGD for config.epochs epochs.

    Each epoch shuffles with seed ^ epoch, walks every minibatch (the last may
    be short) and appends (epoch, mean loss, eval metric). A checkpoint is
    written every eval_every epochs and at the end when config.checkpoint is
    set. With config.clip_norm, each batch gradient is rescaled to that global
    norm before the plain SGD update. A non-finite loss (or gradient norm)
    raises before the update, leaving the last checkpoint as the last good
    state.
    """
    result = TrainResult()
    params = model.parameters()
    trainable = {p.name for p in params if p.trainable}
    n = len(dataset)
    if n == 0 and config.epochs > 0:
        raise ValueError("cannot train on an empty dataset")

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(epoch_seed(config.seed, epoch)).permutation(n)
        seen, total = 0, 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            items = [dataset[int(i)] for i in idx]
            loss, grads = batch_gradient(model, items, config.shard_size, config.workers)
            if not math.isfinite(loss):
                raise NonFiniteLossError(loss, epoch, result.steps, config.lr)
            if config.clip_norm is not None:
                live = {name: g for name, g in grads.items() if name in trainable}
                grads, norm = clip_gradients(live, config.clip_norm)
                if not math.isfinite(norm):
                    raise NonFiniteLossError(norm, epoch, result.steps, config.lr)
                if norm > config.clip_norm:
                    result.clipped += 1
            sgd_step(params, grads, config.lr)
            result.steps += 1
            seen += len(items)
            total += loss * len(items)

        due = epoch == config.epochs or (config.eval_every and epoch % config.eval_every == 0)
        metric = float(evaluate(model)) if evaluate is not None and due else float("nan")
        row = MetricRow(epoch, total / max(seen, 1), metric)
        result.metrics.append(row)
        logger.info("epoch %d/%d loss=%.6g metric=%.6g", epoch, config.epochs, row.loss, row.metric)
        if config.checkpoint and due:
            save_checkpoint(params.state(), config.checkpoint)

    if config.checkpoint and config.epochs == 0:
        save_checkpoint(params.state(), config.checkpoint)
    if result.clipped:
        logger.info("gradient clipped on %d of %d steps (clip_norm=%g)", result.clipped, result.steps,
                    config.clip_norm)
    if metrics_csv:
        write_csv([{"epoch": r.epoch, "loss": r.loss, "metric": r.metric, **r.extra} for r in result.metrics],
                  metrics_csv, columns=None if result.metrics else ["epoch", "loss", "metric"])
    return result
