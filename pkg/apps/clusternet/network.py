"""ClusterNet: prototype classification with a learned, shift-tolerant metric.

For a query x and K stored centers the forward pass is

    q[t, k]  = |m_k * x - shift_t(c_k)| correlated with a 3x3 ones kernel
    r_k, s_k = min / argmin over t of q[t, k]          (per position)
    d_k      = mean((1 + lam * Lap(s_k)) * r_k)^2      (Lap: flow roughness, constant)
    g        = softmax(-d)
    f        = Y^T (Q g)

with centers c, masks m, label rows Y, lam and the K x K mixing matrix Q all
trainable. At initialization masks are ones, Q = I and Y is one-hot, which is
the plain nearest-prototype heuristic with a soft vote.
"""
from __future__ import annotations
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from shared import ops
from shared.autodiff import Graph, NodeRef
from shared.errors import CheckpointError, DatasetError, ShapeError
from shared.gradcheck import GradCase, SuiteEntry
from shared.schemas import ClusterConfig, LabeledImageSet, Parameter, ParameterSet, Tensor
from shared.seed_utils import rng_for

logger = logging.getLogger(__name__)

PATCH = (3, 3)      # window of the patch sum (a 3x3 ones kernel)
Shift = Tuple[int, int]


def shift_set(radius: int) -> List[Shift]:
    """All (i, j) with |i|, |j| <= radius; (0, 0) first so it wins ties."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    rest = [(i, j) for i in range(-radius, radius + 1) for j in range(-radius, radius + 1) if (i, j) != (0, 0)]
    return [(0, 0)] + rest


def laplacian_magnitude(index: np.ndarray, shifts: Sequence[Shift]) -> Tensor:
    """|5-point Laplacian| of the argmin shift field, edge-replicated border.

    index: (..., h, w) integer map into `shifts`. A spatially constant field
    gives exactly zero.
    """
    vec = np.asarray(shifts, dtype=np.float64)[index]          # (..., h, w, 2)
    pad = [(0, 0)] * (vec.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    p = np.pad(vec, pad, mode="edge")
    lap = (p[..., :-2, 1:-1, :] + p[..., 2:, 1:-1, :] + p[..., 1:-1, :-2, :] + p[..., 1:-1, 2:, :]
           - 4.0 * p[..., 1:-1, 1:-1, :])
    return np.sqrt(np.sum(lap * lap, axis=-1))


@dataclass
class ClusterOutput:
    graph: Graph
    f: NodeRef          # (m,) class scores
    g: NodeRef          # (K,) soft assignment
    d: NodeRef          # (K,) distances
    q: NodeRef          # (T, K, h, w) patch distances per shift
    shift_index: np.ndarray   # (K, h, w)


class ClusterNet:
    def __init__(self, config: ClusterConfig, params: ParameterSet, center_classes: np.ndarray):
        self.config = config
        self.params = params
        self.center_classes = np.asarray(center_classes, dtype=np.int64)
        self.shifts = shift_set(config.shift_radius)
        self._check()

    @property
    def k(self) -> int:
        return len(self.center_classes)

    def _check(self) -> None:
        cfg, k = self.config, self.k
        expected = {
            "centers": (k, cfg.height, cfg.width),
            "masks": (k, cfg.height, cfg.width),
            "labels": (k, cfg.n_classes),
            "lam": (),
            "Q": (k, k),
        }
        for name, shape in expected.items():
            if name not in self.params:
                raise CheckpointError(f"missing parameter {name}")
            if self.params[name].value.shape != shape:
                raise CheckpointError(f"{name}: shape {self.params[name].value.shape} != {shape}")

    @classmethod
    def from_centers(cls, config: ClusterConfig, centers: Tensor, classes: Sequence[int]) -> "ClusterNet":
        centers = np.asarray(centers, dtype=np.float64)
        classes = np.asarray(classes, dtype=np.int64)
        k = len(classes)
        params = ParameterSet([
            Parameter("centers", centers),
            Parameter("masks", np.ones_like(centers)),
            Parameter("labels", np.eye(config.n_classes)[classes]),
            Parameter("lam", config.lam_init),
            Parameter("Q", np.eye(k)),
        ])
        return cls(config, params, classes)

    def parameters(self) -> ParameterSet:
        return self.params

    def forward(self, g: Graph, x: Tensor) -> ClusterOutput:
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (cfg.height, cfg.width):
            raise ShapeError("clusternet", x.shape, (cfg.height, cfg.width))
        centers = g.parameter(self.params["centers"])
        masks = g.parameter(self.params["masks"])
        labels = g.parameter(self.params["labels"])
        lam = g.parameter(self.params["lam"])
        Q = g.parameter(self.params["Q"])
        k, t = self.k, len(self.shifts)

        masked = ops.mul(g, masks, g.constant(np.broadcast_to(x, (k,) + x.shape)))
        shifted = ops.shift_stack(g, centers, self.shifts)                       # (T, K, H, W)
        diff = ops.sub(g, ops.expand(g, masked, (t,)), shifted)
        q = ops.box_sum(g, ops.abs_(g, diff), PATCH)                           # (T, K, h, w)
        r, s = ops.reduce_min_indexed(g, q)

        rough = g.constant(laplacian_magnitude(s, self.shifts))
        weight = ops.add(g, g.constant(np.ones(g.value(rough).shape)), ops.mul(g, lam, rough))
        d = ops.mean(g, ops.square(g, ops.mul(g, weight, r)), axis=(1, 2))      # (K,)
        soft = ops.stable_softmax(g, ops.neg(g, d))
        mixed = ops.matmul(g, Q, ops.reshape(g, soft, (k, 1)))
        f = ops.reshape(g, ops.matmul(g, ops.transpose(g, labels), mixed), (cfg.n_classes,))
        return ClusterOutput(g, f, soft, d, q, s)

    def scores(self, x: Tensor) -> Tensor:
        g = Graph()
        return g.value(self.forward(g, x).f).copy()

    def predict(self, x: Tensor) -> int:
        """argmax of the class scores; lowest class index on ties."""
        return int(np.argmax(self.scores(x)))

    def predict_many(self, images: Tensor, workers: int = 1) -> np.ndarray:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return np.array(list(pool.map(self.predict, images)), dtype=np.int64)
        return np.array([self.predict(x) for x in images], dtype=np.int64)

    def loss(self, g: Graph, items: Sequence[Tuple[Tensor, int]]) -> NodeRef:
        """Mean over items of ||f(x) - onehot(label)||^2."""
        eye = np.eye(self.config.n_classes)
        total = None
        for image, label in items:
            out = self.forward(g, image)
            err = ops.sum_squares(g, ops.sub(g, out.f, g.constant(eye[int(label)])))
            total = err if total is None else ops.add(g, total, err)
        return ops.scale(g, total, 1.0 / len(items))


def init_from_samples(dataset: LabeledImageSet, config: ClusterConfig) -> ClusterNet:
    """per_class random training images of each class become the centers (class order)."""
    if dataset.images.shape[1:] != (config.height, config.width):
        raise ShapeError("init_from_samples", dataset.images.shape[1:], (config.height, config.width))
    rng = rng_for(config.seed, "centers")
    chosen: List[int] = []
    for c in range(config.n_classes):
        pool = np.flatnonzero(dataset.labels == c)
        if len(pool) < config.per_class:
            raise DatasetError(f"class {c}: {len(pool)} samples, need {config.per_class}")
        chosen.extend(int(i) for i in rng.choice(pool, size=config.per_class, replace=False))
    chosen_arr = np.array(chosen, dtype=np.int64)
    logger.info("initialized %d centers (%d per class, seed %d)", len(chosen_arr), config.per_class, config.seed)
    return ClusterNet.from_centers(config, dataset.images[chosen_arr], dataset.labels[chosen_arr])


def gradcheck_entry(instances: int = 5):
    """8x8 images, 4 centers, 9 shifts; instances near argmin ties or abs kinks are redrawn."""
    cfg = ClusterConfig(height=8, width=8, shift_radius=1, per_class=1, lam_init=0.1)
    margin = 1e-4

    def clear_of_kinks(net: ClusterNet, x: Tensor) -> bool:
        g = Graph()
        out = net.forward(g, x)
        q = np.sort(g.value(out.q), axis=0)
        if np.min(q[1] - q[0]) < margin:
            return False
        centers = net.params["centers"].value
        masked = net.params["masks"].value * x
        shifted = g.value(ops.shift_stack(g, g.constant(centers), net.shifts))
        return bool(np.min(np.abs(masked[None] - shifted)) >= margin)

    def factory(rng: np.random.Generator) -> GradCase:
        while True:
            net = ClusterNet.from_centers(cfg, rng.uniform(0, 1, size=(4, 8, 8)), [0, 1, 2, 3])
            for p in net.params:
                p.value = p.value + rng.uniform(-0.05, 0.05, size=p.value.shape)
            x = rng.uniform(0, 1, size=(8, 8))
            if clear_of_kinks(net, x):
                break
        label = int(rng.integers(0, 4))
        return GradCase(list(net.params), lambda g, refs: net.loss(g, [(x, label)]))

    return SuiteEntry("clusternet[8x8,K=4,T=9]", factory, instances, tol=1e-5)
