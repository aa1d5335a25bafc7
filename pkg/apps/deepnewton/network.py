"""DeepNewtonNet: unrolled Newton iterations with trainable candidate sets.

Layer n forms every combination (a, b, c) of its step matrices A, history
matrices B and derivative matrices C:

    x_{n+1,r} = sum_l B_b[l] x_{n-l} + C_c[l] F'(x_{n-l}) - A_a J^{-1}(x_n) F(x_n)

and keeps, per system, the candidate with the smallest ||F||. The F' term only
exists for one variable; with two variables C stays frozen at zero.

Parameter names: "layer{n}.A{a}" (d, d), "layer{n}.B{b}" (L, d, d),
"layer{n}.C{c}" (L, d, d), plus "x0.gamma" (n_coeffs, d) in linear x0 mode.
"""
from __future__ import annotations
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from shared import ops
from shared.autodiff import Graph, NodeRef
from shared.errors import CheckpointError, ShapeError
from shared.gradcheck import GradCase, SuiteEntry
from shared.schemas import DeepNewtonConfig, Parameter, ParameterSet, PolySystem, Tensor
from apps.deepnewton.polysys import (PolyBatch, as_batch, newton_direction, residual_sq,
                                     select_candidate)

logger = logging.getLogger(__name__)


@dataclass
class LayerTrace:
    selected: np.ndarray     # (B,) candidate index in product(A, B, C) order
    residual: np.ndarray     # (B,) ||F||^2 of the selected candidate
    singular: np.ndarray     # (B,) Jacobian was singular at x_n


@dataclass
class DeepNewtonOutput:
    graph: Graph
    x: NodeRef
    trace: List[LayerTrace] = field(default_factory=list)

    @property
    def value(self) -> Tensor:
        return self.graph.value(self.x)


class DeepNewtonNet:
    def __init__(self, config: DeepNewtonConfig, params: ParameterSet):
        self.config = config
        self.params = params
        self._check()

    # -- construction ------------------------------------------------------

    @classmethod
    def init_baseline(cls, config: DeepNewtonConfig) -> "DeepNewtonNet":
        """A_n = alphas * I, B_n = {I, 0, ..}, C_n = {0}; reproduces Newton-LS."""
        d, L = config.d, config.history
        eye = np.eye(d)
        hist = np.zeros((L, d, d))
        hist[0] = eye
        params = ParameterSet()
        for n in range(config.layers):
            for a, alpha in enumerate(sorted(config.alphas)):
                params.add(Parameter(f"layer{n}.A{a}", alpha * eye))
            for b in range(config.n_beta):
                params.add(Parameter(f"layer{n}.B{b}", hist))
            for c in range(config.n_gamma):
                params.add(Parameter(f"layer{n}.C{c}", np.zeros((L, d, d)),
                                     trainable=(d == 1 and config.train_gamma)))
        if config.x0_mode == "linear":
            params.add(init_x0_linear(config))
        return cls(config, params)

    @classmethod
    def init_identity(cls, config: DeepNewtonConfig) -> "DeepNewtonNet":
        """A = {I}, B = {I}, C = {0}: reproduces plain Newton with alpha = 1."""
        return cls.init_baseline(config.model_copy(update={"alphas": (1.0,), "n_beta": 1, "n_gamma": 1}))

    def _check(self) -> None:
        cfg = self.config
        d, L = cfg.d, cfg.history
        for n in range(cfg.layers):
            for key, count, shape in (("A", len(cfg.alphas), (d, d)), ("B", cfg.n_beta, (L, d, d)),
                                      ("C", cfg.n_gamma, (L, d, d))):
                for k in range(count):
                    name = f"layer{n}.{key}{k}"
                    if name not in self.params:
                        raise CheckpointError(f"missing parameter {name}")
                    if self.params[name].value.shape != shape:
                        raise CheckpointError(f"{name}: shape {self.params[name].value.shape} != {shape}")
        if cfg.x0_mode == "linear" and "x0.gamma" not in self.params:
            raise CheckpointError("missing parameter x0.gamma")

    def parameters(self) -> ParameterSet:
        return self.params

    # -- forward -----------------------------------------------------------

    def start(self, g: Graph, batch: PolyBatch) -> NodeRef:
        cfg = self.config
        shape = (batch.size, cfg.d)
        if cfg.x0_mode == "zero":
            return g.constant(np.zeros(shape))
        base = g.constant(np.full(shape, cfg.x0))
        if cfg.x0_mode == "constant":
            return base
        vec = coefficient_vectors(batch, cfg.max_degree)
        gamma = g.parameter(self.params["x0.gamma"])
        return ops.add(g, base, ops.matmul(g, g.constant(vec), gamma))

    def start_value(self) -> float:
        """Scalar start of the plain Newton baselines that matches this net's x0."""
        return 0.0 if self.config.x0_mode == "zero" else self.config.x0

    def forward(self, systems, graph: Optional[Graph] = None) -> DeepNewtonOutput:
        cfg = self.config
        batch = as_batch(systems)
        if batch.d != cfg.d:
            raise ShapeError("deepnewton", (batch.d,), (cfg.d,), detail="system dimension != config.d")
        g = graph if graph is not None else Graph()
        out = DeepNewtonOutput(g, self.start(g, batch))
        xs: List[NodeRef] = [out.x]
        derivs: List[NodeRef] = []
        for n in range(cfg.layers):
            x_n = xs[-1]
            nd = newton_direction(g, x_n, batch, cfg.eps_det)
            if cfg.d == 1:
                derivs.append(ops.reshape(g, nd.J, (batch.size, 1)))
            past = [max(n - l, 0) for l in range(cfg.history)]

            hyst = [self._history_term(g, n, f"B{b}", [xs[i] for i in past])
                    for b in range(cfg.n_beta)]
            moment = ([self._history_term(g, n, f"C{c}", [derivs[i] for i in past])
                       for c in range(cfg.n_gamma)] if cfg.d == 1 else [None])
            steps = [ops.matmul(g, nd.direction, ops.transpose(g, g.parameter(self.params[f"layer{n}.A{a}"])))
                     for a in range(len(cfg.alphas))]

            cands = []
            for a, b, c in itertools.product(range(len(steps)), range(len(hyst)), range(len(moment))):
                base = hyst[b] if moment[c] is None else ops.add(g, hyst[b], moment[c])
                cands.append(ops.sub(g, base, steps[a]))
            chosen, best, idx = select_candidate(g, cands, batch)
            out.trace.append(LayerTrace(idx, g.value(best).copy(), ~nd.ok))
            xs.append(chosen)
        out.x = xs[-1]
        return out

    def _history_term(self, g: Graph, n: int, key: str, history: Sequence[NodeRef]) -> NodeRef:
        mats = g.parameter(self.params[f"layer{n}.{key}"])
        acc = None
        for l, x in enumerate(history):
            term = ops.matmul(g, x, ops.transpose(g, ops.take(g, mats, l, axis=0)))
            acc = term if acc is None else ops.add(g, acc, term)
        return acc

    # -- training interface ------------------------------------------------

    def loss(self, g: Graph, systems: Sequence[PolySystem]) -> NodeRef:
        return residual_loss(g, self, systems)

    def predict(self, systems) -> Tensor:
        return self.forward(systems).value


def coefficient_vectors(batch: PolyBatch, max_degree: int) -> Tensor:
    """Flattened coefficients per system, padded to max_degree: (B, n_coeffs)."""
    if batch.degree > max_degree:
        raise ShapeError("x0.gamma", (batch.degree,), (max_degree,), detail="system degree above max_degree")
    pad = [(0, 0), (0, 0)] + [(0, max_degree - batch.degree)] * batch.d
    return np.pad(batch.coeffs, pad).reshape(batch.size, -1)


def init_x0_linear(config: DeepNewtonConfig) -> Parameter:
    """Gamma = 0, so x0 starts at the configured constant for every system."""
    return Parameter("x0.gamma", np.zeros((config.n_coeffs, config.d)))


def residual_loss(g: Graph, net: DeepNewtonNet, systems) -> NodeRef:
    """Batch mean of ||F(x_out)||^2."""
    batch = as_batch(systems)
    out = net.forward(batch, graph=g)
    return ops.mean(g, residual_sq(g, out.x, batch))


def gradcheck_entry(instances: int = 5):
    """Full 3-layer, 1-variable network on a small batch of sqrt systems."""
    cfg = DeepNewtonConfig(layers=3, history=2, d=1, x0_mode="linear", x0=0.5, max_degree=2)

    def factory(rng: np.random.Generator) -> GradCase:
        net = DeepNewtonNet.init_baseline(cfg)
        for p in net.params:
            p.value = p.value + rng.uniform(-0.05, 0.05, size=p.value.shape)
        systems = [PolySystem(1, [[-s, 0.0, 1.0]]) for s in rng.uniform(0.5, 3.0, size=4)]
        return GradCase(list(net.params), lambda g, refs: residual_loss(g, net, systems))

    return SuiteEntry("deepnewton[d=1,layers=3]", factory, instances, tol=1e-5)
