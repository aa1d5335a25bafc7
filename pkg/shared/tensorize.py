"""Builders that turn a heuristic's fixed constants into trainable structure.

Each builder is chosen so that a particular parameter setting reproduces the
plain heuristic exactly: identity metrics, Toeplitz kernels acting as valid
convolutions, 0/1 gates merging if/else branches, and unrolled loops whose
state can be frozen once a convergence test holds.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from shared import ops
from shared.autodiff import Graph, NodeRef
from shared.errors import ShapeError
from shared.schemas import Parameter, Tensor

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# dense metrics

def identity_dense(name: str, d: int, trainable: bool = True) -> Parameter:
    if d < 1:
        raise ValueError(f"identity_dense: d must be >= 1, got {d}")
    return Parameter(name, np.eye(d), trainable)


def mahalanobis(g: Graph, a: NodeRef, x: NodeRef, y: NodeRef) -> NodeRef:
    """(x - y)^T A (x - y) for d-vectors, or row-wise for (N, d) batches."""
    diff = ops.sub(g, x, y)
    shape = g.value(diff).shape
    if len(shape) == 1:
        row = ops.reshape(g, diff, (1, shape[0]))
        return ops.sum_(g, ops.mul(g, ops.matmul(g, row, a), row))
    if len(shape) != 2:
        raise ShapeError("mahalanobis", shape)
    return ops.sum_(g, ops.mul(g, ops.matmul(g, diff, a), diff), axis=1)


# ---------------------------------------------------------------------------
# Toeplitz operators

@dataclass
class ToeplitzParam:
    """A Toeplitz (1D) or Toeplitz-block-Toeplitz (2D) operator stored as its kernel."""
    kernel: Parameter
    input_shape: Tuple[int, ...]

    def __post_init__(self):
        k = self.kernel.value
        self.input_shape = tuple(int(n) for n in self.input_shape)
        if k.ndim not in (1, 2) or len(self.input_shape) != k.ndim:
            raise ShapeError("ToeplitzParam", k.shape, self.input_shape)
        if any(kn > n for kn, n in zip(k.shape, self.input_shape)):
            raise ShapeError("ToeplitzParam", k.shape, self.input_shape,
                             detail="kernel larger than operator input")

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return tuple(n - kn + 1 for n, kn in zip(self.input_shape, self.kernel.value.shape))


def toeplitz_apply(g: Graph, p: ToeplitzParam, x: NodeRef) -> NodeRef:
    shape = g.value(x).shape
    if shape[-len(p.input_shape):] != p.input_shape:
        raise ShapeError("toeplitz_apply", shape, p.input_shape)
    k = g.parameter(p.kernel)
    if len(p.input_shape) == 2:
        return ops.conv2d_valid(g, x, k)
    # 1D: lift to a single-row image
    n = p.input_shape[0]
    lead = shape[:-1]
    x2 = ops.reshape(g, x, lead + (1, n))
    k2 = ops.reshape(g, k, (1,) + p.kernel.value.shape)
    y = ops.conv2d_valid(g, x2, k2)
    return ops.reshape(g, y, lead + p.output_shape)


def toeplitz_materialize(p: ToeplitzParam) -> Tensor:
    """Dense matrix M with M @ vec(x) == vec(toeplitz_apply(p, x))."""
    k = p.kernel.value
    if k.ndim == 1:
        (n,), (m,) = p.input_shape, p.output_shape
        dense = np.zeros((m, n))
        for i in range(m):
            dense[i, i:i + k.size] = k
        return dense
    (h, w), (oh, ow) = p.input_shape, p.output_shape
    kh, kw = k.shape
    dense = np.zeros((oh * ow, h * w))
    for r in range(oh):
        for c in range(ow):
            row = dense[r * ow + c].reshape(h, w)
            row[r:r + kh, c:c + kw] = k
    return dense


def toeplitz_chain_apply(g: Graph, chain: Sequence[ToeplitzParam], x: NodeRef) -> NodeRef:
    """Product of Toeplitz operators applied right to left: stacked valid convolutions."""
    if not chain:
        raise ValueError("toeplitz_chain_apply: empty chain")
    for prev, nxt in zip(chain, chain[1:]):
        if prev.output_shape != nxt.input_shape:
            raise ShapeError("toeplitz_chain_apply", prev.output_shape, nxt.input_shape)
    for p in chain:
        x = toeplitz_apply(g, p, x)
    return x


# ---------------------------------------------------------------------------
# branches and loops

def gate_weight(name: str, truth: bool) -> Parameter:
    """Scalar gate initialised to the heuristic's truth value; unconstrained afterwards."""
    return Parameter(name, 1.0 if truth else 0.0)


def gate_merge(g: Graph, w: NodeRef, branch_true: NodeRef, branch_false: NodeRef) -> NodeRef:
    """w * branch_true + (1 - w) * branch_false."""
    if np.shape(g.value(w)) != ():
        raise ShapeError("gate_merge", np.shape(g.value(w)), detail="gate weight must be scalar")
    a, b = g.value(branch_true), g.value(branch_false)
    if a.shape != b.shape:
        raise ShapeError("gate_merge", a.shape, b.shape)
    one_minus = ops.sub(g, g.constant(1.0), w)
    return ops.add(g, ops.mul(g, w, branch_true), ops.mul(g, one_minus, branch_false))


StepBuilder = Callable[[Graph, NodeRef, int], NodeRef]
SettlePredicate = Callable[[Tensor], "bool | np.ndarray"]


def _settle_mask(settled, state_shape: Tuple[int, ...]) -> np.ndarray:
    mask = np.asarray(settled, dtype=bool)
    if mask.shape == ():
        return np.broadcast_to(mask, state_shape)
    # one flag per leading-axis row (batched systems)
    extra = len(state_shape) - mask.ndim
    return np.broadcast_to(mask.reshape(mask.shape + (1,) * extra), state_shape)


def unroll(g: Graph, count: int, step: StepBuilder, state: NodeRef,
           settle: Optional[SettlePredicate] = None,
           trace: Optional[List[NodeRef]] = None) -> NodeRef:
    """Apply `step` `count` times, threading the state.

    With `settle`, the predicate is evaluated on the incoming state before every
    step; where it holds the previous state is kept (a 0/1 gate fixed for this
    forward pass, so no gradient flows through the test itself). The predicate
    may return one bool or one bool per leading-axis row.

    The gate is applied with `ops.where`, which equals `gate_merge` at weights
    0 and 1 for finite values. A settled row must survive a step that
    overflows: gate_merge would form 0 * inf = nan there.
    """
    if count < 1:
        raise ValueError("unroll: count must be >= 1")
    for i in range(count):
        settled = None if settle is None else settle(g.value(state))
        new = step(g, state, i)
        if settled is not None and np.any(settled):
            mask = _settle_mask(settled, g.value(new).shape)
            new = ops.where(g, mask, state, new)
        state = new
        if trace is not None:
            trace.append(state)
    return state
