"""Graph-building helpers over the primitives registered in shared.autodiff.

Each helper records one node (or a short composite) and returns its
reference. Composites such as `mat_inverse_small` are expressed purely in
terms of recorded primitives, so they are differentiable without a dedicated
backward rule.
"""
from __future__ import annotations
from typing import Sequence, Tuple

import numpy as np

from shared.autodiff import Graph, NodeRef, record
from shared.errors import ShapeError, SingularMatrixError

EPS_DET = 1e-12


def add(g: Graph, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "add", (a, b))


def sub(g: Graph, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "sub", (a, b))


def mul(g: Graph, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "mul", (a, b))


def div(g: Graph, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "div", (a, b))


def scale(g: Graph, a: NodeRef, factor: float) -> NodeRef:
    return record(g, "scale", (a,), factor=float(factor))


def neg(g: Graph, a: NodeRef) -> NodeRef:
    return scale(g, a, -1.0)


def abs_(g: Graph, a: NodeRef) -> NodeRef:
    return record(g, "abs", (a,))


def square(g: Graph, a: NodeRef) -> NodeRef:
    return record(g, "square", (a,))


def matmul(g: Graph, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "matmul", (a, b))


def transpose(g: Graph, a: NodeRef, axes: Sequence[int] | None = None) -> NodeRef:
    return record(g, "transpose", (a,), axes=None if axes is None else tuple(axes))


def reshape(g: Graph, a: NodeRef, shape: Sequence[int]) -> NodeRef:
    return record(g, "reshape", (a,), shape=tuple(shape))


def expand(g: Graph, a: NodeRef, lead: Sequence[int]) -> NodeRef:
    return record(g, "expand", (a,), lead=tuple(lead))


def take(g: Graph, a: NodeRef, index: int, axis: int = -1) -> NodeRef:
    return record(g, "take", (a,), index=index, axis=axis)


def stack(g: Graph, refs: Sequence[NodeRef], axis: int = 0) -> NodeRef:
    return record(g, "stack", tuple(refs), axis=axis)


def sum_(g: Graph, a: NodeRef, axis=None) -> NodeRef:
    return record(g, "sum", (a,), axis=axis)


def mean(g: Graph, a: NodeRef, axis=None) -> NodeRef:
    return record(g, "mean", (a,), axis=axis)


def conv2d_valid(g: Graph, x: NodeRef, kernel: NodeRef) -> NodeRef:
    return record(g, "conv2d_valid", (x, kernel))


def box_sum(g: Graph, x: NodeRef, size: Tuple[int, int] = (3, 3)) -> NodeRef:
    """conv2d_valid with a constant ones kernel, computed separably."""
    return record(g, "box_sum", (x,), size=(int(size[0]), int(size[1])))


def shift_stack(g: Graph, x: NodeRef, shifts: Sequence[Tuple[int, int]]) -> NodeRef:
    return record(g, "shift_stack", (x,), shifts=tuple(tuple(s) for s in shifts))


def reduce_min_indexed(g: Graph, stacked: NodeRef) -> Tuple[NodeRef, np.ndarray]:
    """Minimum over axis 0 plus the integer argmin map (no gradient)."""
    ref = record(g, "min_indexed", (stacked,))
    return ref, g.aux(ref)


def gather(g: Graph, stacked: NodeRef, index: np.ndarray) -> NodeRef:
    return record(g, "gather", (stacked,), index=np.asarray(index, dtype=np.intp))


def where(g: Graph, mask: np.ndarray, a: NodeRef, b: NodeRef) -> NodeRef:
    return record(g, "where", (a, b), mask=np.asarray(mask, dtype=bool))


def stable_softmax(g: Graph, z: NodeRef) -> NodeRef:
    return record(g, "softmax", (z,))


def sum_squares(g: Graph, a: NodeRef, axis=None) -> NodeRef:
    return sum_(g, square(g, a), axis=axis)


# ---------------------------------------------------------------------------
# closed-form small inverse

def _entries(g: Graph, a: NodeRef, d: int):
    rows = [take(g, a, i, axis=-2) for i in range(d)]
    return [[take(g, row, j, axis=-1) for j in range(d)] for row in rows]


def _det_and_adjugate(g: Graph, a: NodeRef):
    shape = g.value(a).shape
    if len(shape) < 2 or shape[-1] != shape[-2] or not 1 <= shape[-1] <= 3:
        raise ShapeError("mat_inverse_small", shape, detail="need (..., d, d) with d <= 3")
    d = shape[-1]
    if d == 1:
        e = take(g, take(g, a, 0, axis=-1), 0, axis=-1)
        return e, [[None]]
    m = _entries(g, a, d)
    if d == 2:
        det = sub(g, mul(g, m[0][0], m[1][1]), mul(g, m[0][1], m[1][0]))
        adj = [[m[1][1], neg(g, m[0][1])],
               [neg(g, m[1][0]), m[0][0]]]
        return det, adj

    def minor(r0, r1, c0, c1):
        return sub(g, mul(g, m[r0][c0], m[r1][c1]), mul(g, m[r0][c1], m[r1][c0]))

    # cofactors C[i][j]; adjugate is the transpose
    c = [[minor(1, 2, 1, 2), neg(g, minor(1, 2, 0, 2)), minor(1, 2, 0, 1)],
         [neg(g, minor(0, 2, 1, 2)), minor(0, 2, 0, 2), neg(g, minor(0, 2, 0, 1))],
         [minor(0, 1, 1, 2), neg(g, minor(0, 1, 0, 2)), minor(0, 1, 0, 1)]]
    det = add(g, add(g, mul(g, m[0][0], c[0][0]), mul(g, m[0][1], c[0][1])),
              mul(g, m[0][2], c[0][2]))
    adj = [[c[j][i] for j in range(3)] for i in range(3)]
    return det, adj


def _assemble(g: Graph, det: NodeRef, adj, d: int) -> NodeRef:
    if d == 1:
        one = g.constant(np.ones(g.value(det).shape))
        inv = div(g, one, det)
        return reshape(g, inv, g.value(det).shape + (1, 1))
    rows = [stack(g, [div(g, adj[i][j], det) for j in range(d)], axis=-1) for i in range(d)]
    return stack(g, rows, axis=-2)


def mat_inverse_small(g: Graph, a: NodeRef, eps_det: float = EPS_DET) -> NodeRef:
    """Adjugate / determinant inverse of (..., d, d), d <= 3.

    Raises SingularMatrixError when any |det| <= eps_det.
    """
    det, adj = _det_and_adjugate(g, a)
    dv = g.value(det)
    bad = np.abs(dv) <= eps_det
    if np.any(bad):
        raise SingularMatrixError(float(np.ravel(dv)[np.argmax(np.ravel(bad))]), eps_det)
    return _assemble(g, det, adj, g.value(a).shape[-1])


def masked_inverse(g: Graph, a: NodeRef, eps_det: float = EPS_DET) -> Tuple[NodeRef, np.ndarray]:
    """Batched inverse that never raises.

    Where |det| <= eps_det (or is not finite) the determinant is replaced by 1,
    so the value is finite but meaningless, and the returned boolean mask is
    False; callers must discard whatever they build from those entries.
    """
    det, adj = _det_and_adjugate(g, a)
    dv = g.value(det)
    ok = (np.abs(dv) > eps_det) & np.isfinite(dv)
    safe = where(g, ok, det, g.constant(np.ones_like(dv)))
    return _assemble(g, safe, adj, g.value(a).shape[-1]), ok
