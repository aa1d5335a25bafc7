"""Eager, taped reverse-mode automatic differentiation.

A Graph is an append-only list of Nodes. Recording an op evaluates it
immediately and appends a node whose inputs are strictly earlier nodes, so the
trace is topologically ordered by construction and `backward` is a single
reverse sweep over it.

Every primitive is registered in OPS with a forward function and a
vector-Jacobian product. Values are float64 numpy arrays; shape () is a scalar.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from shared.errors import NumericError, ShapeError
from shared.schemas import Parameter, Tensor

NodeRef = int


@dataclass
class OpDef:
    name: str
    forward: Callable[..., Any]           # (*values, **attrs) -> value | (value, aux)
    vjp: Callable[..., Tuple[Optional[Tensor], ...]]  # (g, out, aux, *values, **attrs)
    has_aux: bool = False


OPS: Dict[str, OpDef] = {}


def register(name: str, vjp: Callable[..., Tuple], has_aux: bool = False):
    def deco(fn):
        OPS[name] = OpDef(name, fn, vjp, has_aux)
        return fn
    return deco


@dataclass
class Node:
    op: str
    inputs: Tuple[NodeRef, ...]
    value: Tensor
    attrs: Dict[str, Any] = field(default_factory=dict)
    aux: Any = None
    param: Optional[str] = None
    adjoint: Optional[Tensor] = None


class Graph:
    """Single-threaded recording of one forward pass."""

    def __init__(self):
        self.nodes: List[Node] = []
        self._param_refs: Dict[str, NodeRef] = {}
        self._trainable: Dict[str, bool] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> NodeRef:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def constant(self, value) -> NodeRef:
        return self._append(Node("const", (), np.asarray(value, dtype=np.float64)))

    def parameter(self, p: Parameter) -> NodeRef:
        # one leaf per parameter name, so fan-out accumulates in one adjoint
        ref = self._param_refs.get(p.name)
        if ref is None:
            ref = self._append(Node("param", (), p.value, param=p.name))
            self._param_refs[p.name] = ref
            self._trainable[p.name] = p.trainable
        return ref

    def value(self, ref: NodeRef) -> Tensor:
        return self.nodes[ref].value

    def aux(self, ref: NodeRef) -> Any:
        return self.nodes[ref].aux

    def param_refs(self) -> Dict[str, NodeRef]:
        return dict(self._param_refs)


def record(graph: Graph, op: str, inputs: Sequence[NodeRef], **attrs) -> NodeRef:
    """Evaluate `op` on earlier nodes and append the result to the trace."""
    opdef = OPS.get(op)
    if opdef is None:
        raise KeyError(f"unknown op: {op}")
    n = len(graph.nodes)
    for ref in inputs:
        if not 0 <= ref < n:
            raise ValueError(f"{op}: input {ref} is not an earlier node (graph has {n})")
    values = [graph.nodes[r].value for r in inputs]
    out = opdef.forward(*values, **attrs)
    aux = None
    if opdef.has_aux:
        out, aux = out
    return graph._append(Node(op, tuple(inputs), np.asarray(out, dtype=np.float64), attrs, aux))


def backward(graph: Graph, loss: NodeRef) -> Dict[str, Tensor]:
    """Reverse sweep from a scalar loss; returns d loss / d parameter by name."""
    loss_value = graph.nodes[loss].value
    if loss_value.shape != ():
        raise ShapeError("backward", loss_value.shape, detail="loss must be a scalar")
    for node in graph.nodes:
        node.adjoint = None
    graph.nodes[loss].adjoint = np.ones((), dtype=np.float64)

    for i in range(loss, -1, -1):
        node = graph.nodes[i]
        g = node.adjoint
        if g is None or not node.inputs:
            continue
        opdef = OPS[node.op]
        values = [graph.nodes[r].value for r in node.inputs]
        grads = opdef.vjp(g, node.value, node.aux, *values, **node.attrs)
        for ref, gi in zip(node.inputs, grads):
            if gi is None:
                continue
            target = graph.nodes[ref]
            target.adjoint = gi if target.adjoint is None else target.adjoint + gi

    out: Dict[str, Tensor] = {}
    for name, ref in graph._param_refs.items():
        adj = graph.nodes[ref].adjoint
        out[name] = np.zeros_like(graph.nodes[ref].value) if adj is None else np.asarray(adj)
    return out


# ---------------------------------------------------------------------------
# shape helpers

def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(op, a.shape, b.shape, detail="only scalar broadcast is supported")


def _unbroadcast(g: Tensor, shape: Tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


# ---------------------------------------------------------------------------
# elementwise

def _add_vjp(g, out, aux, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@register("add", _add_vjp)
def _add(a, b):
    _check_binary("add", a, b)
    return a + b


def _sub_vjp(g, out, aux, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


@register("sub", _sub_vjp)
def _sub(a, b):
    _check_binary("sub", a, b)
    return a - b


def _mul_vjp(g, out, aux, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("mul", _mul_vjp)
def _mul(a, b):
    _check_binary("mul", a, b)
    return a * b


def _div_vjp(g, out, aux, a, b):
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


@register("div", _div_vjp)
def _div(a, b):
    _check_binary("div", a, b)
    return a / b


def _scale_vjp(g, out, aux, a, factor):
    return (g * factor,)


@register("scale", _scale_vjp)
def _scale(a, factor: float):
    return a * factor


def _abs_vjp(g, out, aux, a):
    # np.sign(0) == 0: subgradient 0 at the kink
    return (g * np.sign(a),)


@register("abs", _abs_vjp)
def _abs(a):
    return np.abs(a)


def _square_vjp(g, out, aux, a):
    return (2.0 * a * g,)


@register("square", _square_vjp)
def _square(a):
    return a * a


# ---------------------------------------------------------------------------
# linear algebra and layout

def _matmul_vjp(g, out, aux, a, b):
    return g @ b.T, a.T @ g


@register("matmul", _matmul_vjp)
def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def _transpose_vjp(g, out, aux, a, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


@register("transpose", _transpose_vjp)
def _transpose(a, axes=None):
    if axes is not None and len(axes) != a.ndim:
        raise ShapeError("transpose", a.shape, detail=f"axes {axes}")
    return np.transpose(a, axes)


def _reshape_vjp(g, out, aux, a, shape):
    return (g.reshape(a.shape),)


@register("reshape", _reshape_vjp)
def _reshape(a, shape):
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, tuple(shape))
    return a.reshape(shape)


def _expand_vjp(g, out, aux, a, lead):
    return (g.sum(axis=tuple(range(len(lead)))),)


@register("expand", _expand_vjp)
def _expand(a, lead):
    """Repeat `a` along new leading axes of sizes `lead`."""
    return np.broadcast_to(a, tuple(lead) + a.shape)


def _take_vjp(g, out, aux, a, index, axis):
    ga = np.zeros_like(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = index
    ga[tuple(sl)] = g
    return (ga,)


@register("take", _take_vjp)
def _take(a, index: int, axis: int):
    if not -a.ndim <= axis < a.ndim or not -a.shape[axis] <= index < a.shape[axis]:
        raise ShapeError("take", a.shape, detail=f"index {index} on axis {axis}")
    return np.take(a, index, axis=axis)


def _stack_vjp(g, out, aux, *values, axis):
    return tuple(np.take(g, i, axis=axis) for i in range(len(values)))


@register("stack", _stack_vjp)
def _stack(*values, axis: int):
    shapes = {v.shape for v in values}
    if len(shapes) != 1:
        raise ShapeError("stack", *[v.shape for v in values])
    return np.stack(values, axis=axis)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _sum_vjp(g, out, aux, a, axis=None):
    axes = _norm_axes(axis, a.ndim)
    return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)


@register("sum", _sum_vjp)
def _sum(a, axis=None):
    return a.sum(axis=axis)


def _mean_vjp(g, out, aux, a, axis=None):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return (np.broadcast_to(np.expand_dims(g, axes), a.shape) / count,)


@register("mean", _mean_vjp)
def _mean(a, axis=None):
    return a.mean(axis=axis)


# ---------------------------------------------------------------------------
# image ops

def _conv_vjp(g, out, aux, x, k):
    kh, kw = k.shape
    oh, ow = g.shape[-2:]
    gx = np.zeros_like(x)
    gk = np.zeros_like(k)
    for a in range(kh):
        for b in range(kw):
            window = x[..., a:a + oh, b:b + ow]
            gx[..., a:a + oh, b:b + ow] += k[a, b] * g
            gk[a, b] = np.sum(window * g)
    return gx, gk


@register("conv2d_valid", _conv_vjp)
def _conv2d_valid(x, k):
    """Cross-correlation over the last two axes, valid positions only."""
    if k.ndim != 2 or x.ndim < 2:
        raise ShapeError("conv2d_valid", x.shape, k.shape)
    kh, kw = k.shape
    h, w = x.shape[-2:]
    if kh > h or kw > w:
        raise ShapeError("conv2d_valid", x.shape, k.shape, detail="kernel larger than input")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.zeros(x.shape[:-2] + (oh, ow))
    for a in range(kh):
        for b in range(kw):
            out += k[a, b] * x[..., a:a + oh, b:b + ow]
    return out


def _box_vjp(g, out, aux, x, size):
    kh, kw = size
    oh, ow = g.shape[-2:]
    cols = np.zeros(g.shape[:-1] + (ow + kw - 1,))
    for b in range(kw):
        cols[..., b:b + ow] += g
    gx = np.zeros_like(x)
    for a in range(kh):
        gx[..., a:a + oh, :] += cols
    return (gx,)


@register("box_sum", _box_vjp)
def _box_sum(x, size):
    """Valid sum over every kh x kw window of the last two axes.

    Same values as conv2d_valid with a ones kernel, done as a row pass then a
    column pass.
    """
    kh, kw = size
    if x.ndim < 2 or kh < 1 or kw < 1:
        raise ShapeError("box_sum", x.shape, tuple(size))
    h, w = x.shape[-2:]
    if kh > h or kw > w:
        raise ShapeError("box_sum", x.shape, tuple(size), detail="window larger than input")
    oh, ow = h - kh + 1, w - kw + 1
    rows = x[..., 0:oh, :].copy()
    for a in range(1, kh):
        rows += x[..., a:a + oh, :]
    out = rows[..., :, 0:ow].copy()
    for b in range(1, kw):
        out += rows[..., :, b:b + ow]
    return out


def _shift_pad(shifts) -> int:
    return max((max(abs(di), abs(dj)) for di, dj in shifts), default=0)


def _shift_stack_vjp(g, out, aux, x, shifts):
    h, w = x.shape[-2:]
    r = _shift_pad(shifts)
    gp = np.zeros(x.shape[:-2] + (h + 2 * r, w + 2 * r))
    for t, (di, dj) in enumerate(shifts):
        gp[..., r - di:r - di + h, r - dj:r - dj + w] += g[t]
    return (gp[..., r:r + h, r:r + w].copy(),)


@register("shift_stack", _shift_stack_vjp)
def _shift_stack(x, shifts):
    """out[t, ..., i, j] = x[..., i - di, j - dj] for shift t = (di, dj), zero outside."""
    if x.ndim < 2:
        raise ShapeError("shift_stack", x.shape)
    h, w = x.shape[-2:]
    r = _shift_pad(shifts)
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    p = np.pad(x, pad)
    out = np.empty((len(shifts),) + x.shape)
    for t, (di, dj) in enumerate(shifts):
        out[t] = p[..., r - di:r - di + h, r - dj:r - dj + w]
    return out


# ---------------------------------------------------------------------------
# selection and normalisation

def _min_vjp(g, out, aux, x):
    gx = np.zeros_like(x)
    np.put_along_axis(gx, aux[None], g[None], axis=0)
    return (gx,)


@register("min_indexed", _min_vjp, has_aux=True)
def _min_indexed(x):
    """Minimum over axis 0; aux holds the argmin (lowest index on ties)."""
    if x.ndim < 1 or x.shape[0] < 1:
        raise ShapeError("reduce_min_indexed", x.shape)
    # NaN never wins unless a whole column is NaN
    idx = np.argmin(np.where(np.isnan(x), np.inf, x) if x.size and np.isnan(np.max(x)) else x, axis=0)
    return np.take_along_axis(x, idx[None], axis=0)[0], idx


def _gather_index(x: Tensor, index: np.ndarray) -> np.ndarray:
    tail = x.ndim - 1 - index.ndim
    if tail < 0 or x.shape[1:1 + index.ndim] != index.shape:
        raise ShapeError("gather", x.shape, index.shape)
    idx = index.reshape((1,) + index.shape + (1,) * tail)
    return np.broadcast_to(idx, (1,) + x.shape[1:])


def _gather_vjp(g, out, aux, x, index):
    gx = np.zeros_like(x)
    np.put_along_axis(gx, _gather_index(x, index), g[None], axis=0)
    return (gx,)


@register("gather", _gather_vjp)
def _gather(x, index):
    """Pick x[index[p], p, ...] for every position p of the index map."""
    return np.take_along_axis(x, _gather_index(x, np.asarray(index)), axis=0)[0]


def _softmax_vjp(g, out, aux, z):
    return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)


@register("softmax", _softmax_vjp)
def _softmax(z):
    if z.ndim < 1 or z.shape[-1] < 1:
        raise ShapeError("stable_softmax", z.shape)
    if not np.all(np.isfinite(z)):
        raise NumericError("stable_softmax: non-finite input")
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def _where_vjp(g, out, aux, a, b, mask):
    return (_unbroadcast(np.where(mask, g, 0.0), a.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.shape))


@register("where", _where_vjp)
def _where(a, b, mask):
    """Select a where the constant boolean mask holds, else b (no arithmetic)."""
    _check_binary("where", a, b)
    if a.shape != () and np.shape(mask) not in ((), a.shape):
        raise ShapeError("where", a.shape, np.shape(mask))
    return np.where(mask, a, b)
