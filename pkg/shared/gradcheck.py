"""Central-difference gradient oracle and the randomized gradient suite.

A case is one random instance: a set of parameters plus a builder that turns
them into a scalar loss on a fresh Graph. The suite runs every registered
factory a number of times and reports the worst relative error per name.
Pass/fail uses the norm-wise error ||g_ad - g_fd|| / max(||g_ad|| + ||g_fd||, 1e-12)
over all trainable parameters of a case; the worst single-coordinate error
is reported alongside it.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from shared import ops
from shared.autodiff import Graph, NodeRef, backward
from shared.schemas import Parameter, Tensor

logger = logging.getLogger(__name__)

Builder = Callable[[Graph, Dict[str, NodeRef]], NodeRef]


def finite_diff_gradient(f: Callable[[Dict[str, Tensor]], float],
                         params: Mapping[str, Tensor], h: float = 1e-5) -> Dict[str, Tensor]:
    """(f(w + h e_i) - f(w - h e_i)) / 2h for every coordinate of every array."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads: Dict[str, Tensor] = {}
    for name, value in point.items():
        grad = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(point)
            flat[i] = orig - h
            f_minus = f(point)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = grad
    return grads


@dataclass
class GradCase:
    params: List[Parameter]
    build: Builder

    def loss(self, values: Mapping[str, Tensor]) -> float:
        g = Graph()
        refs = {p.name: g.parameter(Parameter(p.name, values[p.name], p.trainable)) for p in self.params}
        return float(g.value(self.build(g, refs)))

    def analytic(self) -> Dict[str, Tensor]:
        g = Graph()
        refs = {p.name: g.parameter(p) for p in self.params}
        return backward(g, self.build(g, refs))


def _flat(a: Mapping[str, Tensor], keys) -> Tensor:
    return np.concatenate([np.ravel(a[k]) for k in keys])


def relative_error(a: Mapping[str, Tensor], b: Mapping[str, Tensor]) -> float:
    """Norm-wise error over all parameters; this is what a case passes or fails on."""
    va, vb = _flat(a, sorted(a)), _flat(b, sorted(a))
    return float(np.linalg.norm(va - vb) / max(np.linalg.norm(va) + np.linalg.norm(vb), 1e-12))


def coordinate_error(a: Mapping[str, Tensor], b: Mapping[str, Tensor], floor: float = 1e-6) -> float:
    """Worst single-coordinate error |a_i - b_i| / (|a_i| + |b_i|).

    Denominators are floored at `floor` times the gradient norm, so coordinates
    that are zero in both gradients do not turn difference noise into O(1)
    errors. Reported next to the norm-wise error, not used for pass/fail.
    """
    va, vb = _flat(a, sorted(a)), _flat(b, sorted(a))
    if va.size == 0:
        return 0.0
    scale = max(floor * (np.linalg.norm(va) + np.linalg.norm(vb)), 1e-12)
    return float(np.max(np.abs(va - vb) / np.maximum(np.abs(va) + np.abs(vb), scale)))


def case_errors(case: GradCase, h: float = 1e-5) -> Tuple[float, float]:
    """(norm-wise, worst-coordinate) error of the analytic gradient against central differences."""
    trainable = [p for p in case.params if p.trainable]
    analytic = case.analytic()
    numeric = finite_diff_gradient(
        lambda vals: case.loss({**{p.name: p.value for p in case.params}, **vals}),
        {p.name: p.value for p in trainable}, h)
    picked = {k: analytic[k] for k in numeric}
    return relative_error(picked, numeric), coordinate_error(picked, numeric)


def check_case(case: GradCase, h: float = 1e-5) -> float:
    return case_errors(case, h)[0]


@dataclass
class SuiteEntry:
    name: str
    factory: Callable[[np.random.Generator], GradCase]
    instances: int = 100
    tol: float = 1e-6


@dataclass
class SuiteRow:
    name: str
    instances: int
    max_rel_error: float
    tol: float
    max_coord_error: float = float("nan")

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


def run_suite(entries: Iterable[SuiteEntry], seed: int = 0, h: float = 1e-5) -> List[SuiteRow]:
    rows = []
    for k, entry in enumerate(entries):
        rng = np.random.default_rng([seed, k])
        worst, worst_coord = 0.0, 0.0
        for _ in range(entry.instances):
            err, coord = case_errors(entry.factory(rng), h)
            worst = max(worst, err) if np.isfinite(err) else float("inf")
            worst_coord = max(worst_coord, coord) if np.isfinite(coord) else float("inf")
        logger.debug("gradcheck %s: %d instances, max rel err %.3e (coordinate %.3e)",
                     entry.name, entry.instances, worst, worst_coord)
        rows.append(SuiteRow(entry.name, entry.instances, worst, entry.tol, worst_coord))
    return rows


# ---------------------------------------------------------------------------
# op factories

def _u(rng, *shape, margin: float = 0.0) -> Tensor:
    x = rng.uniform(-1.0, 1.0, size=shape)
    if margin:
        x = np.where(np.abs(x) < margin, np.copysign(margin, x) * 2, x)
    return x


def _project(g: Graph, ref: NodeRef, rng) -> NodeRef:
    """Random linear functional so every output coordinate matters."""
    w = g.constant(rng.uniform(-1.0, 1.0, size=g.value(ref).shape))
    return ops.sum_(g, ops.mul(g, ref, w))


def _unary(op: Callable[[Graph, NodeRef], NodeRef], shape=(3, 4), margin=0.0):
    def factory(rng):
        p = Parameter("a", _u(rng, *shape, margin=margin))
        seed = int(rng.integers(2**31))

        def build(g, refs):
            return _project(g, op(g, refs["a"]), _proj_rng(seed))
        return GradCase([p], build)
    return factory


def _proj_rng(seed: int) -> np.random.Generator:
    # builders run several times per case (analytic + 2 per coordinate); the
    # projection weights must be identical each time
    return np.random.default_rng(seed)


def _binary(op, shape=(3, 4), b_low: float = 0.0):
    def factory(rng):
        a = Parameter("a", _u(rng, *shape))
        b = _u(rng, *shape)
        if b_low:
            b = np.sign(b) * (b_low + np.abs(b))
        bp = Parameter("b", b)
        seed = int(rng.integers(2**31))

        def build(g, refs):
            return _project(g, op(g, refs["a"], refs["b"]), _proj_rng(seed))
        return GradCase([a, bp], build)
    return factory


def _scalar_broadcast_mul(rng):
    a = Parameter("a", _u(rng, 4, 3))
    s = Parameter("s", rng.uniform(-1, 1))
    seed = int(rng.integers(2**31))

    def build(g, refs):
        return _project(g, ops.mul(g, refs["s"], refs["a"]), _proj_rng(seed))
    return GradCase([a, s], build)


def _matmul_case(rng):
    m, k, n = rng.integers(1, 5, size=3)
    a = Parameter("a", _u(rng, m, k))
    b = Parameter("b", _u(rng, k, n))
    seed = int(rng.integers(2**31))
    return GradCase([a, b], lambda g, r: _project(g, ops.matmul(g, r["a"], r["b"]), _proj_rng(seed)))


def _conv_case(rng):
    h, w = rng.integers(3, 7, size=2)
    kh, kw = rng.integers(1, 4, size=2)
    x = Parameter("x", _u(rng, 2, h, w))
    k = Parameter("k", _u(rng, kh, kw))
    seed = int(rng.integers(2**31))
    return GradCase([x, k], lambda g, r: _project(g, ops.conv2d_valid(g, r["x"], r["k"]), _proj_rng(seed)))


def _box_case(rng):
    h, w = rng.integers(3, 7, size=2)
    size = tuple(int(s) for s in rng.integers(1, 4, size=2))
    x = Parameter("x", _u(rng, 2, h, w))
    seed = int(rng.integers(2**31))
    return GradCase([x], lambda g, r: _project(g, ops.box_sum(g, r["x"], size), _proj_rng(seed)))


def _separated(rng, t: int, rest, gap: float = 1e-3) -> Tensor:
    while True:
        x = rng.uniform(-1.0, 1.0, size=(t,) + tuple(rest))
        s = np.sort(x, axis=0)
        if t == 1 or np.min(np.diff(s, axis=0)) > gap:
            return x


def _min_case(rng):
    x = Parameter("x", _separated(rng, int(rng.integers(1, 5)), (3, 2)))
    seed = int(rng.integers(2**31))

    def build(g, r):
        v, _ = ops.reduce_min_indexed(g, r["x"])
        return _project(g, v, _proj_rng(seed))
    return GradCase([x], build)


def _gather_case(rng):
    x = Parameter("x", _u(rng, 3, 4, 2))
    index = rng.integers(0, 3, size=4)
    seed = int(rng.integers(2**31))
    return GradCase([x], lambda g, r: _project(g, ops.gather(g, r["x"], index), _proj_rng(seed)))


def _where_case(rng):
    a = Parameter("a", _u(rng, 5))
    b = Parameter("b", _u(rng, 5))
    mask = rng.integers(0, 2, size=5).astype(bool)
    seed = int(rng.integers(2**31))
    return GradCase([a, b], lambda g, r: _project(g, ops.where(g, mask, r["a"], r["b"]), _proj_rng(seed)))


def _softmax_case(rng):
    z = Parameter("z", _u(rng, int(rng.integers(1, 6))))
    seed = int(rng.integers(2**31))
    return GradCase([z], lambda g, r: _project(g, ops.stable_softmax(g, r["z"]), _proj_rng(seed)))


def _shift_case(rng):
    x = Parameter("x", _u(rng, 2, 5, 5))
    shifts = [(0, 0), (1, -1), (-2, 0), (0, 2)]
    seed = int(rng.integers(2**31))
    return GradCase([x], lambda g, r: _project(g, ops.shift_stack(g, r["x"], shifts), _proj_rng(seed)))


def _layout_case(rng):
    x = Parameter("x", _u(rng, 2, 3, 4))
    seed = int(rng.integers(2**31))

    def build(g, r):
        y = ops.transpose(g, r["x"], (2, 0, 1))
        y = ops.reshape(g, y, (4, 6))
        y = ops.expand(g, y, (2,))
        y = ops.take(g, y, 1, axis=1)
        y = ops.stack(g, [y, ops.scale(g, y, 0.5)], axis=0)
        return _project(g, ops.add(g, ops.mean(g, y, axis=0), ops.sum_(g, y, axis=(0,))), _proj_rng(seed))
    return GradCase([x], build)


def _inverse_case(d: int):
    def factory(rng):
        while True:
            a = _u(rng, d, d)
            if abs(np.linalg.det(a)) > 0.1:
                break
        p = Parameter("a", a)
        seed = int(rng.integers(2**31))
        return GradCase([p], lambda g, r: _project(g, ops.mat_inverse_small(g, r["a"]), _proj_rng(seed)))
    return factory


def op_entries(instances: int = 100) -> List[SuiteEntry]:
    n = instances
    return [
        SuiteEntry("add", _binary(ops.add), n),
        SuiteEntry("sub", _binary(ops.sub), n),
        SuiteEntry("mul", _binary(ops.mul), n),
        SuiteEntry("mul_scalar", _scalar_broadcast_mul, n),
        SuiteEntry("div", _binary(ops.div, b_low=0.5), n),
        SuiteEntry("scale", _unary(lambda g, a: ops.scale(g, a, -2.5)), n),
        SuiteEntry("abs", _unary(ops.abs_, margin=1e-3), n),
        SuiteEntry("square", _unary(ops.square), n),
        SuiteEntry("matmul", _matmul_case, n),
        SuiteEntry("layout", _layout_case, n),
        SuiteEntry("conv2d_valid", _conv_case, n),
        SuiteEntry("box_sum", _box_case, n),
        SuiteEntry("shift_stack", _shift_case, n),
        SuiteEntry("reduce_min_indexed", _min_case, n),
        SuiteEntry("gather", _gather_case, n),
        SuiteEntry("where", _where_case, n),
        SuiteEntry("stable_softmax", _softmax_case, n),
        SuiteEntry("mat_inverse_small[1]", _inverse_case(1), n),
        SuiteEntry("mat_inverse_small[2]", _inverse_case(2), n),
        SuiteEntry("mat_inverse_small[3]", _inverse_case(3), n),
    ]


def format_report(rows: Sequence[SuiteRow]) -> str:
    width = max(len(r.name) for r in rows) if rows else 4
    lines = [f"{'op':<{width}}  {'n':>4}  {'max rel err':>12}  {'max coord err':>13}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.instances:>4}  {r.max_rel_error:>12.3e}  "
                     f"{r.max_coord_error:>13.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
