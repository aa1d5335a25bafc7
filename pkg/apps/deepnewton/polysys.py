"""Polynomial systems on the autodiff graph: Horner evaluation, Jacobians,
the two Newton baselines, and a numpy root oracle for scoring.

Everything graph-facing is batched: a PolyBatch stacks B systems with the
same d and p, and iterates are (B, d) nodes.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from shared import ops
from shared.autodiff import Graph, NodeRef
from shared.errors import ShapeError
from shared.schemas import PolySystem, Tensor
from shared.tensorize import unroll

logger = logging.getLogger(__name__)


@dataclass
class PolyBatch:
    d: int
    coeffs: Tensor      # (B, p, D+1) or (B, p, D+1, D+1)

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    @property
    def p(self) -> int:
        return self.coeffs.shape[1]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[2] - 1

    def system(self, b: int) -> PolySystem:
        return PolySystem(self.d, self.coeffs[b])

    def take(self, index: Sequence[int]) -> "PolyBatch":
        return PolyBatch(self.d, self.coeffs[np.asarray(index, dtype=np.intp)])


def stack_systems(systems: Sequence[PolySystem]) -> PolyBatch:
    if not systems:
        raise ValueError("stack_systems: no systems")
    d, p = systems[0].d, systems[0].p
    for s in systems:
        if s.d != d or s.p != p:
            raise ShapeError("stack_systems", (d, p), (s.d, s.p))
        if s.has_placeholder:
            raise ValueError(f"system {s.text!r} still has an S placeholder; substitute first")
    degree = max(s.max_degree for s in systems)
    return PolyBatch(d, np.stack([s.padded(degree) for s in systems]))


def as_batch(systems) -> PolyBatch:
    if isinstance(systems, PolyBatch):
        return systems
    if isinstance(systems, PolySystem):
        return stack_systems([systems])
    return stack_systems(list(systems))


# ---------------------------------------------------------------------------
# Horner on the graph

def _spread(g: Graph, v: NodeRef, n: int) -> NodeRef:
    """(B,) -> (B, n) by repetition."""
    return ops.stack(g, [v] * n, axis=1)


def _horner(g: Graph, coef: Tensor, x_bp: NodeRef) -> NodeRef:
    """sum_i coef[..., i] x^i along the last axis; x_bp matches coef.shape[:-1]."""
    n = coef.shape[-1]
    if n == 0:
        return g.constant(np.zeros(coef.shape[:-1]))
    acc = g.constant(coef[..., n - 1])
    for i in range(n - 2, -1, -1):
        acc = ops.add(g, ops.mul(g, acc, x_bp), g.constant(coef[..., i]))
    return acc


def _horner2(g: Graph, coef: Tensor, x: NodeRef, y: NodeRef) -> NodeRef:
    """sum_{i,k} coef[b, j, i, k] x^i y^k: inner Horner in y, outer in x."""
    b, p, nx, ny = coef.shape
    if nx == 0 or ny == 0:
        return g.constant(np.zeros((b, p)))
    y3 = ops.stack(g, [_spread(g, y, p)] * nx, axis=2)       # (B, p, nx)
    inner = _horner(g, coef, y3)                              # (B, p, nx): polynomials in y
    x_bp = _spread(g, x, p)
    acc = ops.take(g, inner, nx - 1, axis=-1)
    for i in range(nx - 2, -1, -1):
        acc = ops.add(g, ops.mul(g, acc, x_bp), ops.take(g, inner, i, axis=-1))
    return acc


def _check_x(g: Graph, x: NodeRef, batch: PolyBatch) -> None:
    shape = g.value(x).shape
    if shape != (batch.size, batch.d):
        raise ShapeError("polysys", shape, (batch.size, batch.d), detail="iterates must be (B, d)")


def _eval_coeffs(g: Graph, x: NodeRef, coef: Tensor, d: int) -> NodeRef:
    if d == 1:
        return _horner(g, coef, _spread(g, ops.take(g, x, 0, axis=-1), coef.shape[1]))
    return _horner2(g, coef, ops.take(g, x, 0, axis=-1), ops.take(g, x, 1, axis=-1))


def eval_F(g: Graph, x: NodeRef, systems) -> NodeRef:
    """F(x) as a (B, p) node."""
    batch = as_batch(systems)
    _check_x(g, x, batch)
    return _eval_coeffs(g, x, batch.coeffs, batch.d)


def derivative_coeffs(coeffs: Tensor, d: int) -> List[Tensor]:
    """Coefficient arrays of dF/dx_v for v < d, same batched layout."""
    out = []
    for v in range(d):
        axis = 2 + v
        n = coeffs.shape[axis]
        powers = np.arange(1, n, dtype=np.float64)
        shape = [1] * coeffs.ndim
        shape[axis] = n - 1
        out.append(np.take(coeffs, np.arange(1, n), axis=axis) * powers.reshape(shape))
    return out


def eval_J(g: Graph, x: NodeRef, systems) -> NodeRef:
    """Jacobian (B, p, d) from exact coefficient-wise derivatives."""
    batch = as_batch(systems)
    _check_x(g, x, batch)
    cols = [_eval_coeffs(g, x, dc, batch.d) for dc in derivative_coeffs(batch.coeffs, batch.d)]
    return ops.stack(g, cols, axis=-1)


def residual_sq(g: Graph, x: NodeRef, systems) -> NodeRef:
    """||F(x)||_2^2 per system, (B,)."""
    return ops.sum_squares(g, eval_F(g, x, systems), axis=-1)


# ---------------------------------------------------------------------------
# Newton

@dataclass
class NewtonStep:
    direction: NodeRef      # J^{-1} F, zero where the Jacobian is singular, (B, d)
    F: NodeRef              # (B, p)
    J: NodeRef              # (B, p, d)
    ok: np.ndarray          # (B,) bool


def newton_direction(g: Graph, x: NodeRef, systems, eps_det: float = ops.EPS_DET) -> NewtonStep:
    batch = as_batch(systems)
    if batch.p != batch.d:
        raise ShapeError("newton", (batch.p, batch.d), detail="Newton needs a square system (p == d)")
    F = eval_F(g, x, batch)
    J = eval_J(g, x, batch)
    inv, ok = ops.masked_inverse(g, J, eps_det)
    d = batch.d
    comps = []
    for i in range(d):
        row = ops.take(g, inv, i, axis=-2)
        acc = None
        for k in range(d):
            term = ops.mul(g, ops.take(g, row, k, axis=-1), ops.take(g, F, k, axis=-1))
            acc = term if acc is None else ops.add(g, acc, term)
        comps.append(acc)
    step = ops.stack(g, comps, axis=-1)
    mask = np.broadcast_to(ok[:, None], (batch.size, d))
    step = ops.where(g, mask, step, g.constant(np.zeros((batch.size, d))))
    return NewtonStep(step, F, J, ok)


@dataclass
class NewtonRun:
    graph: Graph
    x: NodeRef
    singular: np.ndarray                          # (B,) any skipped step
    steps: List[np.ndarray] = field(default_factory=list)   # per step: (B,) singular flags
    selected: List[np.ndarray] = field(default_factory=list)  # per step: (B,) chosen candidate

    @property
    def value(self) -> Tensor:
        return self.graph.value(self.x)


def _start(g: Graph, x0, batch: PolyBatch) -> NodeRef:
    """Constant (B, d) start from a scalar, a d-vector or a (B, d) array."""
    x0 = np.asarray(x0, dtype=np.float64)
    return g.constant(np.broadcast_to(x0, (batch.size, batch.d)).copy())


def _settle(g: Graph, batch: PolyBatch, tol: Optional[float]):
    if tol is None:
        return None

    def settled(xv: Tensor) -> np.ndarray:
        F = npoly_eval(batch, xv)
        return np.sum(F * F, axis=-1) <= tol * tol
    return settled


def newton_classic(systems, x0=0.0, iters: int = 3, alpha: float = 1.0,
                   tol: Optional[float] = None, eps_det: float = ops.EPS_DET,
                   graph: Optional[Graph] = None) -> NewtonRun:
    """x <- x - alpha J^{-1} F for a fixed number of steps.

    Singular Jacobians skip the step for that system and raise its flag. With
    tol, a system whose ||F|| is already <= tol keeps its iterate.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    batch = as_batch(systems)
    g = graph if graph is not None else Graph()
    x = _start(g, x0, batch)
    run = NewtonRun(g, x, np.zeros(batch.size, dtype=bool))
    if iters == 0:
        return run

    def step(g: Graph, x: NodeRef, i: int) -> NodeRef:
        nd = newton_direction(g, x, batch, eps_det)
        run.steps.append(~nd.ok)
        return ops.sub(g, x, ops.scale(g, nd.direction, alpha))

    run.x = unroll(g, iters, step, x, settle=_settle(g, batch, tol))
    run.singular = np.any(run.steps, axis=0)
    return run


def select_candidate(g: Graph, candidates: Sequence[NodeRef], systems):
    """Per system, keep the candidate with the smallest residual (ties: first).

    Returns (selected (B, d), selected residual_sq (B,), index (B,)).
    """
    res = ops.stack(g, [residual_sq(g, c, systems) for c in candidates], axis=0)
    best, idx = ops.reduce_min_indexed(g, res)
    chosen = ops.gather(g, ops.stack(g, list(candidates), axis=0), idx)
    return chosen, best, idx


def newton_ls(systems, x0=0.0, iters: int = 3, alphas: Sequence[float] = (0.5, 1.0, 1.5),
              tol: Optional[float] = None, eps_det: float = ops.EPS_DET,
              graph: Optional[Graph] = None) -> NewtonRun:
    """Newton with a per-step choice of step length by residual argmin."""
    if not len(alphas):
        raise ValueError("alphas must be non-empty")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    alphas = sorted(float(a) for a in alphas)
    batch = as_batch(systems)
    g = graph if graph is not None else Graph()
    x = _start(g, x0, batch)
    run = NewtonRun(g, x, np.zeros(batch.size, dtype=bool))
    if iters == 0:
        return run

    def step(g: Graph, x: NodeRef, i: int) -> NodeRef:
        nd = newton_direction(g, x, batch, eps_det)
        run.steps.append(~nd.ok)
        cands = [ops.sub(g, x, ops.scale(g, nd.direction, a)) for a in alphas]
        chosen, _, idx = select_candidate(g, cands, batch)
        run.selected.append(idx)
        return chosen

    run.x = unroll(g, iters, step, x, settle=_settle(g, batch, tol))
    run.singular = np.any(run.steps, axis=0)
    return run


# ---------------------------------------------------------------------------
# numpy evaluation and the root oracle

def npoly_eval(batch: PolyBatch, xv: Tensor) -> Tensor:
    """F for every system at (B, d) points, (B, p); oracle-side, no graph."""
    out = np.empty((batch.size, batch.p))
    for b in range(batch.size):
        for j in range(batch.p):
            c = batch.coeffs[b, j]
            out[b, j] = (npoly.polyval(xv[b, 0], c) if batch.d == 1
                         else npoly.polyval2d(xv[b, 0], xv[b, 1], c))
    return out


@dataclass
class RootSet:
    roots: Tensor           # (n, d)
    tol: float
    dedup_radius: float

    def __len__(self) -> int:
        return len(self.roots)

    def min_sq_distance(self, x: Tensor) -> float:
        if not len(self.roots):
            raise ValueError("empty root set")
        return float(np.min(np.sum((self.roots - np.asarray(x)) ** 2, axis=-1)))


ORACLE_TOL = 1e-9
DEDUP_RADIUS = 1e-6


def cauchy_radius(c: Tensor) -> float:
    """1 + max|a_i| / |a_top| for ascending 1-variable coefficients."""
    nz = np.flatnonzero(c)
    if len(nz) == 0 or nz[-1] == 0:
        return 0.0
    top = nz[-1]
    return 1.0 + float(np.max(np.abs(c[:top])) / abs(c[top]))


def _dedup(points: Tensor, radius: float) -> Tensor:
    if not len(points):
        return points
    order = np.lexsort(points.T[::-1])
    kept: List[Tensor] = []
    for pnt in points[order]:
        if not any(np.linalg.norm(pnt - k) <= radius for k in kept):
            kept.append(pnt)
    return np.array(kept)


def _bisect(c: Tensor, lo: float, hi: float) -> float:
    flo = npoly.polyval(lo, c)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo < 1e-12:
            break
        fm = npoly.polyval(mid, c)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    # the better endpoint
    return lo if abs(npoly.polyval(lo, c)) <= abs(npoly.polyval(hi, c)) else hi


def _touching_minimum(c: Tensor, lo: float, hi: float) -> float:
    """Golden-section search of |f| on [lo, hi] for even-multiplicity roots."""
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    for _ in range(120):
        m1 = b - ratio * (b - a)
        m2 = a + ratio * (b - a)
        if abs(npoly.polyval(m1, c)) < abs(npoly.polyval(m2, c)):
            b = m2
        else:
            a = m1
    return 0.5 * (a + b)


def _roots_1d(c: Tensor, grid: int, tol: float, radius: float) -> Tensor:
    r = cauchy_radius(c)
    if r == 0.0:
        return np.zeros((0, 1))
    xs = np.linspace(-r, r, grid)
    fs = npoly.polyval(xs, c)
    found = list(xs[fs == 0.0])
    for i in np.flatnonzero(fs[:-1] * fs[1:] < 0):
        found.append(_bisect(c, xs[i], xs[i + 1]))
    af = np.abs(fs)
    for i in np.flatnonzero((af[1:-1] < af[:-2]) & (af[1:-1] < af[2:])):
        if fs[i] * fs[i + 2] > 0:
            found.append(_touching_minimum(c, xs[i], xs[i + 2]))
    pts = np.array([[x] for x in found if abs(npoly.polyval(x, c)) < tol]).reshape(-1, 1)
    return _dedup(pts, radius)


def _roots_2d(c: Tensor, starts: int, iters: int, tol: float, radius: float) -> Tensor:
    r = 0.0
    for eq in c:
        deg = np.add.outer(np.arange(eq.shape[0]), np.arange(eq.shape[1]))
        nz = eq != 0
        if not nz.any():
            continue
        top = deg[nz].max()
        lead = np.max(np.abs(eq[nz & (deg == top)]))
        r = max(r, 1.0 + np.max(np.abs(eq)) / lead)
    r = min(max(r, 1.0), 10.0)
    grid = np.linspace(-r, r, starts)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    x, y = X.ravel(), Y.ravel()
    dx = [npoly.polyder(eq, axis=0) for eq in c]
    dy = [npoly.polyder(eq, axis=1) for eq in c]
    with np.errstate(all="ignore"):
        for _ in range(iters):
            F = np.stack([npoly.polyval2d(x, y, eq) for eq in c], axis=-1)
            J = np.stack([np.stack([npoly.polyval2d(x, y, dx[j]), npoly.polyval2d(x, y, dy[j])], -1)
                          for j in range(2)], axis=-2)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            ok = np.abs(det) > 1e-12
            safe = np.where(ok, det, 1.0)
            sx = (J[:, 1, 1] * F[:, 0] - J[:, 0, 1] * F[:, 1]) / safe
            sy = (-J[:, 1, 0] * F[:, 0] + J[:, 0, 0] * F[:, 1]) / safe
            x = np.where(ok, x - sx, x)
            y = np.where(ok, y - sy, y)
        F = np.stack([npoly.polyval2d(x, y, eq) for eq in c], axis=-1)
        res = np.linalg.norm(F, axis=-1)
    keep = np.isfinite(res) & (res < tol)
    return _dedup(np.stack([x[keep], y[keep]], axis=-1), radius)


def roots_oracle(system: PolySystem, tol: float = ORACLE_TOL, dedup_radius: float = DEDUP_RADIUS,
                 grid: int = 10_000, starts: int = 64, iters: int = 100) -> RootSet:
    """All real roots located by a deterministic numeric search.

    d=1: sign-change scan on the Cauchy interval plus bisection (and a local
    search for roots of even multiplicity). d=2: grid-multistart Newton.
    Returns an empty set when nothing is found.
    """
    if system.has_placeholder:
        raise ValueError("substitute S before calling the oracle")
    if system.d == 1:
        if system.p != 1:
            raise ShapeError("roots_oracle", (system.p, system.d), detail="1-variable oracle needs p == 1")
        roots = _roots_1d(system.coeffs[0], grid, tol, dedup_radius)
    else:
        if system.p != 2:
            raise ShapeError("roots_oracle", (system.p, system.d), detail="2-variable oracle needs p == 2")
        roots = _roots_2d(system.coeffs, starts, iters, tol, dedup_radius)
    if not len(roots):
        logger.debug("oracle found no real root for %s", system.text or "system")
    return RootSet(np.asarray(roots, dtype=np.float64).reshape(-1, system.d), tol, dedup_radius)
