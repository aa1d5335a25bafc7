"""Method comparison table and the S-sweep curve for DeepNewton."""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from shared.schemas import PolySystem, Tensor
from apps.deepnewton.datasets import PolyDataset
from apps.deepnewton.network import DeepNewtonNet
from apps.deepnewton.polysys import (RootSet, newton_classic, newton_ls, npoly_eval, roots_oracle,
                                     stack_systems)

logger = logging.getLogger(__name__)

METHODS = ("Newton", "Newton-LS", "DeepNewton-LS")

# published MSE values, shown next to ours for orientation only
REFERENCE_MSE: Dict[str, Dict[str, float]] = {
    "sqrt": {"Newton": 0.7658, "Newton-LS": 0.0195, "DeepNewton-LS": 0.0070},
    "fifth": {"Newton": 2.2511, "Newton-LS": 0.1286, "DeepNewton-LS": 0.0560},
}


@dataclass
class MseRow:
    method: str
    mse: float              # mean over systems of min ||x - root||^2
    residual_mse: float     # mean ||F(x)||^2
    singular_frac: float
    reference: float = float("nan")

    def as_dict(self) -> Dict[str, object]:
        return {"method": self.method, "mse": self.mse, "residual_mse": self.residual_mse,
                "singular_frac": self.singular_frac, "reference": self.reference}


def eval_mse(method: str, x_out: Tensor, systems: List[PolySystem], roots: List[RootSet],
             singular: Optional[np.ndarray] = None, reference: float = float("nan")) -> MseRow:
    if len(systems) == 0:
        raise ValueError("eval_mse: empty test set")
    for i, r in enumerate(roots):
        if not len(r):
            raise ValueError(f"test system {i} has no oracle root; the dataset should have rejected it")
    batch = stack_systems(systems)
    with np.errstate(all="ignore"):
        dist = np.array([r.min_sq_distance(x) for r, x in zip(roots, x_out)])
        F = npoly_eval(batch, x_out)
        res = np.sum(F * F, axis=-1)
    frac = 0.0 if singular is None else float(np.mean(singular))
    return MseRow(method, float(np.mean(dist)), float(np.mean(res)), frac, reference)


def compare_methods(net: DeepNewtonNet, data: PolyDataset, x0: Optional[float] = None) -> List[MseRow]:
    """Newton (alpha=1), Newton-LS and the network on the same systems and start."""
    cfg = net.config
    start = net.start_value() if x0 is None else x0
    batch = stack_systems(data.systems)
    ref = REFERENCE_MSE.get(data.task, {})

    classic = newton_classic(batch, x0=start, iters=cfg.layers, alpha=1.0, eps_det=cfg.eps_det)
    ls = newton_ls(batch, x0=start, iters=cfg.layers, alphas=cfg.alphas, eps_det=cfg.eps_det)
    deep = net.forward(batch)
    deep_singular = np.any([t.singular for t in deep.trace], axis=0)

    rows = [
        eval_mse("Newton", classic.value, data.systems, data.roots, classic.singular,
                 ref.get("Newton", float("nan"))),
        eval_mse("Newton-LS", ls.value, data.systems, data.roots, ls.singular,
                 ref.get("Newton-LS", float("nan"))),
        eval_mse("DeepNewton-LS", deep.value, data.systems, data.roots, deep_singular,
                 ref.get("DeepNewton-LS", float("nan"))),
    ]
    for r in rows:
        logger.info("%-14s mse=%.6g residual=%.6g singular=%.3f", r.method, r.mse, r.residual_mse, r.singular_frac)
    return rows


@dataclass
class SweepRow:
    s: float
    x_newton: float
    x_newton_ls: float
    x_deepnewton: float
    truth: float

    def as_dict(self) -> Dict[str, float]:
        return {"S": self.s, "x_Newton": self.x_newton, "x_NewtonLS": self.x_newton_ls,
                "x_DeepNewton": self.x_deepnewton, "truth": self.truth}


def sweep(net: DeepNewtonNet, template: PolySystem, s_min: float, s_max: float, steps: int,
          x0: Optional[float] = None) -> List[SweepRow]:
    """All three methods over an inclusive grid of steps + 1 values of S.

    truth is the largest real oracle root (NaN when there is none).
    """
    if template.d != 1:
        raise ValueError("sweep needs a 1-variable template")
    if not template.has_placeholder:
        raise ValueError("sweep template must contain the placeholder S")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = net.config
    start = net.start_value() if x0 is None else x0
    grid = np.linspace(s_min, s_max, steps + 1)
    systems = [template.substitute(float(s)) for s in grid]
    batch = stack_systems(systems)
    classic = newton_classic(batch, x0=start, iters=cfg.layers, alpha=1.0, eps_det=cfg.eps_det).value
    ls = newton_ls(batch, x0=start, iters=cfg.layers, alphas=cfg.alphas, eps_det=cfg.eps_det).value
    deep = net.forward(batch).value
    rows = []
    for i, (s, system) in enumerate(zip(grid, systems)):
        roots = roots_oracle(system).roots
        truth = float(np.max(roots)) if len(roots) else float("nan")
        rows.append(SweepRow(float(s), float(classic[i, 0]), float(ls[i, 0]), float(deep[i, 0]), truth))
    return rows


def sweep_errors(rows: List[SweepRow]) -> Dict[str, float]:
    """Mean |x - truth| per method."""
    truth = np.array([r.truth for r in rows])
    return {
        "Newton": float(np.mean(np.abs(np.array([r.x_newton for r in rows]) - truth))),
        "Newton-LS": float(np.mean(np.abs(np.array([r.x_newton_ls for r in rows]) - truth))),
        "DeepNewton-LS": float(np.mean(np.abs(np.array([r.x_deepnewton for r in rows]) - truth))),
    }
