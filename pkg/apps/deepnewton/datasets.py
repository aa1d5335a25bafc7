"""Synthetic polynomial-system tasks with oracle roots.

Each generated system is kept only if the oracle finds at least one real root,
so every test system can be scored by distance to its nearest root.
"""
from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from shared.errors import DatasetError
from shared.schemas import PolySystem
from shared.seed_utils import rng_for
from apps.deepnewton.polysys import RootSet, roots_oracle
from parsers.poly_text import parse_poly

logger = logging.getLogger(__name__)

TASKS = ("sqrt", "fifth", "poly1d", "poly2d")
MAX_REJECTION_RATE = 0.99


@dataclass
class PolyDataset:
    task: str
    systems: List[PolySystem]
    roots: List[RootSet]

    def __len__(self) -> int:
        return len(self.systems)

    def __getitem__(self, i: int) -> PolySystem:
        return self.systems[i]

    def subset(self, index) -> "PolyDataset":
        return PolyDataset(self.task, [self.systems[i] for i in index], [self.roots[i] for i in index])


def _template(text: str) -> Callable[[np.random.Generator], PolySystem]:
    tmpl = parse_poly(text)

    def draw(rng, low: float, high: float) -> PolySystem:
        s = rng.uniform(low, high)
        out = tmpl.substitute(s)
        out.text = f"{text} (S={s:.6g})"
        return out
    return draw


def _sqrt(rng) -> PolySystem:
    return _template("x^2 - S")(rng, 0.25, 4.0)


def _fifth(rng) -> PolySystem:
    return _template("x^5 - S")(rng, 0.1, 2.0)


def _poly1d(rng) -> PolySystem:
    return PolySystem(1, rng.uniform(-1.0, 1.0, size=(1, 7)), text="poly1d")


def _poly2d(rng) -> PolySystem:
    c = rng.uniform(-1.0, 1.0, size=(2, 3, 3))
    total = np.add.outer(np.arange(3), np.arange(3))
    c[:, total > 2] = 0.0
    return PolySystem(2, c, text="poly2d")


_DRAW: Dict[str, Callable[[np.random.Generator], PolySystem]] = {
    "sqrt": _sqrt, "fifth": _fifth, "poly1d": _poly1d, "poly2d": _poly2d,
}


@dataclass(frozen=True)
class TaskDefaults:
    """Training knobs per task; the CLI falls back to these when a flag is omitted."""
    lr: float
    clip_norm: Optional[float] = None
    train_gamma: bool = True


# The C term scales with F'(x) ~ x^(deg-1): its gradient dwarfs A and B once an
# iterate is far from a root. poly1d starts reach |x| ~ 1e2, where F' ~ 1e11 and
# any C step overflows the next layer, so C stays at its baseline there.
TRAINING_DEFAULTS: Dict[str, TaskDefaults] = {
    "sqrt": TaskDefaults(lr=1e-3),
    "fifth": TaskDefaults(lr=1e-5, clip_norm=1.0),
    "poly1d": TaskDefaults(lr=1e-3, clip_norm=1.0, train_gamma=False),
    "poly2d": TaskDefaults(lr=1e-3, clip_norm=1.0),
}


def gen_poly_dataset(task: str, count: int, seed: int) -> PolyDataset:
    """count systems of `task`, each with >= 1 oracle root; pure in (task, count, seed)."""
    if task not in _DRAW:
        raise DatasetError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    if count < 0:
        raise DatasetError("count must be >= 0")
    rng = rng_for(seed, "polydata", task)
    draw = _DRAW[task]
    systems: List[PolySystem] = []
    roots: List[RootSet] = []
    attempts = 0
    budget = max(100, int(np.ceil(count / (1.0 - MAX_REJECTION_RATE))))
    while len(systems) < count:
        if attempts >= budget:
            raise DatasetError(
                f"{task}: only {len(systems)}/{count} systems with real roots after {attempts} draws"
            )
        attempts += 1
        system = draw(rng)
        found = roots_oracle(system)
        if not len(found):
            continue
        systems.append(system)
        roots.append(found)
    logger.info("generated %d %s systems (%d draws)", count, task, attempts)
    return PolyDataset(task, systems, roots)


def split_dataset(ds: PolyDataset, train_fraction: float = 0.8, seed: int = 0) -> Tuple[PolyDataset, PolyDataset]:
    order = rng_for(seed, "split", ds.task).permutation(len(ds))
    cut = int(round(train_fraction * len(ds)))
    return ds.subset(order[:cut]), ds.subset(order[cut:])
