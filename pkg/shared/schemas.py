"""Typed records shared across heurnet.

Parameters and image sets are plain dataclasses holding numpy arrays; run
configurations are pydantic models so their invariants are validated when the
CLI builds them and can be printed back verbatim.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

Tensor = np.ndarray  # dense float64, row-major


@dataclass
class Parameter:
    """A named, possibly frozen, tensor of model weights."""
    name: str
    value: Tensor
    trainable: bool = True

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)


class ParameterSet:
    """Ordered name -> Parameter mapping with unique names."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: Dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, p: Parameter) -> Parameter:
        if p.name in self._params:
            raise ValueError(f"duplicate parameter name: {p.name}")
        self._params[p.name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def state(self) -> Dict[str, Tensor]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def load_state(self, state: Dict[str, Tensor]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, value in state.items():
            p = self._params[name]
            if p.value.shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} != {p.value.shape}")
            p.value = np.array(value, dtype=np.float64)


@dataclass
class LabeledImageSet:
    images: Tensor            # N x H x W in [0, 1]
    labels: np.ndarray        # N ints in 0..9
    source: str = ""
    split: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Tuple[Tensor, int]:
        return self.images[i], int(self.labels[i])

    def subset(self, n: Optional[int]) -> "LabeledImageSet":
        if n is None or n >= len(self):
            return self
        return LabeledImageSet(self.images[:n], self.labels[:n], self.source, self.split)


MAX_POLY_DEGREE = 6


@dataclass
class PolySystem:
    """p polynomial equations in d <= 2 real variables.

    coeffs[j, i] is the coefficient of x^i in equation j (d=1), and
    coeffs[j, i, k] the coefficient of x^i y^k (d=2). s_coeffs has the same
    layout and multiplies the dataset placeholder S; it is all zeros once the
    system has been substituted.
    """
    d: int
    coeffs: Tensor
    s_coeffs: Optional[Tensor] = None
    text: str = ""

    def __post_init__(self):
        self.coeffs = np.array(self.coeffs, dtype=np.float64)
        if self.d not in (1, 2) or self.coeffs.ndim != self.d + 1:
            raise ValueError(f"coeffs of shape {self.coeffs.shape} do not describe a d={self.d} system")
        if self.d == 2 and self.coeffs.shape[1] != self.coeffs.shape[2]:
            raise ValueError(f"2-variable coeffs must be square per equation, got {self.coeffs.shape}")
        if self.s_coeffs is None:
            self.s_coeffs = np.zeros_like(self.coeffs)
        self.s_coeffs = np.array(self.s_coeffs, dtype=np.float64)
        if self.s_coeffs.shape != self.coeffs.shape:
            raise ValueError("s_coeffs must match coeffs")
        if self.max_degree > MAX_POLY_DEGREE:
            raise ValueError(f"degree {self.max_degree} exceeds {MAX_POLY_DEGREE}")

    @property
    def p(self) -> int:
        return self.coeffs.shape[0]

    @property
    def max_degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def has_placeholder(self) -> bool:
        return bool(np.any(self.s_coeffs))

    def degree(self) -> int:
        """Highest total degree with a nonzero coefficient (S terms included)."""
        nz = (self.coeffs != 0) | (self.s_coeffs != 0)
        if not nz.any():
            return 0
        idx = np.argwhere(nz)
        return int(idx[:, 1:].sum(axis=1).max())

    def substitute(self, s: float) -> "PolySystem":
        return PolySystem(self.d, self.coeffs + s * self.s_coeffs, None, self.text)

    def padded(self, degree: int) -> Tensor:
        """Coefficients zero-padded to max_degree == degree."""
        if degree < self.max_degree:
            raise ValueError(f"cannot pad degree {self.max_degree} down to {degree}")
        out = np.zeros((self.p,) + (degree + 1,) * self.d)
        out[(slice(None),) + tuple(slice(0, n) for n in self.coeffs.shape[1:])] = self.coeffs
        return out


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(10, ge=0)
    lr: float = Field(1e-2, ge=0.0)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    eval_every: int = Field(0, ge=0)          # 0 = only at the end
    checkpoint: Optional[str] = None
    workers: int = Field(1, ge=1)
    shard_size: Optional[int] = Field(None, ge=1)   # None = whole batch in one graph
    clip_norm: Optional[float] = Field(None, gt=0.0)  # global L2 bound on each batch gradient


class DeepNewtonConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: int = Field(3, ge=1)
    history: int = Field(1, ge=1)
    alphas: Tuple[float, ...] = (0.5, 1.0, 1.5)
    n_beta: int = Field(1, ge=1)
    n_gamma: int = Field(1, ge=1)
    d: Literal[1, 2] = 1
    task: str = "sqrt"
    eps_det: float = Field(1e-12, gt=0.0)
    x0_mode: Literal["zero", "constant", "linear"] = "zero"
    x0: float = 0.0
    max_degree: int = Field(6, ge=1, le=6)
    train_gamma: bool = True          # C matrices trainable (d == 1 only)

    @model_validator(mode="after")
    def _check(self):
        if not self.alphas:
            raise ValueError("alphas must be non-empty")
        if self.history > self.layers:
            raise ValueError(f"history {self.history} exceeds layers {self.layers}")
        return self

    @property
    def n_coeffs(self) -> int:
        """Length of the flattened coefficient vector fed to the linear x0 map."""
        side = self.max_degree + 1
        return self.d * (side if self.d == 1 else side * side)


class ClusterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    per_class: int = Field(10, ge=1)
    shift_radius: int = Field(2, ge=0)
    lam_init: float = 0.1
    height: int = Field(28, ge=3)
    width: int = Field(28, ge=3)
    n_classes: int = Field(10, ge=2)
    seed: int = 0


@dataclass
class MetricRow:
    epoch: int
    loss: float
    metric: float = float("nan")
    extra: Dict[str, float] = field(default_factory=dict)
