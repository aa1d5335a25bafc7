"""Exception hierarchy shared by every heurnet module.

Each class carries the process exit code the CLI uses when it escapes a
sub-command, so `heurnet.py` can map failures without string matching.
"""
from __future__ import annotations

from typing import Optional, Sequence


class HeurnetError(Exception):
    exit_code: int = 1


class ShapeError(HeurnetError, ValueError):
    """Operand shapes do not fit the op."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = [tuple(s) for s in shapes]


class SingularMatrixError(HeurnetError, ArithmeticError):
    def __init__(self, det: float, eps: float):
        super().__init__(f"near-singular matrix: |det|={abs(det):.3e} <= {eps:.1e}")
        self.det = det
        self.eps = eps


class NumericError(HeurnetError, ArithmeticError):
    exit_code = 4


class NonFiniteLossError(NumericError):
    def __init__(self, loss: float, epoch: int, step: int, lr: float):
        super().__init__(
            f"non-finite loss {loss} at epoch {epoch} step {step}; "
            f"lr={lr:g} is probably too high"
        )
        self.loss = loss
        self.epoch = epoch
        self.step = step
        self.lr = lr


class GradcheckFailure(HeurnetError):
    exit_code = 1

    def __init__(self, failing: Sequence[str]):
        super().__init__("gradient check failed for: " + ", ".join(failing))
        self.failing = list(failing)


class ChecksumError(HeurnetError):
    exit_code = 2

    def __init__(self, path: str, expected: str, actual: str):
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
        self.path = path
        self.expected = expected
        self.actual = actual


class NetworkError(HeurnetError):
    exit_code = 3


class PolyParseError(HeurnetError, ValueError):
    exit_code = 5

    def __init__(self, message: str, text: str = "", position: Optional[int] = None):
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"{message}{where}: {text!r}" if text else f"{message}{where}")
        self.position = position
        self.text = text


class CheckpointError(HeurnetError):
    exit_code = 6


class IdxFormatError(HeurnetError, ValueError):
    exit_code = 6


class DatasetError(HeurnetError):
    exit_code = 1
