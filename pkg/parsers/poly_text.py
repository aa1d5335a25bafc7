"""Text form of polynomial systems, e.g. "x^5 - S" or "x^2 + y^2 - 4; x - y".

Grammar (whitespace ignored, equations separated by ';'):

    system   := equation (';' equation)*
    equation := ['+'|'-'] term (('+'|'-') term)*
    term     := factor (['*'] factor)*
    factor   := NUMBER | ('x'|'y') ['^' INT] | 'S'

An equation is read as "expression = 0". S is a coefficient placeholder that
is filled in per system when datasets are generated.
"""
from __future__ import annotations
import re
from typing import Dict, List, Optional, Tuple

import numpy as np

from shared.errors import PolyParseError
from shared.schemas import MAX_POLY_DEGREE, PolySystem

_TOKEN = re.compile(
    r"(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(?P<sym>[xyS^*+\-;])"
)
_FACTOR_START = ("num", "x", "y", "S")

Monomial = Tuple[int, int]          # (power of x, power of y)
Terms = Dict[Monomial, Tuple[float, float]]   # -> (plain coefficient, S coefficient)
Token = Tuple[str, str, int]        # (kind, text, position)


def _tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PolyParseError(f"unexpected character {text[pos]!r}", text, pos)
        if m.group("num") is not None:
            tokens.append(("num", m.group("num"), pos))
        else:
            tokens.append((m.group("sym"), m.group("sym"), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self, kind: Optional[str] = None) -> Token:
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            raise self.error(f"expected {kind!r}", tok)
        self.i += 1
        return tok

    def error(self, message: str, tok: Token) -> PolyParseError:
        found = "end of input" if tok[0] == "end" else repr(tok[1])
        return PolyParseError(f"{message}, found {found}", self.text, tok[2])

    def system(self) -> List[Terms]:
        eqs = [self.equation()]
        while self.peek()[0] == ";":
            self.take(";")
            eqs.append(self.equation())
        if self.peek()[0] != "end":
            raise self.error("expected '+', '-' or ';'", self.peek())
        return eqs

    def equation(self) -> Terms:
        terms: Terms = {}
        sign = 1.0
        if self.peek()[0] in ("+", "-"):
            sign = -1.0 if self.take()[0] == "-" else 1.0
        while True:
            mono, value, is_s = self.term()
            c, s = terms.get(mono, (0.0, 0.0))
            if is_s:
                s += sign * value
            else:
                c += sign * value
            terms[mono] = (c, s)
            if self.peek()[0] not in ("+", "-"):
                return terms
            sign = -1.0 if self.take()[0] == "-" else 1.0

    def term(self) -> Tuple[Monomial, float, bool]:
        start = self.peek()
        if start[0] not in _FACTOR_START:
            raise self.error("expected a number, x, y or S", start)
        value, px, py, has_s = 1.0, 0, 0, False
        while True:
            kind, text, pos = self.take()
            if kind == "num":
                value *= float(text)
            elif kind == "S":
                if has_s:
                    raise PolyParseError("S may appear at most once per term", self.text, pos)
                has_s = True
            else:
                power = 1
                if self.peek()[0] == "^":
                    self.take("^")
                    num = self.take("num")
                    if not num[1].isdigit():
                        raise PolyParseError("exponent must be a non-negative integer", self.text, num[2])
                    power = int(num[1])
                if kind == "x":
                    px += power
                else:
                    py += power
                if px + py > MAX_POLY_DEGREE:
                    raise PolyParseError(f"degree {px + py} exceeds {MAX_POLY_DEGREE}", self.text, start[2])
            nxt = self.peek()[0]
            if nxt == "*":
                self.take("*")
                if self.peek()[0] not in _FACTOR_START:
                    raise self.error("expected a factor after '*'", self.peek())
            elif nxt not in _FACTOR_START:
                return (px, py), value, has_s
            # otherwise juxtaposition, e.g. "2x"


def parse_poly(text: str, d: Optional[int] = None) -> PolySystem:
    """Parse one or more ';'-separated equations into a PolySystem.

    d defaults to 2 if y appears anywhere, else 1.
    """
    if not text or not text.strip():
        raise PolyParseError("empty polynomial", text, 0)
    eqs = _Parser(text).system()
    uses_y = any(py for eq in eqs for (_, py) in eq)
    if d is None:
        d = 2 if uses_y else 1
    if d not in (1, 2):
        raise PolyParseError(f"only 1 or 2 variables are supported, got d={d}", text)
    if d == 1 and uses_y:
        raise PolyParseError("y used in a 1-variable system", text, text.find("y"))

    degree = max(1, max(px + py for eq in eqs for (px, py) in eq))
    shape = (len(eqs),) + (degree + 1,) * d
    coeffs = np.zeros(shape)
    s_coeffs = np.zeros(shape)
    for j, eq in enumerate(eqs):
        for (px, py), (c, s) in eq.items():
            idx = (j, px) if d == 1 else (j, px, py)
            coeffs[idx] += c
            s_coeffs[idx] += s
    return PolySystem(d, coeffs, s_coeffs, text)
