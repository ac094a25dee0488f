"""Piecewise linear Markov interval maps with countable partitions.

A map family exposes its partition cell by cell through :meth:`MapFamily.cell`;
countable families are never materialized. Cell geometry is exact
(:class:`fractions.Fraction`); floats only enter through :meth:`MapFamily.__call__`
when the caller passes a float.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterator

from .rational import fmt, is_exact, parse_rational

__all__ = [
    "BOUNDARY",
    "Cell",
    "CustomMap",
    "DomainError",
    "MapFamily",
    "Savior",
    "Schweitzer",
    "ValidationReport",
    "cell_data",
    "cell_of",
    "ell",
    "eval_map",
    "load_map",
    "map_from_spec",
    "validate_partition",
]


class DomainError(ValueError):
    """Point outside the domain of the map."""


class _Boundary:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOUNDARY"

    def __bool__(self):
        return False


#: Returned by :func:`cell_of` for points on a cell endpoint (the set D_0).
BOUNDARY = _Boundary()


def ell(x, E: int = 4) -> int:
    """Smallest n >= 1 with x <= E**n."""
    if E < 2:
        raise ValueError("E must be >= 2")
    if x < 0:
        raise ValueError("x must be nonnegative")
    n, power = 1, E
    while x > power:
        n += 1
        power *= E
    return n


@dataclass(frozen=True)
class Cell:
    index: int
    lo: Fraction
    hi: Fraction
    slope: Fraction
    intercept: Fraction
    succ: tuple[int, int] | None

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo

    @property
    def image(self) -> tuple[Fraction, Fraction]:
        a = self.slope * self.lo + self.intercept
        b = self.slope * self.hi + self.intercept
        return (a, b) if a <= b else (b, a)

    @property
    def increasing(self) -> bool:
        return self.slope > 0

    def affine(self, x):
        if isinstance(x, float):
            return float(self.slope) * x + float(self.intercept)
        return self.slope * x + self.intercept

    def inverse(self, y):
        if isinstance(y, float):
            return (y - float(self.intercept)) / float(self.slope)
        return (y - self.intercept) / self.slope


class MapFamily:
    """Base class: an indexed partition into closed cells with affine branches."""

    kind: str = "abstract"
    #: number of cells, or None for a countably infinite partition
    cell_count: int | None = None
    unit_cells: bool = False

    def cell(self, i: int) -> Cell:
        if i < 1 or (self.cell_count is not None and i > self.cell_count):
            raise IndexError(f"cell index {i} out of range for {self!r}")
        return self._cell(i)

    def _cell(self, i: int) -> Cell:  # pragma: no cover - abstract
        raise NotImplementedError

    def cell_of(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return eval_map(self, x)

    def blocks(self, start: int, stop: int) -> Iterator[tuple[int, int]]:
        """Split [start, stop] into runs of cells sharing |slope|, successors and length."""
        for i in range(start, stop + 1):
            yield i, i

    def range_length(self, lo: int, hi: int) -> Fraction:
        """Total Lebesgue length of cells lo..hi."""
        if hi < lo:
            return Fraction(0)
        if self.unit_cells:
            return Fraction(hi - lo + 1)
        return sum((self.cell(i).length for i in range(lo, hi + 1)), Fraction(0))

    def span(self, a: int, b: int) -> tuple[Fraction, Fraction] | None:
        """(lo, hi) of the union of cells a..b, or None if that union has a gap."""
        if self.unit_cells:
            return self.cell(a).lo, self.cell(b).hi
        for t in range(a, b):
            if self.cell(t).hi != self.cell(t + 1).lo:
                return None
        return self.cell(a).lo, self.cell(b).hi

    def min_abs_slope_from(self, i: int) -> Fraction:
        """A lower bound on |slope| over all cells with index >= i."""
        raise NotImplementedError

    def max_length_from(self, i: int) -> Fraction:
        """An upper bound on cell length over all cells with index >= i."""
        if self.unit_cells:
            return Fraction(1)
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError


class Schweitzer(MapFamily):
    """T_E on [0, inf): cell i = [i-1, i] is mapped affinely onto [0, E**ell(i, E) + 1].

    Odd cells are increasing and even cells decreasing, so for even E this is the
    zig-zag with T(n) = 0 on even n and T(n) = E**ell(n, E) + 1 on odd n.
    """

    kind = "schweitzer"
    unit_cells = True

    def __init__(self, E: int = 4):
        if int(E) != E or E < 2:
            raise ValueError("E must be an integer >= 2")
        self.E = int(E)
        self._cell = lru_cache(maxsize=65536)(self._make_cell)

    def __repr__(self):
        return f"Schweitzer(E={self.E})"

    def __eq__(self, other):
        return isinstance(other, Schweitzer) and other.E == self.E

    def __hash__(self):
        return hash(("schweitzer", self.E))

    def top(self, i: int) -> int:
        return self.E ** ell(i, self.E) + 1

    def _make_cell(self, i: int) -> Cell:
        top = self.top(i)
        if i % 2:
            slope, intercept = Fraction(top), Fraction(-top * (i - 1))
        else:
            slope, intercept = Fraction(-top), Fraction(top * i)
        return Cell(i, Fraction(i - 1), Fraction(i), slope, intercept, (1, top))

    def cell_of(self, x):
        return _unit_cell_of(x)

    def blocks(self, start, stop):
        i = start
        while i <= stop:
            end = min(stop, self.E ** ell(i, self.E))
            yield i, end
            i = end + 1

    def min_abs_slope_from(self, i):
        return Fraction(self.top(i))

    def to_spec(self):
        return {"family": "schweitzer", "E": self.E}


class Savior(MapFamily):
    """Random-walk map: cells 1-3 cover [0, 4], cell i >= 4 covers [i-3, i+1]; slope 4."""

    kind = "savior"
    unit_cells = True

    def __init__(self):
        self._cell = lru_cache(maxsize=65536)(self._make_cell)

    def __repr__(self):
        return "Savior()"

    def __eq__(self, other):
        return isinstance(other, Savior)

    def __hash__(self):
        return hash("savior")

    def _make_cell(self, i: int) -> Cell:
        lo = Fraction(i - 1)
        if i <= 3:
            return Cell(i, lo, lo + 1, Fraction(4), -4 * lo, (1, 4))
        return Cell(i, lo, lo + 1, Fraction(4), -3 * lo - 2, (i - 2, i + 1))

    def cell_of(self, x):
        return _unit_cell_of(x)

    def blocks(self, start, stop):
        i = start
        if i <= 3:
            end = min(3, stop)
            yield i, end
            i = end + 1
        for j in range(i, stop + 1):
            yield j, j

    def min_abs_slope_from(self, i):
        return Fraction(4)

    def to_spec(self):
        return {"family": "savior"}


class CustomMap(MapFamily):
    """A finite partition given cell by cell, in increasing order of position."""

    kind = "custom"

    def __init__(self, cells):
        raw = []
        for c in cells:
            lo, hi, slope, intercept = (Fraction(c[k]) for k in ("lo", "hi", "slope", "intercept"))
            raw.append((lo, hi, slope, intercept))
        if not raw:
            raise ValueError("a custom map needs at least one cell")
        raw.sort(key=lambda t: (t[0], t[1]))
        self._raw = raw
        self.cell_count = len(raw)
        self._los = [t[0] for t in raw]
        self._his = [t[1] for t in raw]
        self._cells = [self._make_cell(i + 1) for i in range(len(raw))]

    def __repr__(self):
        return f"CustomMap({len(self._raw)} cells)"

    def _make_cell(self, i):
        lo, hi, slope, intercept = self._raw[i - 1]
        succ = None
        if slope != 0 and lo < hi:
            a, b = sorted((slope * lo + intercept, slope * hi + intercept))
            first = [k + 1 for k, v in enumerate(self._los) if v == a]
            last = [k + 1 for k, v in enumerate(self._his) if v == b]
            if first and last and first[0] <= last[-1]:
                succ = (first[0], last[-1])
            else:
                touched = [k + 1 for k in range(len(self._raw))
                           if self._los[k] < b and self._his[k] > a]
                if touched:
                    succ = (touched[0], touched[-1])
        return Cell(i, lo, hi, slope, intercept, succ)

    def _cell(self, i):
        return self._cells[i - 1]

    def cell_of(self, x):
        if x < self._los[0] or x > self._his[-1]:
            raise DomainError(f"{x} is outside the domain")
        k = bisect.bisect_right(self._los, x)
        if k == 0:
            raise DomainError(f"{x} is outside the domain")
        lo, hi = self._los[k - 1], self._his[k - 1]
        if x == lo or x == hi:
            return BOUNDARY
        if x < hi:
            return k
        if k < len(self._los) and x == self._los[k]:
            return BOUNDARY
        raise DomainError(f"{x} lies in a gap of the domain")

    def min_abs_slope_from(self, i):
        return min((abs(c.slope) for c in self._cells[i - 1:]), default=None)

    def max_length_from(self, i):
        return max((c.length for c in self._cells[i - 1:]), default=Fraction(0))

    def to_spec(self):
        return {
            "family": "custom",
            "cells": [
                {"lo": fmt(lo), "hi": fmt(hi), "slope": fmt(s), "intercept": fmt(b)}
                for lo, hi, s, b in self._raw
            ],
        }


def _unit_cell_of(x):
    if x < 0:
        raise DomainError(f"{x} is outside [0, inf)")
    if isinstance(x, float):
        if math.isinf(x) or math.isnan(x):
            raise DomainError(f"{x} is outside [0, inf)")
        fl = math.floor(x)
        return BOUNDARY if fl == x else fl + 1
    x = Fraction(x)
    if x.denominator == 1:
        return BOUNDARY
    return math.floor(x) + 1


def cell_of(family: MapFamily, x):
    """Index of the cell whose interior holds x, or BOUNDARY on a cell endpoint."""
    return family.cell_of(x)


def cell_data(family: MapFamily, i: int) -> Cell:
    return family.cell(i)


def _adjacent_cells(family, x):
    """Cells with x as left or right endpoint: (cell ending at x, cell starting at x)."""
    if family.unit_cells:
        n = int(x)
        left = family.cell(n) if n >= 1 else None
        right = family.cell(n + 1)
        return left, right
    left = right = None
    for c in (family.cell(i) for i in range(1, family.cell_count + 1)):
        if c.hi == x:
            left = c
        if c.lo == x:
            right = c
    return left, right


def eval_map(family: MapFamily, x):
    """Evaluate the map; exact input gives an exact Fraction, float input a float.

    On a shared endpoint the common value of both branches is returned when they
    agree; otherwise the branch of the cell to the right of x is used.
    """
    if not is_exact(x) and not isinstance(x, float):
        raise TypeError(f"unsupported numeric type {type(x).__name__}")
    if is_exact(x):
        x = Fraction(x)
    idx = family.cell_of(x)
    if idx is not BOUNDARY:
        return family.cell(idx).affine(x)
    left, right = _adjacent_cells(family, x)
    if right is not None:
        return right.affine(x)
    return left.affine(x)


@dataclass
class ValidationReport:
    depth: int
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {
            "depth": self.depth,
            "passed": self.passed,
            "failures": [
                {"cell": i, "axiom": a, "detail": d} for i, a, d in self.failures
            ],
        }


def validate_partition(family: MapFamily, depth: int) -> ValidationReport:
    """Check the Markov partition axioms on cells 1..depth in exact arithmetic.

    Axiom ids: 1 disjoint interiors, 2 successor cells form one gap-free interval,
    3 affine image equals the union of successor cells, 4 nonzero slope.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    n = depth if family.cell_count is None else min(depth, family.cell_count)
    report = ValidationReport(depth=n)
    fail = report.failures.append
    for i in range(1, n + 1):
        c = family.cell(i)
        if not c.lo < c.hi:
            fail((i, 1, f"empty cell [{fmt(c.lo)}, {fmt(c.hi)}]"))
        if family.cell_count is None or i < family.cell_count:
            nxt = family.cell(i + 1)
            if c.hi > nxt.lo:
                fail((i, 1, f"interior overlaps cell {i + 1}"))
        if c.slope == 0:
            fail((i, 4, "slope is zero"))
            continue
        if c.succ is None:
            fail((i, 3, "image meets no cell of the partition"))
            continue
        a, b = c.succ
        union = family.span(a, b)
        if union is None:
            fail((i, 2, f"successor cells {a}..{b} leave a gap"))
            continue
        img = c.image
        if img != union:
            fail((i, 3, f"image [{fmt(img[0])}, {fmt(img[1])}] is not the union "
                        f"[{fmt(union[0])}, {fmt(union[1])}] of cells {a}..{b}"))
    return report


_TOP_KEYS = {
    "schweitzer": {"family", "E"},
    "savior": {"family"},
    "custom": {"family", "cells"},
}
_CELL_KEYS = {"lo", "hi", "slope", "intercept"}


def map_from_spec(spec: dict) -> MapFamily:
    """Build a family from its JSON object; unknown keys are rejected."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ValueError("map spec must be an object with a 'family' key")
    fam = spec["family"]
    if fam not in _TOP_KEYS:
        raise ValueError(f"unknown family {fam!r}")
    extra = set(spec) - _TOP_KEYS[fam]
    if extra:
        raise ValueError(f"unknown keys in map spec: {sorted(extra)}")
    if fam == "schweitzer":
        E = spec.get("E", 4)
        if isinstance(E, bool) or not isinstance(E, int):
            raise ValueError("E must be an integer")
        return Schweitzer(E)
    if fam == "savior":
        return Savior()
    cells = []
    for c in spec["cells"]:
        extra = set(c) - _CELL_KEYS
        if extra:
            raise ValueError(f"unknown keys in cell spec: {sorted(extra)}")
        missing = _CELL_KEYS - set(c)
        if missing:
            raise ValueError(f"missing keys in cell spec: {sorted(missing)}")
        cells.append({k: parse_rational(c[k]) for k in _CELL_KEYS})
    return CustomMap(cells)


def load_map(text: str) -> MapFamily:
    """Parse a map spec given inline as JSON or as ``@path``."""
    if text.startswith("@"):
        with open(text[1:], encoding="utf-8") as fh:
            text = fh.read()
    return map_from_spec(json.loads(text))
