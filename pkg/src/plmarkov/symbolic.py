"""Cylinder sets, itineraries and the symbolic metric."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .interval_map import BOUNDARY, DomainError, MapFamily
from .rational import fmt, is_exact

__all__ = [
    "BoundaryHit",
    "CylinderLabel",
    "CylinderResult",
    "LabelBudgetExceeded",
    "ProbeResult",
    "children",
    "cylinder",
    "enumerate_labels",
    "expansivity_probe",
    "is_admissible",
    "itinerary",
    "label_orientation",
    "product_measure",
    "symbolic_distance",
]


class BoundaryHit(DomainError):
    """An iterate of the orbit fell on a cell endpoint (the point lies in D)."""

    def __init__(self, step: int, value):
        super().__init__(f"iterate {step} = {value} lies on a cell boundary")
        self.step = step
        self.value = value


class LabelBudgetExceeded(RuntimeError):
    def __init__(self, budget: int, partial: list):
        super().__init__(f"label enumeration exceeded the budget of {budget}")
        self.partial = partial


@dataclass(frozen=True)
class CylinderLabel:
    symbols: tuple[int, ...]

    def __post_init__(self):
        if not self.symbols:
            raise ValueError("a cylinder label needs at least one symbol")
        if any(int(s) != s or s < 1 for s in self.symbols):
            raise ValueError(f"symbols must be positive integers: {self.symbols}")
        object.__setattr__(self, "symbols", tuple(int(s) for s in self.symbols))

    @property
    def depth(self) -> int:
        return len(self.symbols) - 1

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __getitem__(self, k):
        return self.symbols[k]


def _symbols(label) -> tuple[int, ...]:
    if isinstance(label, CylinderLabel):
        return label.symbols
    if type(label) is tuple and label and all(type(s) is int and s >= 1 for s in label):
        return label
    return CylinderLabel(tuple(label)).symbols


@dataclass(frozen=True)
class CylinderResult:
    label: tuple[int, ...]
    interval: tuple[Fraction, Fraction] | None
    measure: Fraction
    orientation: str

    @property
    def empty(self) -> bool:
        return self.interval is None

    @property
    def midpoint(self) -> Fraction:
        return (self.interval[0] + self.interval[1]) / 2

    def to_dict(self):
        return {
            "label": list(self.label),
            "interval": None if self.empty else [fmt(self.interval[0]), fmt(self.interval[1])],
            "measure": fmt(self.measure),
            "orientation": self.orientation,
        }


def is_admissible(family: MapFamily, label) -> bool:
    return _admissible(family, _symbols(label))


def _admissible(family: MapFamily, syms: tuple[int, ...]) -> bool:
    n = family.cell_count
    if n is not None and any(s > n for s in syms):
        return False
    for a, b in zip(syms, syms[1:]):
        succ = family.cell(a).succ
        if succ is None or not succ[0] <= b <= succ[1]:
            return False
    return True


def label_orientation(family: MapFamily, label) -> str:
    """Orientation of the composed branches along the label (parity of negative slopes)."""
    neg = sum(1 for s in _symbols(label) if family.cell(s).slope < 0)
    return "increasing" if neg % 2 == 0 else "decreasing"


def product_measure(family: MapFamily, label) -> Fraction:
    """Length of the last cell divided by the slopes met before it."""
    syms = _symbols(label)
    denom = 1
    for s in syms[:-1]:
        denom *= abs(family.cell(s).slope)
    return family.cell(syms[-1]).length / denom


def cylinder(family: MapFamily, label) -> CylinderResult:
    """Realize H_{i_0...i_n} by pulling the last cell back through the branches."""
    syms = _symbols(label)
    if not _admissible(family, syms):
        return CylinderResult(syms, None, Fraction(0), "increasing")
    cells = [family.cell(s) for s in syms]
    last = cells[-1]
    neg = sum(1 for c in cells if c.slope < 0)
    orientation = "increasing" if neg % 2 == 0 else "decreasing"
    if all(c.slope.denominator == 1 and c.intercept.denominator == 1 for c in cells[:-1]) \
            and last.lo.denominator == 1 and last.hi.denominator == 1:
        # integer branches: carry numerators over a common denominator, reduce once
        lo, hi, den = int(last.lo), int(last.hi), 1
        for c in reversed(cells[:-1]):
            m, b = int(c.slope), int(c.intercept)
            lo, hi = lo - b * den, hi - b * den
            den *= m
            if m < 0:
                lo, hi, den = -hi, -lo, -den
        lo, hi = Fraction(lo, den), Fraction(hi, den)
        return CylinderResult(syms, (lo, hi), hi - lo, orientation)
    lo, hi = last.lo, last.hi
    for c in reversed(cells[:-1]):
        a, b = c.inverse(lo), c.inverse(hi)
        lo, hi = (a, b) if a <= b else (b, a)
    return CylinderResult(syms, (lo, hi), hi - lo, orientation)


def children(family: MapFamily, label) -> list[CylinderResult]:
    """One-symbol extensions of an admissible label, in successor order."""
    syms = _symbols(label)
    a, b = family.cell(syms[-1]).succ
    return [cylinder(family, syms + (k,)) for k in range(a, b + 1)]


def itinerary(family: MapFamily, x, n: int) -> tuple[int, ...]:
    """Symbols of the cells visited by x, f(x), ..., f^n(x)."""
    if is_exact(x):
        x = Fraction(x)
    out = []
    for step in range(n + 1):
        idx = family.cell_of(x)
        if idx is BOUNDARY:
            raise BoundaryHit(step, x)
        out.append(idx)
        if step < n:
            x = family.cell(idx).affine(x)
    return tuple(out)


def symbolic_distance(a: Sequence[int], b: Sequence[int]) -> Fraction:
    """2**-n for the first disagreement n over the common length; 0 if none."""
    if not a or not b:
        raise ValueError("sequences must be nonempty")
    for n, (s, t) in enumerate(zip(a, b)):
        if s != t:
            return Fraction(1, 2 ** n)
    return Fraction(0)


def enumerate_labels(family: MapFamily, depth: int, cap: int,
                     budget: int | None = None) -> Iterator[tuple[int, ...]]:
    """All admissible labels with depth+1 symbols, each symbol <= cap."""
    top = cap if family.cell_count is None else min(cap, family.cell_count)
    count = 0
    stack = [(s,) for s in range(top, 0, -1)]
    while stack:
        lab = stack.pop()
        if len(lab) == depth + 1:
            count += 1
            if budget is not None and count > budget:
                raise LabelBudgetExceeded(budget, [])
            yield lab
            continue
        a, b = family.cell(lab[-1]).succ
        for k in range(min(b, top), a - 1, -1):
            stack.append(lab + (k,))


@dataclass(frozen=True)
class ProbeResult:
    maxima: tuple[Fraction, ...]
    label_counts: tuple[int, ...]
    cap: int


def expansivity_probe(family: MapFamily, depth: int, cell_cap: int) -> ProbeResult:
    """Largest cylinder measure at each depth 0..depth over labels with symbols <= cell_cap.

    Dynamic programming over the last symbol: the best label ending in j at depth d
    extends the best label ending in some predecessor i at depth d-1.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    top = cell_cap if family.cell_count is None else min(cell_cap, family.cell_count)
    cells = {i: family.cell(i) for i in range(1, top + 1)}
    best = {i: Fraction(1) for i in cells}
    count = {i: 1 for i in cells}
    maxima = [max(c.length for c in cells.values())]
    counts = [top]
    for _ in range(depth):
        nbest: dict[int, Fraction] = {}
        ncount: dict[int, int] = {}
        for i, g in best.items():
            c = cells[i]
            a, b = c.succ
            val = g / abs(c.slope)
            for j in range(a, min(b, top) + 1):
                if j not in nbest or val > nbest[j]:
                    nbest[j] = val
                ncount[j] = ncount.get(j, 0) + count[i]
        best, count = nbest, ncount
        maxima.append(max(cells[j].length * g for j, g in best.items()))
        counts.append(sum(count.values()))
    for d in range(1, len(maxima)):
        assert maxima[d] <= maxima[d - 1], "cylinder maxima must not grow with depth"
    return ProbeResult(tuple(maxima), tuple(counts), top)
