"""Frobenius-Perron operator of a Markov map.

Three forms are provided and cross-checked in the tests:

* the matrix form on piecewise-constant densities (:func:`push_pc_density`,
  :func:`push_matrix`),
* exact pushforward of combinations of cylinder indicators (:func:`push_cylinders`),
* the pointwise preimage sum (:func:`pointwise_pf`).

For a density with coefficient c_i on cell i the pushed coefficient on cell j is
sum of c_i / |f'(H_i)| over the cells i whose image covers H_j; cell lengths cancel.
"""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy import sparse

from .errors import NonConvergence, TruncationOverflow
from .interval_map import MapFamily, Schweitzer
from .rational import fmt, is_exact, numeric_kind, parse_rational
from .symbolic import BoundaryHit, cylinder, is_admissible

__all__ = [
    "CylinderCombination",
    "IterationResult",
    "PiecewiseConstantDensity",
    "TruncatedMatrix",
    "density_from_spec",
    "flatten",
    "integrate",
    "iterate_to_invariant",
    "l1_distance",
    "pointwise_pf",
    "push_cylinders",
    "push_matrix",
    "push_pc_density",
    "transition_row",
    "truncate",
]


# ---------------------------------------------------------------- transition rows

@lru_cache(maxsize=8192)
def _row(family: MapFamily, i: int) -> tuple[tuple[int, Fraction], ...]:
    c = family.cell(i)
    a, b = c.succ
    scale = c.length * abs(c.slope)
    if family.unit_cells:
        v = 1 / scale
        return tuple((j, v) for j in range(a, b + 1))
    return tuple((j, family.cell(j).length / scale) for j in range(a, b + 1))


def transition_row(family: MapFamily, i: int) -> dict[int, Fraction]:
    """Row i of the transition matrix: lambda(H_j) / (lambda(H_i) |f'(H_i)|) on succ(i)."""
    if i < 1:
        raise ValueError("i must be >= 1")
    return dict(_row(family, i))


@dataclass(frozen=True)
class TruncatedMatrix:
    """Rows 1..size of the countable matrix clipped to columns 1..size.

    ``raw_rows`` are the clipped rows; ``leakage[i-1]`` is the mass row i sends
    beyond the cut. In "renorm" mode leaking rows are rescaled to sum to one; in
    "absorb" mode the leaked mass is dropped.
    """

    family: MapFamily
    size: int
    mode: str
    raw_rows: tuple[dict[int, Fraction], ...]
    leakage: tuple[Fraction, ...]
    lengths: tuple[Fraction, ...]

    def row(self, i: int) -> dict[int, Fraction]:
        raw = self.raw_rows[i - 1]
        leak = self.leakage[i - 1]
        if self.mode == "renorm" and leak and leak < 1:
            kept = 1 - leak
            return {j: v / kept for j, v in raw.items()}
        return raw

    @property
    def rows(self) -> list[dict[int, Fraction]]:
        return [self.row(i) for i in range(1, self.size + 1)]

    @property
    def leaking_rows(self) -> list[int]:
        return [i + 1 for i, leak in enumerate(self.leakage) if leak]

    def retained_mass(self, i: int) -> Fraction:
        return 1 - self.leakage[i - 1]

    @property
    def max_leakage(self) -> Fraction:
        return max(self.leakage)

    def dense(self, raw: bool = False) -> np.ndarray:
        """Float matrix (0-based indices)."""
        m = np.zeros((self.size, self.size))
        for i in range(1, self.size + 1):
            row = self.raw_rows[i - 1] if raw else self.row(i)
            for j, v in row.items():
                m[i - 1, j - 1] = float(v)
        return m

    def csr(self, raw: bool = False) -> sparse.csr_matrix:
        data, rows, cols = [], [], []
        for i in range(1, self.size + 1):
            row = self.raw_rows[i - 1] if raw else self.row(i)
            for j, v in row.items():
                rows.append(i - 1)
                cols.append(j - 1)
                data.append(float(v))
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.size, self.size))

    def summary(self) -> dict:
        return {
            "size": self.size,
            "leak_mode": self.mode,
            "leaking_rows": self.leaking_rows,
            "max_leakage": fmt(self.max_leakage),
        }


def default_size(family: MapFamily, level: int | None, size: int | None) -> int:
    if size is not None:
        n = int(size)
    elif level is not None:
        if not isinstance(family, Schweitzer):
            raise ValueError("a truncation level is only defined for the schweitzer family; pass size")
        n = family.E ** int(level) + 1
    elif family.cell_count is not None:
        n = family.cell_count
    else:
        raise ValueError("countable family: give a truncation level or size")
    if n < 1:
        raise ValueError("truncation size must be >= 1")
    if family.cell_count is not None and n > family.cell_count:
        raise ValueError("truncation larger than the partition")
    return n


def truncate(family: MapFamily, level: int | None = None, size: int | None = None,
             mode: str = "renorm") -> TruncatedMatrix:
    """Finite cut of the transition matrix. Schweitzer level L gives size E**L + 1."""
    if mode not in ("renorm", "absorb"):
        raise ValueError("mode must be 'renorm' or 'absorb'")
    n = default_size(family, level, size)
    rows, leaks, lengths = [], [], []
    for i in range(1, n + 1):
        full = _row(family, i)
        kept = {j: v for j, v in full if j <= n}
        rows.append(kept)
        leaks.append(sum((v for j, v in full if j > n), Fraction(0)))
        lengths.append(family.cell(i).length)
    return TruncatedMatrix(family, n, mode, tuple(rows), tuple(leaks), tuple(lengths))


# ---------------------------------------------------------------- densities

@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Coefficients per cell stored as maximal runs (start, end, value) of equal value.

    Runs are sorted and disjoint, zero values are omitted. Values are either all
    exact rationals or all floats.
    """

    runs: tuple[tuple[int, int, object], ...] = ()

    def __post_init__(self):
        runs = sorted((int(s), int(e), v) for s, e, v in self.runs if v != 0)
        kind = numeric_kind([v for _, _, v in runs])
        merged: list[list] = []
        for s, e, v in runs:
            if s < 1 or e < s:
                raise ValueError(f"bad run {s}..{e}")
            if v < 0:
                raise ValueError("density coefficients must be nonnegative")
            if kind == "exact":
                v = Fraction(v)
            if merged and s <= merged[-1][1]:
                raise ValueError("overlapping runs")
            if merged and merged[-1][1] + 1 == s and merged[-1][2] == v:
                merged[-1][1] = e
            else:
                merged.append([s, e, v])
        object.__setattr__(self, "runs", tuple(tuple(r) for r in merged))
        object.__setattr__(self, "_starts", [r[0] for r in merged])

    @classmethod
    def from_coeffs(cls, coeffs: dict) -> "PiecewiseConstantDensity":
        return cls(tuple((int(i), int(i), v) for i, v in coeffs.items()))

    @classmethod
    def indicator(cls, lo: int, hi: int | None = None, value=Fraction(1)) -> "PiecewiseConstantDensity":
        return cls(((lo, lo if hi is None else hi, value),))

    @property
    def kind(self) -> str:
        return numeric_kind([v for _, _, v in self.runs])

    @property
    def support_bound(self) -> int:
        return self.runs[-1][1] if self.runs else 0

    def coeff(self, i: int):
        k = bisect.bisect_right(self._starts, i) - 1
        if k >= 0:
            s, e, v = self.runs[k]
            if i <= e:
                return v
        return Fraction(0) if self.kind == "exact" else 0.0

    __getitem__ = coeff

    def range_sum(self, lo: int, hi: int):
        total = Fraction(0) if self.kind == "exact" else 0.0
        for s, e, v in self.runs:
            a, b = max(s, lo), min(e, hi)
            if a <= b:
                total += (b - a + 1) * v
        return total

    def mass(self, family: MapFamily | None = None):
        total = Fraction(0) if self.kind == "exact" else 0.0
        for s, e, v in self.runs:
            length = (e - s + 1) if family is None or family.unit_cells else family.range_length(s, e)
            total += v * (length if self.kind == "exact" else float(length))
        return total

    def to_coeffs(self, limit: int = 10 ** 6) -> dict[int, object]:
        if sum(e - s + 1 for s, e, _ in self.runs) > limit:
            raise ValueError("support too large to expand cell by cell")
        return {i: v for s, e, v in self.runs for i in range(s, e + 1)}

    def scale(self, alpha) -> "PiecewiseConstantDensity":
        return PiecewiseConstantDensity(tuple((s, e, v * alpha) for s, e, v in self.runs))

    def __add__(self, other: "PiecewiseConstantDensity") -> "PiecewiseConstantDensity":
        return _combine(self, other, lambda a, b: a + b)

    def to_dict(self) -> dict:
        return {"type": "pc", "runs": [[s, e, fmt(v)] for s, e, v in self.runs]}


def _breakpoints(*densities):
    pts = set()
    for d in densities:
        for s, e, _ in d.runs:
            pts.add(s)
            pts.add(e + 1)
    return sorted(pts)


def _combine(a, b, op):
    numeric_kind([v for _, _, v in a.runs] + [v for _, _, v in b.runs])
    pts = _breakpoints(a, b)
    runs = []
    for s, nxt in zip(pts, pts[1:]):
        v = op(a.coeff(s), b.coeff(s))
        if v != 0:
            runs.append((s, nxt - 1, v))
    return PiecewiseConstantDensity(tuple(runs))


def l1_distance(a: PiecewiseConstantDensity, b: PiecewiseConstantDensity,
                family: MapFamily | None = None):
    """Sum over cells of |a_i - b_i| * lambda(H_i); unit cells when family is None."""
    kind = numeric_kind([v for _, _, v in a.runs] + [v for _, _, v in b.runs])
    total = Fraction(0) if kind == "exact" else 0.0
    pts = _breakpoints(a, b)
    for s, nxt in zip(pts, pts[1:]):
        diff = abs(a.coeff(s) - b.coeff(s))
        if diff:
            length = nxt - s if family is None or family.unit_cells else family.range_length(s, nxt - 1)
            total += diff * (length if kind == "exact" else float(length))
    return total


def push_pc_density(family: MapFamily, density: PiecewiseConstantDensity, steps: int = 1,
                    max_index: int | None = None) -> PiecewiseConstantDensity:
    """k-fold pushforward of a piecewise-constant density.

    Each run of equal coefficients is split into blocks of cells sharing slope and
    successors, and every block adds a constant on its successor range. Exact
    inputs stay exact and total mass is preserved.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    exact = density.kind == "exact"
    for _ in range(steps):
        diff: dict[int, object] = defaultdict(Fraction if exact else float)
        scale = 0.0
        for s, e, v in density.runs:
            for u, w in family.blocks(s, e):
                c = family.cell(u)
                a, b = c.succ
                if max_index is not None and b > max_index:
                    raise TruncationOverflow(
                        f"cell {u} maps onto cells up to {b}, beyond max index {max_index}")
                add = (w - u + 1) * v / abs(c.slope) if exact else \
                    (w - u + 1) * v / float(abs(c.slope))
                diff[a] += add
                diff[b + 1] -= add
                if not exact:
                    scale = max(scale, abs(add))
        runs, acc = [], (Fraction(0) if exact else 0.0)
        keys = sorted(diff)
        for k, nxt in zip(keys, keys[1:]):
            acc += diff[k]
            if not exact and abs(acc) <= 1e-14 * scale:
                acc = 0.0
            if acc:
                runs.append((k, nxt - 1, acc))
        density = PiecewiseConstantDensity(tuple(runs))
    return density


def push_matrix(trunc: TruncatedMatrix, coeffs: dict[int, Fraction], steps: int = 1) -> dict[int, Fraction]:
    """Coefficient vector times D_Lambda P^k D_Lambda^-1 with the truncated rows, exactly."""
    lengths = trunc.lengths
    cur = dict(coeffs)
    for _ in range(steps):
        out: dict[int, Fraction] = defaultdict(Fraction)
        for i, c in cur.items():
            if i > trunc.size:
                raise TruncationOverflow(f"coefficient on cell {i} beyond truncation {trunc.size}")
            mass = c * lengths[i - 1]
            for j, p in trunc.row(i).items():
                out[j] += mass * p
        cur = {j: m / lengths[j - 1] for j, m in out.items() if m}
    return cur


# ---------------------------------------------------------------- cylinder combinations

@dataclass(frozen=True)
class CylinderCombination:
    """Finite nonnegative combination of cylinder indicators, equal labels merged."""

    terms: tuple[tuple[Fraction, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        merged: dict[tuple[int, ...], Fraction] = defaultdict(Fraction)
        for w, lab in self.terms:
            w = Fraction(w)
            if w < 0:
                raise ValueError("weights must be nonnegative")
            if not lab:
                raise ValueError("empty label")
            if w:
                merged[tuple(int(s) for s in lab)] += w
        object.__setattr__(self, "terms", tuple((w, lab) for lab, w in sorted(merged.items())))

    @classmethod
    def single(cls, label, weight=Fraction(1)) -> "CylinderCombination":
        return cls(((Fraction(weight), tuple(label)),))

    @property
    def max_depth(self) -> int:
        return max((len(lab) - 1 for _, lab in self.terms), default=0)

    @property
    def is_flat(self) -> bool:
        return all(len(lab) == 1 for _, lab in self.terms)

    def weight_of(self, label) -> Fraction:
        label = tuple(label)
        for w, lab in self.terms:
            if lab == label:
                return w
        return Fraction(0)

    def mass(self, family: MapFamily) -> Fraction:
        return sum((w * cylinder(family, lab).measure for w, lab in self.terms), Fraction(0))

    def scale(self, alpha) -> "CylinderCombination":
        return CylinderCombination(tuple((w * alpha, lab) for w, lab in self.terms))

    def __add__(self, other):
        return CylinderCombination(self.terms + other.terms)

    def to_dict(self):
        return {"type": "cylinders",
                "terms": [{"weight": fmt(w), "label": list(lab)} for w, lab in self.terms]}


def push_cylinders(family: MapFamily, omega: CylinderCombination, steps: int = 1) -> CylinderCombination:
    """Exact pushforward: a term (w, (i_0, ..., i_n)) becomes (w / |f'(H_i0)|, (i_1, ..., i_n));
    a single-cell term spreads over its successor cells."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    for w, lab in omega.terms:
        if not is_admissible(family, lab):
            raise ValueError(f"label {lab} is not admissible")
    for _ in range(steps):
        out: dict[tuple[int, ...], Fraction] = defaultdict(Fraction)
        # single-cell terms spread over a successor range: collect range endpoints, then sweep
        edges: dict[int, Fraction] = defaultdict(Fraction)
        for w, lab in omega.terms:
            c = family.cell(lab[0])
            val = w / abs(c.slope)
            if len(lab) > 1:
                out[lab[1:]] += val
            else:
                a, b = c.succ
                edges[a] += val
                edges[b + 1] -= val
        level = Fraction(0)
        points = sorted(edges)
        for a, b in zip(points, points[1:]):
            level += edges[a]
            if level:
                for k in range(a, b):
                    out[(k,)] += level
        omega = CylinderCombination(tuple((w, lab) for lab, w in out.items()))
    return omega


def flatten(omega: CylinderCombination) -> PiecewiseConstantDensity:
    """Density of a combination whose labels are all single cells."""
    if not omega.is_flat:
        raise ValueError("only combinations of single-cell labels flatten to cell coefficients")
    return PiecewiseConstantDensity.from_coeffs({lab[0]: w for w, lab in omega.terms})


def as_combination(rho) -> CylinderCombination:
    if isinstance(rho, CylinderCombination):
        return rho
    if isinstance(rho, PiecewiseConstantDensity):
        if rho.kind != "exact":
            raise TypeError("only exact densities convert to cylinder combinations")
        return CylinderCombination(tuple((v, (i,)) for i, v in rho.to_coeffs().items()))
    raise TypeError(f"cannot use {type(rho).__name__} as a density")


def pointwise_pf(family: MapFamily, rho, x):
    """Sum of rho(z) / |f'(z)| over the preimages z of x.

    Raises BoundaryHit when a preimage falls on an endpoint of a term's interval,
    where the sum depends on the side of approach.
    """
    if is_exact(x):
        x = Fraction(x)
    omega = as_combination(rho)
    total = Fraction(0) if isinstance(x, Fraction) else 0.0
    for w, lab in omega.terms:
        c = family.cell(lab[0])
        lo, hi = c.image
        if not lo <= x <= hi:
            continue
        z = c.inverse(x)
        cyl = cylinder(family, lab)
        if cyl.empty:
            continue
        a, b = cyl.interval
        if z == a or z == b:
            raise BoundaryHit(0, x)
        if a < z < b:
            total += w / abs(c.slope) if isinstance(total, Fraction) else float(w) / float(abs(c.slope))
    return total


# ---------------------------------------------------------------- integration over sets

def _cells_overlapping(family: MapFamily, a: Fraction, b: Fraction) -> Iterable[int]:
    if family.unit_cells:
        return range(max(1, math.floor(a) + 1), math.ceil(b) + 1)
    return (i for i in range(1, family.cell_count + 1)
            if family.cell(i).lo < b and family.cell(i).hi > a)


def normalize_intervals(intervals) -> list[tuple[Fraction, Fraction]]:
    ivs = sorted((Fraction(a), Fraction(b)) for a, b in intervals)
    out: list[list[Fraction]] = []
    for a, b in ivs:
        if a > b:
            raise ValueError(f"interval [{a}, {b}] is not well ordered")
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def integrate(obj, family: MapFamily, intervals) -> Fraction:
    """Measure of a finite union of intervals under a density or cylinder combination."""
    ivs = normalize_intervals(intervals)
    total = Fraction(0)
    if isinstance(obj, CylinderCombination):
        for w, lab in obj.terms:
            cyl = cylinder(family, lab)
            if cyl.empty:
                continue
            lo, hi = cyl.interval
            for a, b in ivs:
                overlap = min(b, hi) - max(a, lo)
                if overlap > 0:
                    total += w * overlap
        return total
    exact = obj.kind == "exact"
    if not exact:
        total = 0.0
    for a, b in ivs:
        for i in _cells_overlapping(family, a, b):
            c = family.cell(i)
            overlap = min(b, c.hi) - max(a, c.lo)
            if overlap > 0:
                v = obj.coeff(i)
                total += v * overlap if exact else v * float(overlap)
    return total


# ---------------------------------------------------------------- fixed-point iteration

@dataclass
class IterationResult:
    density: PiecewiseConstantDensity
    history: list[tuple[int, float, float]] = field(default_factory=list)
    truncation: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history)

    def history_csv_rows(self):
        return [{"iter": k, "l1_change": d, "mass": m} for k, d, m in self.history]


def iterate_to_invariant(family: MapFamily, c0: PiecewiseConstantDensity, tol: float = 1e-10,
                         max_iter: int = 100_000, level: int | None = None, size: int | None = None,
                         mode: str = "renorm") -> IterationResult:
    """Power-iterate the truncated operator in floating point until the L1 step change <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    trunc = truncate(family, level=level, size=size, mode=mode)
    n = trunc.size
    if c0.support_bound > n:
        raise TruncationOverflow(f"initial density reaches cell {c0.support_bound} > {n}")
    lengths = np.array([float(x) for x in trunc.lengths])
    v = np.zeros(n)
    for s, e, val in c0.runs:
        v[s - 1:e] = float(val)
    v *= lengths
    pt = trunc.csr().T.tocsr()
    history = []
    for k in range(1, max_iter + 1):
        nv = pt @ v
        change = float(np.abs(nv - v).sum())
        v = nv
        history.append((k, change, float(v.sum())))
        if change <= tol:
            coeffs = v / lengths
            runs = tuple((i + 1, i + 1, float(c)) for i, c in enumerate(coeffs) if c > 0)
            return IterationResult(PiecewiseConstantDensity(runs), history, trunc.summary())
    raise NonConvergence(f"no convergence to {tol} within {max_iter} iterations", history)


# ---------------------------------------------------------------- JSON

_PC_KEYS = {"type", "coeffs"}
_CYL_KEYS = {"type", "terms"}


def density_from_spec(spec: dict):
    """Parse {"type": "pc", "coeffs": {...}} or {"type": "cylinders", "terms": [...]}."""
    kind = spec.get("type")
    if kind == "pc":
        extra = set(spec) - _PC_KEYS
        if extra:
            raise ValueError(f"unknown keys in density spec: {sorted(extra)}")
        return PiecewiseConstantDensity.from_coeffs(
            {int(i): parse_rational(v) for i, v in spec["coeffs"].items()})
    if kind == "cylinders":
        extra = set(spec) - _CYL_KEYS
        if extra:
            raise ValueError(f"unknown keys in density spec: {sorted(extra)}")
        terms = []
        for t in spec["terms"]:
            if set(t) - {"weight", "label"}:
                raise ValueError(f"unknown keys in cylinder term: {sorted(set(t) - {'weight', 'label'})}")
            terms.append((parse_rational(t["weight"]), tuple(int(s) for s in t["label"])))
        return CylinderCombination(tuple(terms))
    raise ValueError(f"unknown density type {kind!r}")
