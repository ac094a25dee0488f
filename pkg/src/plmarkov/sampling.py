"""Reproducible sampling of initial measures and vectorized orbit stepping.

Samples are produced in fixed blocks of BLOCK_SIZE. Block b draws from a Philox
stream keyed by the seed and jumped b times, so the values of every sample depend
only on (seed, sample index) and never on how blocks are spread over workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .interval_map import MapFamily, Savior, Schweitzer
from .transfer import CylinderCombination, PiecewiseConstantDensity, density_from_spec
from .symbolic import cylinder

__all__ = [
    "BLOCK_SIZE",
    "Measure",
    "block_rng",
    "cell_index",
    "is_boundary",
    "make_measure",
    "map_blocks",
    "pi_interval_mass",
    "stationary_density",
    "step",
]

BLOCK_SIZE = 4096
_MAX_RESAMPLE = 64


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(block))


def block_sizes(total: int) -> list[int]:
    full, rest = divmod(total, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def map_blocks(fn: Callable[[int, int], object], total: int, workers: int = 1) -> list:
    """fn(block_index, block_size) for every block, results in block order."""
    sizes = block_sizes(total)
    if workers <= 1 or len(sizes) <= 1:
        return [fn(b, m) for b, m in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


# ---------------------------------------------------------------- orbit stepping

def _powers(E: int) -> np.ndarray:
    out, v = [], E
    while v < 2 ** 62:
        out.append(v)
        v *= E
    return np.array(out, dtype=np.int64)


class _Stepper:
    def __init__(self, family: MapFamily):
        self.family = family
        if isinstance(family, Schweitzer):
            self.powers = _powers(family.E)
        elif not isinstance(family, Savior):
            cells = [family.cell(i) for i in range(1, family.cell_count + 1)]
            self.los = np.array([float(c.lo) for c in cells])
            self.his = np.array([float(c.hi) for c in cells])
            self.slopes = np.array([float(c.slope) for c in cells])
            self.intercepts = np.array([float(c.intercept) for c in cells])
            self.ends = np.unique(np.concatenate([self.los, self.his]))

    def index(self, x: np.ndarray) -> np.ndarray:
        if self.family.unit_cells:
            return np.floor(x).astype(np.int64) + 1
        k = np.searchsorted(self.los, x, side="right")
        k = np.where((k >= 1) & (x <= self.his[np.maximum(k - 1, 0)]), k, 0)
        return k

    def boundary(self, x: np.ndarray) -> np.ndarray:
        if self.family.unit_cells:
            return x == np.floor(x)
        return np.isin(x, self.ends)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        i = self.index(x)
        fam = self.family
        if isinstance(fam, Schweitzer):
            n = np.searchsorted(self.powers, i, side="left")
            top = self.powers[n].astype(np.float64) + 1.0
            base = (i - 1).astype(np.float64)
            return np.where(i % 2 == 1, top * (x - base), top * (base + 1.0 - x))
        if isinstance(fam, Savior):
            base = (i - 1).astype(np.float64)
            return np.where(i <= 3, 4.0 * (x - base), 4.0 * (x - base) + (base - 2.0))
        if np.any(i == 0):
            raise ValueError("orbit left the partition")
        return self.slopes[i - 1] * x + self.intercepts[i - 1]


_STEPPERS: dict = {}


def _stepper(family: MapFamily) -> _Stepper:
    key = id(family)
    s = _STEPPERS.get(key)
    if s is None or s.family is not family:
        s = _Stepper(family)
        _STEPPERS[key] = s
    return s


def step(family: MapFamily, x: np.ndarray) -> np.ndarray:
    """One application of the map to an array of doubles (right-cell convention at endpoints)."""
    return _stepper(family)(np.asarray(x, dtype=np.float64))


def cell_index(family: MapFamily, x: np.ndarray) -> np.ndarray:
    return _stepper(family).index(np.asarray(x, dtype=np.float64))


def is_boundary(family: MapFamily, x: np.ndarray) -> np.ndarray:
    return _stepper(family).boundary(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------- stationary measure

@dataclass(frozen=True)
class _StationaryPC:
    """Stationary density as (first cell, last cell, density value) runs."""

    runs: tuple[tuple[int, int, float], ...]
    exact: bool


def stationary_density(family: MapFamily, level=None, size=None, tail_tol: float = 1e-12) -> _StationaryPC:
    if isinstance(family, Schweitzer):
        from .closed_form import p_block, tables
        t = tables(family.E)
        runs, n = [], 1
        while True:
            lo, hi = p_block(n, family.E)
            runs.append((lo, hi, float(t.p(lo))))
            if t.q_tail_bound(n + 1) < tail_tol:
                break
            n += 1
        return _StationaryPC(tuple(runs), True)
    from .chain import stationary_truncated
    from .transfer import default_size, truncate
    if size is None and level is None and family.cell_count is None:
        size = 100
    trunc = truncate(family, level=level, size=default_size(family, level, size))
    res = stationary_truncated(trunc, method="direct")
    runs = tuple((i, i, res.pi[i - 1] / float(trunc.lengths[i - 1])) for i in range(1, trunc.size + 1))
    return _StationaryPC(runs, False)


def pi_interval_mass(family: MapFamily, intervals, level=None, size=None):
    """pi of a finite union of intervals; exact Fraction for the Schweitzer family."""
    from .transfer import normalize_intervals
    ivs = normalize_intervals(intervals)
    if isinstance(family, Schweitzer):
        from .closed_form import tables
        t = tables(family.E)
        total = Fraction(0)
        for a, b in ivs:
            a = max(a, Fraction(0))
            if b <= a:
                continue
            first, last = math.floor(a) + 1, math.ceil(b)
            if first == last:
                total += t.p(first) * (b - a)
                continue
            total += t.p(first) * (first - a)
            total += t.p(last) * (b - (last - 1))
            if last - 1 >= first + 1:
                total += t.p_range_sum(first + 1, last - 1)
        return total
    dens = stationary_density(family, level, size)
    total = 0.0
    for a, b in ivs:
        for i, _, v in dens.runs:
            c = family.cell(i)
            overlap = min(b, c.hi) - max(a, c.lo)
            if overlap > 0:
                total += v * float(overlap)
    return total


# ---------------------------------------------------------------- initial measures

class Measure:
    """A finite initial measure: total mass, a sampler for its normalization, an exact form if any."""

    def __init__(self, spec: dict, mass, sampler, exact=None):
        self.spec = spec
        self.mass = mass
        self._sampler = sampler
        self.exact = exact

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return self._sampler(rng, m)


def _run_sampler(runs, weights, lengths_unit: bool):
    # runs: (lo, hi, density); points uniform on cells lo..hi (unit cells)
    w = np.array(weights, dtype=np.float64)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    los = np.array([r[0] for r in runs], dtype=np.int64)
    counts = np.array([r[1] - r[0] + 1 for r in runs], dtype=np.int64)
    if counts.max() >= 2 ** 53:
        raise ValueError("density runs too long to sample")

    def sample(rng, m):
        k = np.searchsorted(cdf, rng.random(m), side="right")
        k = np.minimum(k, len(cdf) - 1)
        cell = los[k] + rng.integers(0, counts[k])
        return (cell - 1).astype(np.float64) + rng.random(m)

    return sample


def _interval_sampler(intervals, weights):
    w = np.array(weights, dtype=np.float64)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    lo = np.array([float(a) for a, _ in intervals])
    width = np.array([float(b - a) for a, b in intervals])

    def sample(rng, m):
        k = np.minimum(np.searchsorted(cdf, rng.random(m), side="right"), len(cdf) - 1)
        return lo[k] + width[k] * rng.random(m)

    return sample


def _empty_sampler(rng, m):
    return np.zeros(0)


def make_measure(spec: dict, family: MapFamily, level=None, size=None) -> Measure:
    """Initial measure from a density spec, {"type":"uniform","a","b"} (Lebesgue on [a, b]) or {"type":"pi"}."""
    kind = spec.get("type")
    if kind == "uniform":
        from .rational import parse_rational
        extra = set(spec) - {"type", "a", "b"}
        if extra:
            raise ValueError(f"unknown keys in measure spec: {sorted(extra)}")
        a, b = parse_rational(spec["a"]), parse_rational(spec["b"])
        if not 0 <= a < b:
            raise ValueError("uniform measure needs 0 <= a < b")
        exact = None
        if family.unit_cells and a.denominator == 1 and b.denominator == 1:
            exact = PiecewiseConstantDensity(((int(a) + 1, int(b), Fraction(1)),))
        return Measure(spec, b - a, _interval_sampler([(a, b)], [1.0]), exact)
    if kind == "pi":
        if set(spec) - {"type"}:
            raise ValueError("the pi measure takes no parameters")
        dens = stationary_density(family, level, size)
        weights = [v * (hi - lo + 1) for lo, hi, v in dens.runs] if family.unit_cells else \
            [v * float(family.range_length(lo, hi)) for lo, hi, v in dens.runs]
        if family.unit_cells:
            sampler = _run_sampler(dens.runs, weights, True)
        else:
            ivs = [(family.cell(lo).lo, family.cell(lo).hi) for lo, _, _ in dens.runs]
            sampler = _interval_sampler(ivs, weights)
        return Measure(spec, Fraction(1), sampler, None)
    obj = density_from_spec(spec)
    if isinstance(obj, CylinderCombination):
        ivs, weights = [], []
        for w, lab in obj.terms:
            cyl = cylinder(family, lab)
            if cyl.empty:
                raise ValueError(f"label {lab} is not admissible")
            ivs.append(cyl.interval)
            weights.append(float(w * cyl.measure))
        mass = obj.mass(family)
        return Measure(spec, mass, _interval_sampler(ivs, weights) if mass else _empty_sampler, obj)
    mass = obj.mass(family)
    if not mass:
        return Measure(spec, mass, _empty_sampler, obj)
    if family.unit_cells:
        weights = [float(v) * (e - s + 1) for s, e, v in obj.runs]
        return Measure(spec, mass, _run_sampler(obj.runs, weights, True), obj)
    cells = obj.to_coeffs()
    ivs = [(family.cell(i).lo, family.cell(i).hi) for i in cells]
    weights = [float(v * family.cell(i).length) for i, v in cells.items()]
    return Measure(spec, mass, _interval_sampler(ivs, weights), obj)


def draw_starts(measure: Measure, family: MapFamily, rng: np.random.Generator, m: int):
    """m starting points avoiding cell endpoints; returns (points, resample count)."""
    x = measure.sample(rng, m)
    resampled = 0
    for _ in range(_MAX_RESAMPLE):
        bad = is_boundary(family, x)
        nbad = int(bad.sum())
        if not nbad:
            break
        resampled += nbad
        x[bad] = measure.sample(rng, nbad)
    else:
        raise RuntimeError("could not draw non-boundary starting points")
    return x, resampled
