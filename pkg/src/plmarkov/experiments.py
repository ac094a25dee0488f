"""Monte Carlo and operator experiments on the long-run behaviour of the maps."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .interval_map import MapFamily, Schweitzer
from .rational import fmt, parse_rational
from .sampling import (
    block_rng,
    cell_index,
    draw_starts,
    is_boundary,
    make_measure,
    map_blocks,
    pi_interval_mass,
    stationary_density,
    step,
)
from .symbolic import BoundaryHit, itinerary
from .transfer import (
    CylinderCombination,
    default_size,
    flatten,
    integrate,
    normalize_intervals,
    push_cylinders,
    push_pc_density,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "liminf_limsup_probe",
    "mixing_estimate",
    "parse_set",
    "run_monte_carlo",
    "run_pushforward_experiment",
]

SERIES_COLUMNS = ["k", "estimate", "target", "abs_err", "stderr"]


def parse_set(text: str) -> list[tuple[Fraction, Fraction]]:
    """'a,b;c,d' -> [(a, b), (c, d)] with rational endpoints, a <= b."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(",")
        if len(bits) != 2:
            raise ValueError(f"bad interval {part!r}; expected 'a,b'")
        a, b = parse_rational(bits[0].strip()), parse_rational(bits[1].strip())
        if a > b:
            raise ValueError(f"interval [{a}, {b}] is not well ordered")
        out.append((a, b))
    if not out:
        raise ValueError("empty set")
    return out


@dataclass
class ExperimentConfig:
    family: MapFamily
    measure: dict = field(default_factory=lambda: {"type": "uniform", "a": "0", "b": "1"})
    set_a: list | None = None
    set_b: list | None = None
    steps: int = 30
    horizon: int = 1000
    burn_in: int = 10
    samples: int = 100_000
    seed: int = 0
    level: int | None = None
    size: int | None = None
    leak: str = "renorm"
    workers: int = 1
    exact_control: bool = True
    max_index: int | None = None
    starts: list | None = None

    def validate(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for s in (self.set_a, self.set_b):
            if s is not None:
                normalize_intervals(s)
        return self

    def cells(self) -> int:
        """Number of leading cells used for histograms."""
        fam = self.family
        if self.size is not None or self.level is not None:
            return default_size(fam, self.level, self.size)
        if isinstance(fam, Schweitzer):
            return fam.E ** 2 + 1
        return fam.cell_count or 100

    def stamp(self, mode: str) -> dict:
        return {"seed": int(self.seed), "workers": self.workers, "mode": mode,
                "samples": self.samples, "leak_mode": self.leak}


@dataclass
class ExperimentResult:
    series: list[dict]
    stamp: dict
    extra: dict = field(default_factory=dict)
    columns: list = field(default_factory=lambda: list(SERIES_COLUMNS))

    def to_json(self) -> str:
        payload = {"stamp": self.stamp, "series": self.series, **self.extra}
        return json.dumps(payload, sort_keys=True, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in self.series:
            w.writerow({k: _jsonable(row.get(k)) for k in self.columns})
        return buf.getvalue()


def _jsonable(v):
    if isinstance(v, Fraction):
        return fmt(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (set, frozenset, tuple)):
        return list(v)
    return v


def _in_set(x: np.ndarray, ivs) -> np.ndarray:
    hit = np.zeros(x.shape, dtype=bool)
    for a, b in ivs:
        hit |= (x >= float(a)) & (x <= float(b))
    return hit


# ---------------------------------------------------------------- orbits over blocks

def _orbit_block(cfg: ExperimentConfig, measure, block: int, m: int, observe):
    """Draw m starts, iterate cfg.steps times, call observe(k, x) at each k.

    Orbits that land on a cell endpoint are redrawn from the same block stream.
    """
    rng = block_rng(int(cfg.seed), block)
    x0, resampled = draw_starts(measure, cfg.family, rng, m)
    for _ in range(64):
        x = x0.copy()
        bad = np.zeros(m, dtype=bool)
        traj = [x]
        for _k in range(cfg.steps):
            x = step(cfg.family, x)
            bad |= is_boundary(cfg.family, x)
            traj.append(x)
        if not bad.any():
            break
        nbad = int(bad.sum())
        resampled += nbad
        x0[bad], extra = draw_starts(measure, cfg.family, rng, nbad)
        resampled += extra
    else:
        raise RuntimeError("orbit resampling did not terminate")
    out = [observe(k, xk, x0) for k, xk in enumerate(traj)]
    return out, resampled, x0


def _exact_control(cfg: ExperimentConfig, starts: np.ndarray) -> dict:
    """Replay about 1% of orbits in rationals and compare itineraries with the double orbits."""
    n = max(1, len(starts) // 100)
    pick = starts[:: max(1, len(starts) // n)][:n]
    depths = []
    for x0 in pick:
        try:
            exact = itinerary(cfg.family, Fraction(float(x0)), cfg.steps)
        except BoundaryHit as e:
            exact = itinerary(cfg.family, Fraction(float(x0)), e.step - 1) if e.step else ()
        x = np.array([x0])
        depth = 0
        for k, sym in enumerate(exact):
            if int(cell_index(cfg.family, x)[0]) != sym:
                break
            depth = k + 1
            x = step(cfg.family, x)
        depths.append(depth)
    full = cfg.steps + 1
    return {
        "subsample": len(depths),
        "min_agreement": min(depths) if depths else None,
        "median_agreement": float(np.median(depths)) if depths else None,
        "full_agreement_fraction": (sum(d == full for d in depths) / len(depths)) if depths else None,
    }


# ---------------------------------------------------------------- experiments

def _exact_series(cfg: ExperimentConfig, measure, ivs) -> list[Fraction] | None:
    obj = measure.exact
    if obj is None:
        return None
    fam = cfg.family
    out = []
    if isinstance(obj, CylinderCombination):
        depth = obj.max_depth
        cur = obj
        for k in range(min(depth, cfg.steps) + 1):
            out.append(integrate(cur, fam, ivs))
            if k < min(depth, cfg.steps):
                cur = push_cylinders(fam, cur, 1)
        if cfg.steps <= depth:
            return out
        dens = flatten(cur)
    else:
        dens = obj
        out.append(integrate(dens, fam, ivs))
    while len(out) <= cfg.steps:
        dens = push_pc_density(fam, dens, 1, max_index=cfg.max_index)
        out.append(integrate(dens, fam, ivs))
    return out


def run_pushforward_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """mu(f^-k A) for k = 0..steps, exactly when possible and by Monte Carlo, against mu(X) pi(A)."""
    cfg.validate()
    if cfg.set_a is None:
        raise ValueError("pushforward needs a target set A")
    fam = cfg.family
    ivs = normalize_intervals(cfg.set_a)
    measure = make_measure(cfg.measure, fam, cfg.level, cfg.size)
    mass = measure.mass
    pi_a = pi_interval_mass(fam, ivs, cfg.level, cfg.size)
    target = mass * pi_a
    exact = _exact_series(cfg, measure, ivs)
    counts = np.zeros(cfg.steps + 1, dtype=np.int64)
    resampled = 0
    control = None
    if mass:
        def run(block, m):
            return _orbit_block(cfg, measure, block, m, lambda k, x, x0: int(_in_set(x, ivs).sum()))

        results = map_blocks(run, cfg.samples, cfg.workers)
        starts = []
        for hits, res, x0 in results:
            counts += np.array(hits, dtype=np.int64)
            resampled += res
            starts.append(x0)
        if cfg.exact_control:
            control = _exact_control(cfg, np.concatenate(starts))
    n = cfg.samples
    fmass = float(mass)
    series = []
    for k in range(cfg.steps + 1):
        frac = float(counts[k] / n) if mass else 0.0
        est = fmass * frac
        row = {
            "k": k,
            "estimate": est,
            "target": float(target),
            "abs_err": abs(est - float(target)),
            "stderr": fmass * math.sqrt(frac * (1 - frac) / n),
        }
        if exact is not None:
            row["exact"] = float(exact[k])
            row["exact_abs_err"] = abs(float(exact[k]) - float(target))
        series.append(row)
    extra = {
        "target_exact": fmt(target) if isinstance(target, Fraction) else target,
        "mass": fmt(mass) if isinstance(mass, Fraction) else mass,
        "boundary_resamples": resampled,
        "exact_control": control,
        "set_a": [[fmt(a), fmt(b)] for a, b in ivs],
    }
    return ExperimentResult(series, cfg.stamp("monte-carlo+exact" if exact is not None else "monte-carlo"), extra)


def _pi_cells(fam: MapFamily, ncells: int, level, size) -> np.ndarray:
    if isinstance(fam, Schweitzer):
        from .closed_form import tables
        t = tables(fam.E)
        return np.array([float(t.p(i)) for i in range(1, ncells + 1)])
    dens = stationary_density(fam, level, size)
    vals = {i: v * float(fam.cell(i).length) for i, _, v in dens.runs}
    return np.array([vals.get(i, 0.0) for i in range(1, ncells + 1)])


def run_monte_carlo(cfg: ExperimentConfig) -> ExperimentResult:
    """Cell occupancy of f^k(x), x ~ mu normalized, and its total-variation distance to pi.

    TV is taken over cells 1..N with every cell beyond N lumped into one bin.
    """
    cfg.validate()
    fam = cfg.family
    ncells = cfg.cells()
    measure = make_measure(cfg.measure, fam, cfg.level, cfg.size)
    if not measure.mass:
        raise ValueError("the initial measure has zero mass")
    pi = _pi_cells(fam, ncells, cfg.level, cfg.size)
    pi_full = np.append(pi, max(0.0, 1.0 - pi.sum()))

    def observe(k, x, x0):
        idx = np.minimum(cell_index(fam, x), ncells + 1)
        return np.bincount(idx, minlength=ncells + 2)[1:]

    results = map_blocks(lambda b, m: _orbit_block(cfg, measure, b, m, observe), cfg.samples, cfg.workers)
    hist = np.zeros((cfg.steps + 1, ncells + 1), dtype=np.int64)
    resampled = 0
    starts = []
    for per_k, res, x0 in results:
        hist += np.array(per_k, dtype=np.int64)
        resampled += res
        starts.append(x0)
    n = cfg.samples
    band = 0.5 * float(np.sqrt(pi_full * (1 - pi_full) / n).sum())
    series = []
    for k in range(cfg.steps + 1):
        freq = hist[k] / n
        tv = 0.5 * float(np.abs(freq - pi_full).sum())
        series.append({"k": k, "estimate": tv, "target": 0.0, "abs_err": tv, "stderr": band})
    final = hist[-1] / n
    extra = {
        "cells": ncells,
        "tv": series[-1]["estimate"],
        "noise_band": band,
        "histogram": [{"cell": i + 1, "freq": float(final[i]), "pi": float(pi[i])} for i in range(ncells)],
        "rest": {"freq": float(final[-1]), "pi": float(pi_full[-1])},
        "boundary_resamples": resampled,
        "exact_control": _exact_control(cfg, np.concatenate(starts)) if cfg.exact_control else None,
    }
    return ExperimentResult(series, cfg.stamp("monte-carlo"), extra)


def mixing_estimate(cfg: ExperimentConfig) -> ExperimentResult:
    """|pi(f^-k A & B) - pi(A) pi(B)| estimated from x ~ pi, for k = 0..steps."""
    cfg.validate()
    if cfg.set_a is None or cfg.set_b is None:
        raise ValueError("mixing needs sets A and B")
    fam = cfg.family
    ivs_a, ivs_b = normalize_intervals(cfg.set_a), normalize_intervals(cfg.set_b)
    measure = make_measure({"type": "pi"}, fam, cfg.level, cfg.size)
    pa = pi_interval_mass(fam, ivs_a, cfg.level, cfg.size)
    pb = pi_interval_mass(fam, ivs_b, cfg.level, cfg.size)
    target = float(pa * pb)

    def observe(k, x, x0):
        return int((_in_set(x, ivs_a) & _in_set(x0, ivs_b)).sum())

    results = map_blocks(lambda b, m: _orbit_block(cfg, measure, b, m, observe), cfg.samples, cfg.workers)
    counts = np.zeros(cfg.steps + 1, dtype=np.int64)
    resampled = 0
    for hits, res, _ in results:
        counts += np.array(hits, dtype=np.int64)
        resampled += res
    n = cfg.samples
    series = []
    for k in range(cfg.steps + 1):
        frac = float(counts[k] / n)
        series.append({"k": k, "estimate": float(frac), "target": target, "abs_err": abs(frac - target),
                       "stderr": math.sqrt(frac * (1 - frac) / n)})
    extra = {"pi_a": fmt(pa) if isinstance(pa, Fraction) else pa,
             "pi_b": fmt(pb) if isinstance(pb, Fraction) else pb,
             "boundary_resamples": resampled}
    return ExperimentResult(series, cfg.stamp("monte-carlo"), extra)


def liminf_limsup_probe(cfg: ExperimentConfig) -> ExperimentResult:
    """Per start, min and max of f^k(x) over burn_in < k <= horizon.

    Starts come from cfg.starts or from cfg.samples draws of the initial measure.
    Orbits that touch a cell endpoint are kept but flagged.
    """
    cfg.validate()
    if not 0 <= cfg.burn_in < cfg.horizon:
        raise ValueError("need 0 <= burn_in < horizon")
    fam = cfg.family
    if cfg.starts is not None:
        x = np.array([float(v) for v in cfg.starts])
    else:
        measure = make_measure(cfg.measure, fam, cfg.level, cfg.size)
        x = measure.sample(block_rng(int(cfg.seed), 0), cfg.samples)
    starts = x.copy()
    flagged = is_boundary(fam, x)
    lo = np.full(x.shape, np.inf)
    hi = np.full(x.shape, -np.inf)
    for k in range(1, cfg.horizon + 1):
        x = step(fam, x)
        flagged |= is_boundary(fam, x)
        if k > cfg.burn_in:
            np.minimum(lo, x, out=lo)
            np.maximum(hi, x, out=hi)
    series = [{"start": float(s), "min": float(a), "max": float(b), "boundary_orbit": bool(f)}
              for s, a, b, f in zip(starts, lo, hi, flagged)]
    extra = {"horizon": cfg.horizon, "burn_in": cfg.burn_in,
             "max_of_minima": float(lo.max()), "min_of_maxima": float(hi.min()),
             "boundary_orbits": int(flagged.sum())}
    return ExperimentResult(series, cfg.stamp("double"), extra, ["start", "min", "max", "boundary_orbit"])
