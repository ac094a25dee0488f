"""Markov-chain analysis on finite cuts of the countable transition matrix."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .errors import NoReturn, NonConvergence, ReducibleChain
from .interval_map import MapFamily, Schweitzer
from .rational import fmt
from .transfer import TruncatedMatrix, transition_row

__all__ = [
    "ChainDiagnostics",
    "PowerLimit",
    "ReturnStats",
    "StationaryCandidate",
    "StationaryResult",
    "VerificationReport",
    "classify",
    "closed_form_candidate",
    "finite_candidate",
    "first_passage_probs",
    "invariant_union_search",
    "mean_return_time",
    "period_of",
    "power_limit",
    "stationary_truncated",
    "verify_stationary_candidate",
]


def _check_state(trunc: TruncatedMatrix, *states):
    for s in states:
        if not 1 <= s <= trunc.size:
            raise ValueError(f"state {s} outside 1..{trunc.size}")


# ---------------------------------------------------------------- first passage

@dataclass
class ReturnStats:
    source: int
    target: int
    f_seq: list
    f_star_partial: object
    m_partial: object
    escape_mass: object

    def to_dict(self):
        return {
            "source": self.source,
            "target": self.target,
            "f_star_partial": fmt(self.f_star_partial),
            "m_partial": None if self.m_partial is None else fmt(self.m_partial),
            "escape_mass": fmt(self.escape_mass),
            "nmax": len(self.f_seq),
        }

    def csv_rows(self):
        """n, value, bound: bound is the mass not yet accounted for after step n."""
        rows, acc = [], 0
        for n, f in enumerate(self.f_seq, 1):
            acc += f
            rows.append({"n": n, "value": fmt(f), "bound": fmt(1 - acc)})
        return rows


def first_passage_probs(trunc: TruncatedMatrix, i: int, j: int, nmax: int,
                        exact: bool = True) -> ReturnStats:
    """f_ij^(n) for n = 1..nmax by taboo recursion on the clipped rows.

    Mass leaving the cut is moved to an absorbing escape account, so every f value
    is a lower bound for the countable chain.
    """
    _check_state(trunc, i, j)
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    f_seq = []
    if exact:
        x = {i: Fraction(1)}
        escape = Fraction(0)
        for _ in range(nmax):
            y: dict[int, Fraction] = {}
            for k, m in x.items():
                for t, p in trunc.raw_rows[k - 1].items():
                    y[t] = y.get(t, Fraction(0)) + m * p
                escape += m * trunc.leakage[k - 1]
            f_seq.append(y.pop(j, Fraction(0)))
            x = y
        zero = Fraction(0)
    else:
        pt = trunc.csr(raw=True).T.tocsr()
        leak = np.array([float(v) for v in trunc.leakage])
        x = np.zeros(trunc.size)
        x[i - 1] = 1.0
        escape = 0.0
        for _ in range(nmax):
            escape += float(x @ leak)
            x = pt @ x
            f_seq.append(float(x[j - 1]))
            x[j - 1] = 0.0
        zero = 0.0
    f_star = sum(f_seq, zero)
    m = sum((n * f for n, f in enumerate(f_seq, 1)), zero) if i == j else None
    return ReturnStats(i, j, f_seq, f_star, m, escape)


def mean_return_time(trunc: TruncatedMatrix, i: int, nmax: int, exact: bool = False):
    """(partial sum of n f_ii^(n), 1/Pi_i from the closed form or None)."""
    stats = first_passage_probs(trunc, i, i, nmax, exact=exact)
    oracle = None
    if isinstance(trunc.family, Schweitzer):
        from .closed_form import closed_form_p
        oracle = 1 / closed_form_p(trunc.family.E, i)
    return stats.m_partial, oracle


# ---------------------------------------------------------------- graph structure

def _adjacency(trunc: TruncatedMatrix) -> sparse.csr_matrix:
    rows, cols = [], []
    for i, row in enumerate(trunc.raw_rows):
        for j, p in row.items():
            if p:
                rows.append(i)
                cols.append(j - 1)
    n = trunc.size
    return sparse.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))


def _components(adj):
    return csgraph.connected_components(adj, directed=True, connection="strong")


def _period_in_component(adj, labels, i0: int) -> int:
    comp = labels[i0]
    level = {i0: 0}
    queue = [i0]
    g = 0
    indptr, indices = adj.indptr, adj.indices
    for u in queue:
        for v in indices[indptr[u]:indptr[u + 1]]:
            if labels[v] != comp:
                continue
            if v in level:
                g = math.gcd(g, level[u] + 1 - level[v])
            else:
                level[v] = level[u] + 1
                queue.append(v)
    return abs(g)


def period_of(trunc: TruncatedMatrix, i: int) -> int:
    """gcd of closed-walk lengths through i, from BFS levels inside its strong component."""
    _check_state(trunc, i)
    adj = _adjacency(trunc)
    _, labels = _components(adj)
    d = _period_in_component(adj, labels, i - 1)
    if d == 0:
        raise NoReturn(f"no return within truncation: state {i} lies on no cycle")
    return d


@dataclass
class ChainDiagnostics:
    size: int
    irreducible: bool
    periods: dict[int, int | None]
    max_leakage: Fraction
    leak_mode: str
    components: int

    @property
    def aperiodic(self) -> bool:
        return all(d == 1 for d in self.periods.values())

    def to_dict(self):
        ds = set(self.periods.values())
        return {
            "size": self.size,
            "irreducible_on_truncation": self.irreducible,
            "aperiodic": self.aperiodic,
            "period": ds.pop() if len(ds) == 1 else {str(k): v for k, v in self.periods.items()},
            "components": self.components,
            "max_leakage": fmt(self.max_leakage),
            "leak_mode": self.leak_mode,
        }


def classify(trunc: TruncatedMatrix) -> ChainDiagnostics:
    adj = _adjacency(trunc)
    ncomp, labels = _components(adj)
    periods: dict[int, int | None] = {}
    by_comp: dict[int, int | None] = {}
    for i in range(trunc.size):
        c = labels[i]
        if c not in by_comp:
            by_comp[c] = _period_in_component(adj, labels, i) or None
        periods[i + 1] = by_comp[c]
    return ChainDiagnostics(trunc.size, ncomp == 1, periods, trunc.max_leakage, trunc.mode, ncomp)


def invariant_union_search(trunc: TruncatedMatrix) -> list[frozenset[int]]:
    """Forward closures of the strong components, excluding the whole index set.

    Every proper nonempty closed set contains one of these, so the list is empty
    exactly when the cut is irreducible.
    """
    adj = _adjacency(trunc)
    ncomp, labels = _components(adj)
    if ncomp == 1:
        return []
    members: dict[int, list[int]] = {}
    for i, c in enumerate(labels):
        members.setdefault(c, []).append(i)
    found = []
    seen = set()
    for c, nodes in sorted(members.items(), key=lambda kv: kv[1][0]):
        reach = csgraph.breadth_first_order(adj, nodes[0], directed=True, return_predecessors=False)
        s = frozenset(int(v) + 1 for v in reach)
        if len(s) < trunc.size and s not in seen:
            seen.add(s)
            found.append(s)
    return found


# ---------------------------------------------------------------- limits and stationary vectors

@dataclass
class PowerLimit:
    column: int
    limit: float
    spreads: list[float]
    converged_at: int
    row_cap: int

    def csv_rows(self):
        return [{"n": k, "value": s, "bound": ""} for k, s in enumerate(self.spreads, 1)]

    def to_dict(self):
        return {"column": self.column, "limit": self.limit, "converged_at": self.converged_at,
                "final_spread": self.spreads[-1], "row_cap": self.row_cap, "kmax": len(self.spreads)}


def power_limit(trunc: TruncatedMatrix, j: int, kmax: int = 200, tol: float = 1e-6,
                row_cap: int | None = None) -> PowerLimit:
    """Column j of P^k for k = 1..kmax; spread is max_i |p_ij^(k) - median_i p_ij^(k)| over i <= row_cap."""
    _check_state(trunc, j)
    diag = classify(trunc)
    if not diag.irreducible:
        raise ReducibleChain("power limit needs an irreducible truncation")
    if not diag.aperiodic:
        raise ValueError("power limit needs an aperiodic truncation")
    cap = trunc.size if row_cap is None else min(row_cap, trunc.size)
    p = trunc.csr()
    x = np.zeros(trunc.size)
    x[j - 1] = 1.0
    spreads = []
    converged = 0
    for k in range(1, kmax + 1):
        x = p @ x
        head = x[:cap]
        s = float(np.max(np.abs(head - np.median(head))))
        spreads.append(s)
        if not converged and s <= tol:
            converged = k
    if spreads[-1] > tol:
        raise NonConvergence(f"column {j} spread {spreads[-1]:.3g} > {tol} after {kmax} steps", spreads)
    return PowerLimit(j, float(np.median(x[:cap])), spreads, converged, cap)


@dataclass
class StationaryResult:
    pi: list
    residual: float
    method: str
    iterations: int
    leak_mode: str

    def to_dict(self):
        return {"pi": [fmt(v) for v in self.pi], "residual": self.residual, "method": self.method,
                "iterations": self.iterations, "leak_mode": self.leak_mode, "size": len(self.pi)}


def _residual(pi: np.ndarray, pt: sparse.csr_matrix) -> float:
    return float(np.abs(pi - pt @ pi).sum())


def _exact_direct(trunc: TruncatedMatrix) -> list[Fraction]:
    # Pi (I - P) = 0 with Pi_1 = 1: unknowns Pi_2..Pi_N, equations for columns 2..N
    n = trunc.size
    rows = trunc.rows
    a = [[Fraction(0)] * (n - 1) for _ in range(n - 1)]
    b = [Fraction(0)] * (n - 1)
    for col in range(2, n + 1):
        eq = col - 2
        a[eq][col - 2] += 1
        for i in range(1, n + 1):
            p = rows[i - 1].get(col)
            if not p:
                continue
            if i == 1:
                b[eq] += p
            else:
                a[eq][i - 2] -= p
    m = n - 1
    for c in range(m):
        piv = next(r for r in range(c, m) if a[r][c] != 0)
        a[c], a[piv] = a[piv], a[c]
        b[c], b[piv] = b[piv], b[c]
        inv = 1 / a[c][c]
        for r in range(m):
            if r != c and a[r][c]:
                factor = a[r][c] * inv
                row_c = a[c]
                row_r = a[r]
                for t in range(c, m):
                    if row_c[t]:
                        row_r[t] -= factor * row_c[t]
                b[r] -= factor * b[c]
    sol = [Fraction(1)] + [b[r] / a[r][r] for r in range(m)]
    total = sum(sol)
    return [v / total for v in sol]


def stationary_truncated(trunc: TruncatedMatrix, method: str = "power", tol: float = 1e-12,
                         max_iter: int = 1_000_000, exact: bool = False) -> StationaryResult:
    """Stationary vector of the renormalized cut, by power iteration from uniform or a direct solve."""
    if trunc.mode != "renorm":
        raise ValueError("stationary vectors need a renormalized truncation")
    if method not in ("power", "direct"):
        raise ValueError("method must be 'power' or 'direct'")
    if not classify(trunc).irreducible:
        raise ReducibleChain("truncated chain is reducible")
    pt = trunc.csr().T.tocsr()
    n = trunc.size
    if method == "direct":
        if exact:
            pi = _exact_direct(trunc)
            return StationaryResult(pi, _residual(np.array([float(v) for v in pi]), pt), "direct", 0, trunc.mode)
        m = (sparse.identity(n, format="csr") - pt).tolil()
        rhs = -m[1:, 0].toarray().ravel()
        sol = spsolve(m[1:, 1:].tocsc(), rhs)
        pi = np.concatenate(([1.0], np.atleast_1d(sol)))
        pi /= math.fsum(pi)
        return StationaryResult(pi.tolist(), _residual(pi, pt), "direct", 0, trunc.mode)
    if exact:
        raise ValueError("power iteration runs in floating point")
    v = np.full(n, 1.0 / n)
    history = []
    for k in range(1, max_iter + 1):
        nv = pt @ v
        nv /= nv.sum()
        change = float(np.abs(nv - v).sum())
        history.append(change)
        v = nv
        if change <= tol:
            v = v / math.fsum(v)
            return StationaryResult(v.tolist(), _residual(v, pt), "power", k, trunc.mode)
    raise NonConvergence(f"power iteration did not reach {tol} in {max_iter} steps", history)


# ---------------------------------------------------------------- exact verification

@dataclass(frozen=True)
class StationaryCandidate:
    """Exact candidate vector with a certified bound on the mass beyond any index."""

    value: Callable[[int], Fraction]
    range_sum: Callable[[int, int], Fraction]
    tail_bound: Callable[[int], Fraction] | None = None


def closed_form_candidate(E: int) -> StationaryCandidate:
    from .closed_form import tables
    t = tables(E)
    return StationaryCandidate(t.p, t.p_range_sum, t.tail_mass_bound)


def finite_candidate(values: dict[int, Fraction]) -> StationaryCandidate:
    vals = {int(k): Fraction(v) for k, v in values.items()}
    top = max(vals, default=0)

    def range_sum(lo, hi):
        return sum((v for k, v in vals.items() if lo <= k <= hi), Fraction(0))

    def tail(m):
        return range_sum(m + 1, top) if m < top else Fraction(0)

    return StationaryCandidate(lambda i: vals.get(i, Fraction(0)), range_sum, tail)


@dataclass
class VerificationReport:
    rows: list[dict] = field(default_factory=list)
    cutoff: int = 0

    @property
    def max_bound(self) -> Fraction:
        return max((r["bound"] for r in self.rows), default=Fraction(0))

    def to_dict(self):
        return {"cutoff": self.cutoff, "max_bound": float(self.max_bound),
                "rows": [{"j": r["j"], "candidate": fmt(r["candidate"]), "pushed": fmt(r["pushed"]),
                          "residual": float(r["residual"]), "tail": float(r["tail"]),
                          "bound": float(r["bound"])} for r in self.rows]}


def verify_stationary_candidate(family: MapFamily, candidate: StationaryCandidate, j_max: int,
                                tail_terms: int = 30) -> VerificationReport:
    """Certified bound on |(Pi P)_j - Pi_j| for j <= j_max.

    The sum over i is split into the first ``tail_terms`` blocks of cells with equal
    rows, each evaluated exactly as (block mass) * p_ij, and a tail bounded by the
    candidate's tail mass times the largest transition probability beyond the cutoff.
    """
    if candidate.tail_bound is None:
        raise ValueError("candidate has no registered tail bound")
    if j_max < 1 or tail_terms < 1:
        raise ValueError("j_max and tail_terms must be >= 1")
    if family.cell_count is not None:
        blocks = [(i, i) for i in range(1, family.cell_count + 1)]
    else:
        blocks = list(itertools.islice(family.blocks(1, 10 ** 400), tail_terms))
    cutoff = blocks[-1][1]
    if family.cell_count is not None:
        tail_p = Fraction(0)
    elif family.unit_cells:
        tail_p = 1 / family.min_abs_slope_from(cutoff + 1)
    else:
        raise NotImplementedError("tail bounds need unit cells for infinite partitions")
    tail = candidate.tail_bound(cutoff) * tail_p
    report = VerificationReport(cutoff=cutoff)
    for j in range(1, j_max + 1):
        pushed = Fraction(0)
        for u, w in blocks:
            a, b = family.cell(u).succ
            if a <= j <= b:
                p = transition_row(family, u)[j] if not family.unit_cells else 1 / abs(family.cell(u).slope)
                pushed += candidate.range_sum(u, w) * p
        cj = candidate.value(j)
        resid = abs(pushed - cj)
        report.rows.append({"j": j, "candidate": cj, "pushed": pushed, "residual": resid,
                            "tail": tail, "bound": resid + tail})
    return report
