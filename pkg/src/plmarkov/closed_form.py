"""Exact stationary objects of the Schweitzer family T_E and its step chain.

The cells of T_E group into steps: step 1 holds cells 1..E and step n >= 2 holds
cells E**(n-1)+1..E**n. All cells of one step share a transition row, which makes
the cell chain lumpable onto the step chain S.
"""

from __future__ import annotations

import threading
from fractions import Fraction
from functools import lru_cache

from .interval_map import ell

__all__ = [
    "ClosedFormTables",
    "a_coeff",
    "c8_aggregation_check",
    "closed_form_p",
    "closed_form_q",
    "ell",
    "lambda_step",
    "lump",
    "p_block",
    "step_matrix_row",
    "step_set",
    "tables",
]


def lambda_step(k: int, E: int) -> Fraction:
    """Length of the k-th step: E for k = 1, (E-1)*E**(k-1) after that."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Fraction(E) if k == 1 else Fraction((E - 1) * E ** (k - 1))


def step_set(n: int, E: int) -> tuple[int, int]:
    """Inclusive cell-index range of step n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (1, E) if n == 1 else (E ** (n - 1) + 1, E ** n)


def p_block(n: int, E: int) -> tuple[int, int]:
    """Inclusive cell-index range on which the stationary vector is constant."""
    return (1, E + 1) if n == 1 else (E ** (n - 1) + 2, E ** n + 1)


def step_matrix_row(E: int, i: int) -> dict[int, Fraction]:
    if i < 1:
        raise ValueError("i must be >= 1")
    d = E ** i + 1
    row = {j: lambda_step(j, E) / d for j in range(1, i + 1)}
    row[i + 1] = Fraction(1, d)
    return row


class ClosedFormTables:
    """Memoized exact tables for one E; indices grow lazily and reads are lock-free."""

    def __init__(self, E: int):
        if int(E) != E or E < 2:
            raise ValueError("E must be an integer >= 2")
        self.E = int(E)
        self._q = [Fraction(1, 2)]
        self._lock = threading.Lock()

    def q(self, n: int) -> Fraction:
        if n < 1:
            raise ValueError("n must be >= 1")
        if n > len(self._q):
            with self._lock:
                E, q = self.E, self._q
                while len(q) < n:
                    k = len(q)
                    q.append(q[-1] * E / (E ** k + 1))
        return self._q[n - 1]

    def a(self, n: int) -> Fraction:
        return self.q(n) * 2

    def Lambda(self, k: int) -> Fraction:
        return lambda_step(k, self.E)

    def p(self, k: int) -> Fraction:
        if k < 1:
            raise ValueError("k must be >= 1")
        E = self.E
        if k <= E + 1:
            return Fraction(1, 2 * E)
        n = ell(k - 1, E)
        return self.q(n) / E ** n

    def p_range_sum(self, lo: int, hi: int) -> Fraction:
        """Exact sum of p_k over lo <= k <= hi, one term per constant block."""
        total = Fraction(0)
        k = max(lo, 1)
        while k <= hi:
            n = 1 if k <= self.E + 1 else ell(k - 1, self.E)
            end = min(hi, p_block(n, self.E)[1])
            total += (end - k + 1) * self.p(k)
            k = end + 1
        return total

    def q_tail_bound(self, n: int) -> Fraction:
        """Upper bound on sum of q_m over m >= n, from q_{m+1} <= q_m * E**(1-m)."""
        if n <= 1:
            return Fraction(1)
        ratio = Fraction(1, self.E ** (n - 1))
        return self.q(n) / (1 - ratio)

    def tail_mass_bound(self, m: int) -> Fraction:
        """Upper bound on sum of p_i over i > m."""
        if m < 1:
            return Fraction(1)
        n = ell(m + 1, self.E)
        return self.p_range_sum(m + 1, self.E ** n) + self.q_tail_bound(n + 1)


@lru_cache(maxsize=None)
def tables(E: int) -> ClosedFormTables:
    return ClosedFormTables(E)


def closed_form_q(E: int, n: int) -> list[Fraction]:
    t = tables(E)
    return [t.q(k) for k in range(1, n + 1)]


def closed_form_p(E: int, k: int) -> Fraction:
    return tables(E).p(k)


def a_coeff(E: int, n: int) -> Fraction:
    return tables(E).a(n)


def _range_sum(v, lo: int, hi: int) -> Fraction:
    if hasattr(v, "range_sum"):
        return v.range_sum(lo, hi)
    if callable(v):
        return sum((v(i) for i in range(lo, hi + 1)), Fraction(0))
    return sum((v.get(i, 0) for i in range(lo, hi + 1)), Fraction(0))


def lump(v, E: int, n: int) -> Fraction:
    """Mass of the coefficient view v on step n.

    v may be anything with ``range_sum(lo, hi)``, a callable index -> value, or a
    mapping index -> value.
    """
    lo, hi = step_set(n, E)
    return _range_sum(v, lo, hi)


def c8_aggregation_check(E: int, i: int, n: int) -> bool:
    """Row i of the cell chain summed over step n equals entry (ell(i), n) of S."""
    from .interval_map import Schweitzer
    from .transfer import transition_row

    row = transition_row(Schweitzer(E), i)
    lo, hi = step_set(n, E)
    lhs = sum((v for j, v in row.items() if lo <= j <= hi), Fraction(0))
    rhs = step_matrix_row(E, ell(i, E)).get(n, Fraction(0))
    return lhs == rhs
