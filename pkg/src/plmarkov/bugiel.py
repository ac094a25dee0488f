"""The u_r lower-bound functional evaluated on the savior map.

For an r-symbol label k = (k_0, ..., k_{r-1}) the function

    g_k(x) = sum over s of  1[x in J_s] * len(I_s & J_k) / (len(J_s) * len(J_k)),

with J_k = f(I_{k_{r-1}}), is supported on f^{r+1}(I_{k_{r-1}}). u_r(x) is the
infimum of g_k(x) over nonempty labels, so a label whose support misses x
certifies u_r(x) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .interval_map import Savior
from .rational import fmt, parse_rational

__all__ = ["BugielResult", "bugiel_u_r", "g_value", "support_after", "witness_threshold"]

_SAVIOR = Savior()


def witness_threshold(r: int, x) -> int:
    """k_{r-1} must exceed this value."""
    return math.ceil(x) + 2 * r + 4


def support_after(k: int, steps: int, family=_SAVIOR) -> tuple[Fraction, Fraction]:
    """Interval f^steps(I_k), iterating successor ranges (images are unions of cells)."""
    a = b = k
    for _ in range(steps):
        succs = [family.cell(t).succ for t in range(a, b + 1)]
        a, b = min(s[0] for s in succs), max(s[1] for s in succs)
    return family.cell(a).lo, family.cell(b).hi


def g_value(r: int, last: int, x, family=_SAVIOR) -> Fraction:
    """g_k(x) for any nonempty label whose last symbol is ``last``; exact.

    Only labels s with s_0 in succ(last) meet J_k, and then I_s lies inside J_k.
    """
    x = Fraction(x)
    a, b = family.cell(last).succ
    jk = family.range_length(a, b)
    # paths s_0 .. s_{r-1}: measure of I_s is len(cell s_{r-1}) / prod of slopes before it
    weights = {s: Fraction(1) for s in range(a, b + 1)}
    for _ in range(r - 1):
        nxt: dict[int, Fraction] = {}
        for s, w in weights.items():
            c = family.cell(s)
            lo, hi = c.succ
            for t in range(lo, hi + 1):
                nxt[t] = nxt.get(t, Fraction(0)) + w / abs(c.slope)
        weights = nxt
    total = Fraction(0)
    for s, w in weights.items():
        c = family.cell(s)
        lo, hi = c.image
        if lo <= x <= hi:
            total += w * c.length / ((hi - lo) * jk)
    return total


@dataclass(frozen=True)
class BugielResult:
    r: int
    x: Fraction
    value: Fraction
    witness: tuple[int, ...] | None
    support: tuple[Fraction, Fraction] | None
    threshold: int
    search_bound: int

    @property
    def satisfies_rule(self) -> bool:
        return self.witness is not None and self.witness[-1] > self.threshold

    def to_dict(self):
        return {
            "r": self.r,
            "x": fmt(self.x),
            "value": fmt(self.value),
            "witness": None if self.witness is None else list(self.witness),
            "support": None if self.support is None else [fmt(v) for v in self.support],
            "threshold": self.threshold,
            "satisfies_rule": self.satisfies_rule,
            "search_bound": self.search_bound,
        }


def bugiel_u_r(r: int, x, search_bound: int | None = None, require_rule: bool = True) -> BugielResult:
    """u_r(x) on the savior map: 0 with a witness label, or the smallest g found.

    With ``require_rule`` the search only accepts last symbols above the threshold
    ceil(x) + 2r + 4, and a search bound that cannot reach past it is an error.
    """
    if r < 2:
        raise ValueError("r must be >= 2")
    x = parse_rational(x) if isinstance(x, str) else Fraction(x)
    if x < 0:
        raise ValueError("x must be >= 0")
    thr = witness_threshold(r, x)
    if search_bound is None:
        search_bound = thr + 1
    if require_rule and search_bound <= thr:
        raise ValueError(
            f"search bound {search_bound} does not exceed the witness threshold {thr}; "
            f"use at least ceil(x) + 2r + 5 = {thr + 1}")
    start = thr + 1 if require_rule else 1
    for k in range(start, search_bound + 1):
        lo, hi = support_after(k, r + 1)
        if not lo <= x <= hi:
            # k sits in its own successor range, so (k, ..., k) is a nonempty label
            return BugielResult(r, x, Fraction(0), (k,) * r, (lo, hi), thr, search_bound)
    best = min(g_value(r, k, x) for k in range(1, search_bound + 1))
    return BugielResult(r, x, best, None, None, thr, search_bound)
