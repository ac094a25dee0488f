import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plmarkov.chain import (
    classify,
    closed_form_candidate,
    finite_candidate,
    first_passage_probs,
    invariant_union_search,
    mean_return_time,
    period_of,
    power_limit,
    stationary_truncated,
    verify_stationary_candidate,
)
from plmarkov.closed_form import tables
from plmarkov.errors import NoReturn, NonConvergence, ReducibleChain
from plmarkov.interval_map import CustomMap, Savior, Schweitzer
from plmarkov.transfer import truncate

T4 = Schweitzer(4)
SAV = Savior()


def _custom(*cells):
    return CustomMap([{"lo": lo, "hi": hi, "slope": m, "intercept": b} for lo, hi, m, b in cells])


SWAP = _custom((0, 1, 1, 1), (1, 2, 1, -1))
IDENT2 = _custom((0, 1, 1, 0), (1, 2, 1, 0))
ONE = _custom((0, 1, 1, 0))
# cell 2 maps onto cell 1 but nothing returns to it
TRANSIENT = _custom((0, 1, 1, 0), (1, 2, 1, -1))


def test_first_passage_examples():
    t = truncate(T4, level=3)
    s = first_passage_probs(t, 1, 1, 2)
    assert s.f_seq == [F(1, 5), F(56, 425)]
    s = first_passage_probs(truncate(SWAP, size=2), 1, 1, 3)
    assert s.f_seq[0] == 0 and s.f_seq == [0, 1, 0]


def test_first_passage_bounds():
    t = truncate(T4, level=2)
    prev = F(0)
    for nmax in (1, 5, 20):
        s = first_passage_probs(t, 1, 1, nmax)
        assert s.f_star_partial + s.escape_mass <= 1
        assert s.f_star_partial >= prev
        prev = s.f_star_partial
    fl = first_passage_probs(t, 1, 3, 40, exact=False)
    ex = first_passage_probs(t, 1, 3, 40)
    assert fl.f_star_partial + fl.escape_mass <= 1 + 1e-12
    assert abs(fl.f_star_partial - float(ex.f_star_partial)) < 1e-12
    rows = ex.csv_rows()
    assert list(rows[0]) == ["n", "value", "bound"]


def test_return_probability_near_one():
    s = first_passage_probs(truncate(T4, level=4), 1, 1, 200, exact=False)
    assert s.f_star_partial >= 0.999


def test_mean_return_time_examples():
    m, oracle = mean_return_time(truncate(T4, level=4), 1, 1, exact=True)
    assert m == F(1, 5) and oracle == 8
    m, oracle = mean_return_time(truncate(T4, level=4), 1, 1000)
    assert 7.0 < m <= 8.0
    m, oracle = mean_return_time(truncate(ONE, size=1), 1, 50, exact=True)
    assert m == 1 and oracle is None


def test_mean_return_monotone():
    t = truncate(T4, level=3)
    vals = [mean_return_time(t, 2, n)[0] for n in (1, 10, 100, 300)]
    assert vals == sorted(vals)


def test_period_examples():
    assert period_of(truncate(T4, level=2), 1) == 1
    assert period_of(truncate(SAV, size=50), 13) == 1
    assert period_of(truncate(SWAP, size=2), 1) == 2
    with pytest.raises(NoReturn):
        period_of(truncate(TRANSIENT, size=2), 2)
    with pytest.raises(ValueError):
        period_of(truncate(T4, level=1), 9)


def test_period_divides_closed_walks():
    t = truncate(SWAP, size=2)
    p = t.dense()
    d = period_of(t, 1)
    for n in range(1, 12):
        if np.linalg.matrix_power(p, n)[0, 0] > 0:
            assert n % d == 0


def test_classify_examples():
    d = classify(truncate(T4, level=2))
    assert d.irreducible and d.aperiodic
    d = classify(truncate(SAV, size=100))
    assert d.irreducible and d.aperiodic
    assert d.to_dict()["period"] == 1
    d = classify(truncate(IDENT2, size=2))
    assert not d.irreducible


def test_invariant_union_examples():
    assert invariant_union_search(truncate(T4, level=2)) == []
    assert invariant_union_search(truncate(SAV, size=50)) == []
    assert invariant_union_search(truncate(IDENT2, size=2)) == [frozenset({1}), frozenset({2})]
    assert invariant_union_search(truncate(TRANSIENT, size=2)) == [frozenset({1})]


def test_power_limit_examples():
    t = truncate(T4, level=3)
    r = power_limit(t, 1, kmax=200, row_cap=20)
    assert r.spreads[-1] <= 1e-6
    assert r.limit == pytest.approx(1 / 8, abs=5e-3)
    r6 = power_limit(t, 6, kmax=200, row_cap=20)
    assert r6.limit == pytest.approx(1 / 40, abs=1e-3)
    one = power_limit(truncate(ONE, size=1), 1, kmax=1)
    assert one.limit == 1 and one.converged_at == 1


def test_power_limit_errors():
    with pytest.raises(NonConvergence) as exc:
        power_limit(truncate(T4, level=3), 1, kmax=2, row_cap=20)
    assert len(exc.value.history) == 2
    with pytest.raises(ReducibleChain):
        power_limit(truncate(IDENT2, size=2), 1)
    with pytest.raises(ValueError):
        power_limit(truncate(SWAP, size=2), 1)


def test_power_spread_eventually_monotone():
    r = power_limit(truncate(SAV, size=40), 1, kmax=400, tol=1e-3)
    tail = r.spreads[100:]
    assert all(b <= a + 1e-15 for a, b in zip(tail, tail[1:]))


def _renorm_closed(N):
    t = tables(4)
    z = t.p_range_sum(1, N)
    return np.array([float(t.p(i) / z) for i in range(1, N + 1)])


def test_stationary_truncated_schweitzer():
    for L, tol in ((3, 2e-2), (4, 1e-3)):
        tr = truncate(T4, level=L)
        res = stationary_truncated(tr, method="power", tol=1e-13)
        assert np.abs(np.array(res.pi) - _renorm_closed(tr.size)).sum() <= tol
        assert abs(math.fsum(res.pi) - 1) <= 1e-14


def test_stationary_exact_direct_is_renormalized_closed_form():
    # the renormalized cut is the chain watched only on retained states
    tr = truncate(T4, level=2)
    res = stationary_truncated(tr, method="direct", exact=True)
    t = tables(4)
    z = t.p_range_sum(1, tr.size)
    assert res.pi == [t.p(i) / z for i in range(1, tr.size + 1)]
    assert sum(res.pi) == 1


def test_stationary_savior_methods_agree():
    tr = truncate(SAV, size=100)
    a = stationary_truncated(tr, method="power", tol=1e-13)
    b = stationary_truncated(tr, method="direct")
    assert a.residual <= 1e-10 and b.residual <= 1e-10
    assert np.abs(np.array(a.pi) - np.array(b.pi)).max() <= 1e-8


def test_stationary_errors():
    with pytest.raises(ValueError):
        stationary_truncated(truncate(T4, level=2, mode="absorb"))
    with pytest.raises(ReducibleChain):
        stationary_truncated(truncate(IDENT2, size=2))
    with pytest.raises(NonConvergence):
        stationary_truncated(truncate(SAV, size=100), tol=1e-15, max_iter=3)


def test_verify_examples():
    rep = verify_stationary_candidate(T4, closed_form_candidate(4), 1, tail_terms=30)
    assert rep.max_bound <= F(1, 10 ** 12)
    rep = verify_stationary_candidate(Schweitzer(2), closed_form_candidate(2), 5)
    assert rep.max_bound <= F(1, 10 ** 12)
    uni = finite_candidate({i: F(1, 10) for i in range(1, 11)})
    rep = verify_stationary_candidate(T4, uni, 5)
    assert max(r["residual"] for r in rep.rows) > 0


def test_verify_needs_tail_bound():
    from plmarkov.chain import StationaryCandidate
    t = tables(4)
    with pytest.raises(ValueError):
        verify_stationary_candidate(T4, StationaryCandidate(t.p, t.p_range_sum), 3)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 5), st.integers(1, 30))
def test_verify_closed_form_any_E(E, j):
    rep = verify_stationary_candidate(Schweitzer(E), closed_form_candidate(E), j, tail_terms=20)
    # only the mass past the cutoff is unaccounted for
    assert rep.rows[-1]["residual"] <= rep.rows[-1]["tail"]
    assert rep.max_bound <= F(1, 10 ** 12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 17), st.integers(1, 17), st.integers(1, 30))
def test_first_passage_partial_sums_monotone(i, j, n):
    t = truncate(T4, level=2)
    a = first_passage_probs(t, i, j, n)
    b = first_passage_probs(t, i, j, n + 1)
    assert a.f_seq == b.f_seq[:-1]
    assert a.f_star_partial <= b.f_star_partial
    assert b.f_star_partial + b.escape_mass <= 1
