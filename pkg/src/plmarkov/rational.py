"""Parsing and formatting of exact rationals used in JSON/CSV surfaces."""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational


def parse_rational(value) -> Fraction:
    """Accept "p/q", a decimal string, or an int. Floats are refused."""
    if isinstance(value, bool):
        raise ValueError(f"not a rational: {value!r}")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational: {value!r}") from exc
    raise ValueError(f"rationals must be strings or ints, got {type(value).__name__}")


def fmt(value) -> str:
    """Rational string for Fractions, repr-exact string for floats."""
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def is_exact(value) -> bool:
    return isinstance(value, Rational) and not isinstance(value, bool)


def numeric_kind(values) -> str:
    """Return "exact" or "float" for a collection; mixing the two is an error."""
    kinds = {"exact" if is_exact(v) else "float" for v in values}
    if len(kinds) > 1:
        raise TypeError("mixed exact and floating values are not coerced")
    return kinds.pop() if kinds else "exact"
