"""Dense univariate polynomials with SeriesElement coefficients.

Coefficients are indexed by degree; trailing exact zeros are trimmed.  The
only division ever needed is by a monic divisor, so no coefficient is ever
inverted here.
"""

from __future__ import annotations

from fractions import Fraction

from .arith import PrimeContext
from .series import SeriesElement, from_rational, one, zero

__all__ = ["PolyOverK"]


class PolyOverK:
    """Polynomial in one indeterminate over the series field."""

    __slots__ = ("ctx", "coeffs")

    def __init__(self, ctx: PrimeContext, coeffs: list[SeriesElement]):
        self.ctx = ctx
        while coeffs and coeffs[-1].is_exact_zero():
            coeffs = coeffs[:-1]
        self.coeffs = tuple(coeffs)

    @classmethod
    def from_rationals(cls, ctx: PrimeContext, coeffs: list[Fraction | int]) -> "PolyOverK":
        return cls(ctx, [from_rational(ctx, Fraction(c)) for c in coeffs])

    @classmethod
    def variable(cls, ctx: PrimeContext) -> "PolyOverK":
        return cls(ctx, [zero(ctx), one(ctx)])

    @property
    def degree(self) -> int:
        """Degree, with -1 for the zero polynomial."""
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def coeff(self, i: int) -> SeriesElement:
        if 0 <= i < len(self.coeffs):
            return self.coeffs[i]
        return zero(self.ctx)

    def is_monic(self) -> bool:
        if self.is_zero():
            return False
        lead = self.coeffs[-1]
        return lead == one(self.ctx)

    def __add__(self, other: "PolyOverK") -> "PolyOverK":
        n = max(len(self.coeffs), len(other.coeffs))
        return PolyOverK(self.ctx, [self.coeff(i) + other.coeff(i) for i in range(n)])

    def __sub__(self, other: "PolyOverK") -> "PolyOverK":
        n = max(len(self.coeffs), len(other.coeffs))
        return PolyOverK(self.ctx, [self.coeff(i) - other.coeff(i) for i in range(n)])

    def __neg__(self) -> "PolyOverK":
        return PolyOverK(self.ctx, [-c for c in self.coeffs])

    def __mul__(self, other: "PolyOverK") -> "PolyOverK":
        if self.is_zero() or other.is_zero():
            return PolyOverK(self.ctx, [])
        out = [zero(self.ctx)] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            if a.is_exact_zero():
                continue
            for j, b in enumerate(other.coeffs):
                if b.is_exact_zero():
                    continue
                out[i + j] = out[i + j] + a * b
        return PolyOverK(self.ctx, out)

    def scale(self, c: SeriesElement) -> "PolyOverK":
        return PolyOverK(self.ctx, [a * c for a in self.coeffs])

    def __pow__(self, n: int) -> "PolyOverK":
        if n < 0:
            raise ValueError("negative polynomial powers are not defined")
        result = PolyOverK(self.ctx, [one(self.ctx)])
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def quo_rem(self, divisor: "PolyOverK") -> tuple["PolyOverK", "PolyOverK"]:
        """Euclidean division by a monic divisor."""
        if not divisor.is_monic():
            raise ValueError("division requires a monic divisor")
        d = divisor.degree
        rem = list(self.coeffs)
        if len(rem) <= d:
            return PolyOverK(self.ctx, []), self
        quo = [zero(self.ctx)] * (len(rem) - d)
        for i in range(len(rem) - 1, d - 1, -1):
            c = rem[i]
            if c.is_exact_zero():
                continue
            quo[i - d] = c
            for k in range(d):
                g = divisor.coeffs[k]
                if not g.is_exact_zero():
                    rem[i - d + k] = rem[i - d + k] - c * g
            rem[i] = zero(self.ctx)
        return PolyOverK(self.ctx, quo), PolyOverK(self.ctx, rem)

    def evaluate(self, x: SeriesElement) -> SeriesElement:
        """Horner evaluation."""
        acc = zero(self.ctx)
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyOverK):
            return NotImplemented
        return self.ctx == other.ctx and self.coeffs == other.coeffs

    def __hash__(self) -> int:  # pragma: no cover
        return hash((self.ctx.p, self.coeffs))

    def __repr__(self) -> str:
        if self.is_zero():
            return "PolyOverK(0)"
        parts = []
        for i, c in enumerate(self.coeffs):
            if c.is_exact_zero():
                continue
            parts.append(f"({c!r})*T^{i}" if i else f"({c!r})")
        return "PolyOverK(" + " + ".join(parts) + ")"
