"""Exact arithmetic ground layer: F_{p^2}, truncated Witt coefficients, helpers.

The coefficient ring used everywhere else in the package is the ring of
integers of the unramified quadratic extension of Q_p, known modulo p^L.
We realise its residue field as F_p[s]/(s^2 - nu) for the smallest
quadratic non-residue nu mod p, and lift coefficients to pairs
(a + b*s) mod p^L with the same defining relation.  Any monic lift of an
irreducible quadratic gives the same ring up to isomorphism, so the naive
lift s^2 = nu is as good as any and keeps multiplication a 3-line formula.

Exponents of series live in Q and are represented by fractions.Fraction
throughout the package; no floating point enters any computation.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

from .errors import DenominatorDivisibleByP

__all__ = [
    "Fp2",
    "PrimeContext",
    "UnramifiedCoeff",
    "teichmueller",
    "harmonic",
    "embed_rational",
    "bezout",
]


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def _smallest_nonresidue(p: int) -> int:
    # p odd, so a non-residue exists below p.
    residues = {pow(a, 2, p) for a in range(1, p)}
    for nu in range(2, p):
        if nu not in residues:
            return nu
    raise ValueError(f"no quadratic non-residue below {p}")


class Fp2:
    """Element a + b*s of F_{p^2} with s^2 = nu (nu a fixed non-residue)."""

    __slots__ = ("p", "nu", "a", "b")

    def __init__(self, p: int, nu: int, a: int, b: int = 0):
        self.p = p
        self.nu = nu
        self.a = a % p
        self.b = b % p

    def _like(self, a: int, b: int) -> "Fp2":
        return Fp2(self.p, self.nu, a, b)

    def __add__(self, other: "Fp2") -> "Fp2":
        return self._like(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "Fp2") -> "Fp2":
        return self._like(self.a - other.a, self.b - other.b)

    def __neg__(self) -> "Fp2":
        return self._like(-self.a, -self.b)

    def __mul__(self, other: "Fp2") -> "Fp2":
        return self._like(
            self.a * other.a + self.nu * self.b * other.b,
            self.a * other.b + self.b * other.a,
        )

    def __pow__(self, n: int) -> "Fp2":
        if n < 0:
            return self.inverse() ** (-n)
        result = self._like(1, 0)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def inverse(self) -> "Fp2":
        # (a + bs)^-1 = (a - bs) / (a^2 - nu b^2); the norm is in F_p^*.
        norm = (self.a * self.a - self.nu * self.b * self.b) % self.p
        if norm == 0:
            raise ZeroDivisionError("inverse of 0 in F_{p^2}")
        inv = pow(norm, -1, self.p)
        return self._like(self.a * inv, -self.b * inv)

    def is_zero(self) -> bool:
        return self.a == 0 and self.b == 0

    def in_prime_field(self) -> bool:
        return self.b == 0

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Fp2)
            and self.p == other.p
            and self.a == other.a
            and self.b == other.b
        )

    def __hash__(self) -> int:
        return hash((self.p, self.a, self.b))

    def __repr__(self) -> str:
        if self.b == 0:
            return f"Fp2({self.a} mod {self.p})"
        return f"Fp2({self.a}+{self.b}s mod {self.p})"


def multiplicative_order(x: Fp2, bound: int) -> int:
    """Order of x in F_{p^2}^*, searched up to `bound`."""
    acc = x
    for k in range(1, bound + 1):
        if acc.a == 1 and acc.b == 0:
            return k
        acc = acc * x
    raise ValueError("order exceeds bound")


class PrimeContext:
    """Fixes the prime p, the model of F_{p^2} and the working precision.

    `generator_2p2` is an element of F_{p^2}^* of exact multiplicative
    order 2(p-1); its Teichmueller lift is the root of unity zeta_{2(p-1)}
    appearing in all expansion formulas.  The search order over F_{p^2} is
    a fixed enumeration, so two contexts for the same p are identical and
    serialized data can be re-read without shipping the model.
    """

    __slots__ = ("p", "q", "nu", "generator_2p2", "working_digits")

    def __init__(self, p: int, working_digits: int = 24):
        if p < 3 or not _is_prime(p):
            raise ValueError(f"p must be an odd prime >= 3, got {p}")
        if working_digits < 1:
            raise ValueError("working_digits must be >= 1")
        self.p = p
        self.q = p * p
        self.nu = _smallest_nonresidue(p)
        self.working_digits = working_digits
        self.generator_2p2 = self._find_generator_2p2()

    def _find_generator_2p2(self) -> Fp2:
        target = 2 * (self.p - 1)
        cofactor = (self.q - 1) // target
        for b in range(self.p):
            for a in range(self.p):
                h = Fp2(self.p, self.nu, a, b)
                if h.is_zero():
                    continue
                g = h ** cofactor
                # exact order 2(p-1): kills the full cofactor and is not
                # already trivial at half the order
                if (g ** target).a == 1 and (g ** target).b == 0:
                    if not ((g ** (self.p - 1)).a == 1 and (g ** (self.p - 1)).b == 0):
                        if multiplicative_order(g, target) == target:
                            return g
        raise ValueError("no element of order 2(p-1) found")  # pragma: no cover

    def fp2(self, a: int, b: int = 0) -> Fp2:
        return Fp2(self.p, self.nu, a, b)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrimeContext) and self.p == other.p

    def __hash__(self) -> int:
        return hash(("PrimeContext", self.p))

    def __repr__(self) -> str:
        return f"PrimeContext(p={self.p}, working_digits={self.working_digits})"


@lru_cache(maxsize=None)
def context(p: int, working_digits: int = 24) -> PrimeContext:
    """Memoized PrimeContext constructor (contexts are immutable)."""
    return PrimeContext(p, working_digits)


class UnramifiedCoeff:
    """Element a + b*s of W(F_{p^2}) truncated: known modulo p^L, L >= 1.

    Arithmetic takes the min of the operand precisions and never raises it;
    `shift_down` divides by an exact power of p, giving up that many digits.
    """

    __slots__ = ("p", "nu", "a", "b", "L")

    def __init__(self, p: int, nu: int, a: int, b: int, L: int):
        if L < 1:
            raise ValueError("coefficient precision must be >= 1")
        self.p = p
        self.nu = nu
        self.L = L
        mod = p ** L
        self.a = a % mod
        self.b = b % mod

    def _like(self, a: int, b: int, L: int) -> "UnramifiedCoeff":
        return UnramifiedCoeff(self.p, self.nu, a, b, L)

    def __add__(self, other: "UnramifiedCoeff") -> "UnramifiedCoeff":
        L = min(self.L, other.L)
        return self._like(self.a + other.a, self.b + other.b, L)

    def __sub__(self, other: "UnramifiedCoeff") -> "UnramifiedCoeff":
        L = min(self.L, other.L)
        return self._like(self.a - other.a, self.b - other.b, L)

    def __neg__(self) -> "UnramifiedCoeff":
        return self._like(-self.a, -self.b, self.L)

    def __mul__(self, other: "UnramifiedCoeff") -> "UnramifiedCoeff":
        L = min(self.L, other.L)
        return self._like(
            self.a * other.a + self.nu * self.b * other.b,
            self.a * other.b + self.b * other.a,
            L,
        )

    def __pow__(self, n: int) -> "UnramifiedCoeff":
        if n < 0:
            return self.inverse() ** (-n)
        result = self._like(1, 0, self.L)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def inverse(self) -> "UnramifiedCoeff":
        mod = self.p ** self.L
        norm = (self.a * self.a - self.nu * self.b * self.b) % mod
        if norm % self.p == 0:
            raise ZeroDivisionError("coefficient is not a unit")
        inv = pow(norm, -1, mod)
        return self._like(self.a * inv, -self.b * inv, self.L)

    def is_zero(self) -> bool:
        """True when every known digit vanishes."""
        return self.a == 0 and self.b == 0

    def is_unit(self) -> bool:
        return self.a % self.p != 0 or self.b % self.p != 0

    def p_valuation(self) -> int:
        """Largest t <= L with p^t dividing both components (t = L for 0)."""
        if self.is_zero():
            return self.L
        t = 0
        a, b = self.a, self.b
        while a % self.p == 0 and b % self.p == 0:
            a //= self.p
            b //= self.p
            t += 1
        return t

    def shift_down(self, t: int) -> "UnramifiedCoeff":
        """Exact division by p^t; costs t digits of precision."""
        if t == 0:
            return self
        pt = self.p ** t
        if self.a % pt or self.b % pt:
            raise ValueError("coefficient not divisible by p^t")
        if self.L - t < 1:
            raise ValueError("shift_down exhausts the coefficient precision")
        return self._like(self.a // pt, self.b // pt, self.L - t)

    def reduce(self, L: int) -> "UnramifiedCoeff":
        """Forget digits beyond L (L <= current precision)."""
        if L > self.L:
            raise ValueError("cannot raise coefficient precision")
        return self._like(self.a, self.b, L)

    def residue(self) -> Fp2:
        return Fp2(self.p, self.nu, self.a % self.p, self.b % self.p)

    def congruent(self, other: "UnramifiedCoeff", L: int | None = None) -> bool:
        if L is None:
            L = min(self.L, other.L)
        mod = self.p ** L
        return (self.a - other.a) % mod == 0 and (self.b - other.b) % mod == 0

    def digits(self) -> list[int]:
        """Base-p digit vector, each entry packing (a_i + p*b_i) in [0, p^2)."""
        out = []
        a, b = self.a, self.b
        for _ in range(self.L):
            a, ra = divmod(a, self.p)
            b, rb = divmod(b, self.p)
            out.append(ra + self.p * rb)
        return out

    @classmethod
    def from_digits(cls, p: int, nu: int, digits: list[int], L: int) -> "UnramifiedCoeff":
        a = b = 0
        for i, d in enumerate(digits):
            da, db = d % p, d // p
            a += da * p ** i
            b += db * p ** i
        return cls(p, nu, a, b, L)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, UnramifiedCoeff)
            and self.p == other.p
            and self.L == other.L
            and self.a == other.a
            and self.b == other.b
        )

    def __hash__(self) -> int:
        return hash((self.p, self.L, self.a, self.b))

    def __repr__(self) -> str:
        if self.b == 0:
            return f"UnramifiedCoeff({self.a} mod {self.p}^{self.L})"
        return f"UnramifiedCoeff({self.a}+{self.b}s mod {self.p}^{self.L})"


def teichmueller(ctx: PrimeContext, u: Fp2 | int, L: int | None = None) -> UnramifiedCoeff:
    """Teichmueller lift of u in F_{p^2} to precision L.

    Iterates x -> x^q to its fixpoint.
    """
    if L is None:
        L = ctx.working_digits
    if isinstance(u, int):
        u = ctx.fp2(u)
    x = UnramifiedCoeff(ctx.p, ctx.nu, u.a, u.b, L)
    if u.is_zero():
        return x
    # each pass gains v_p(q) = 2 digits, so L passes always reach the fixpoint
    for _ in range(L + 2):
        nxt = x ** ctx.q
        if nxt == x:
            break
        x = nxt
    return x


def harmonic(k: int) -> Fraction:
    """k-th harmonic number 1 + 1/2 + ... + 1/k, exactly."""
    if k < 1:
        raise ValueError("harmonic expects k >= 1")
    return sum((Fraction(1, i) for i in range(1, k + 1)), Fraction(0))


def embed_rational(ctx: PrimeContext, r: Fraction | int, L: int | None = None) -> UnramifiedCoeff:
    """Image of a rational with p-free denominator in W(F_{p^2})/p^L."""
    if L is None:
        L = ctx.working_digits
    r = Fraction(r)
    if r.denominator % ctx.p == 0:
        raise DenominatorDivisibleByP(f"denominator of {r} is divisible by {ctx.p}")
    mod = ctx.p ** L
    value = r.numerator * pow(r.denominator, -1, mod) % mod
    return UnramifiedCoeff(ctx.p, ctx.nu, value, 0, L)


def bezout(a: int, b: int) -> tuple[int, int, int]:
    """Extended gcd: returns (x, y, g) with a*x + b*y = g = gcd(a, b).

    Normalized so that 0 <= y < a/g whenever a > 0, which pins a unique
    representative among the solution line.
    """
    if a == 0 and b == 0:
        raise ValueError("bezout(0, 0) is undefined")
    old_r, r = a, b
    old_x, x = 1, 0
    old_y, y = 0, 1
    while r != 0:
        quot = old_r // r
        old_r, r = r, old_r - quot * r
        old_x, x = x, old_x - quot * x
        old_y, y = y, old_y - quot * y
    g, gx, gy = old_r, old_x, old_y
    if g < 0:
        g, gx, gy = -g, -gx, -gy
    if a > 0:
        step = a // g
        shift = gy % step
        gy = shift
        gx = (g - b * gy) // a
    return gx, gy, g
