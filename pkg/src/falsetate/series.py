"""Truncated series with rational exponents and symbolic tail sums.

An element is a finite sum of terms ``c * p^x * sigma_K^j`` together with a
precision marker ``O(p^r)``, where

* ``c`` is an UnramifiedCoeff (unit by normalization: powers of p are
  absorbed into the exponent ``x``),
* ``x`` is an exact rational exponent,
* ``sigma_K`` denotes the tail sum ``sum_{k>=K} p^(-1/p^k)``, kept symbolic
  because its digit expansion has infinite support accumulating at 0 from
  below.  A single element uses a single tail index K; the rewrite rule
  ``sigma_K = p^(-1/p^K) + ... + p^(-1/p^(K'-1)) + sigma_K'`` raises K when
  two elements must be aligned.

The leading digit of ``sigma_K^j`` is ``p^(-j/p^K)``, so a term's valuation
is ``x - j/p^K``; terms whose valuation is at or above the precision marker
are dropped.  Precision bookkeeping is fixed once and for all:

* addition:        r = min(r_a, r_b)
* multiplication:  r = min(r_a + v(b), r_b + v(a))
* inversion:       relative precision is preserved (r' <= r - 2 v(a))
* integer powers:  r' <= s*v(a) + (r - v(a)), via truncated binary powering

``precision is None`` marks an element that is exactly the finite sum shown
(up to the digit precision of its coefficients); ``effective_precision``
folds the coefficient precision back in, and every modular comparison goes
through it, so a claim ``equal_mod(a, b, r)`` is never made beyond what the
stored digits actually determine.
"""

from __future__ import annotations

import json
from fractions import Fraction
from heapq import heappush, heappop

from .arith import PrimeContext, UnramifiedCoeff, Fp2, context, embed_rational, teichmueller
from .errors import AmbiguousLeading, PrecisionLoss, WindowBeyondAccumulation

__all__ = ["SeriesElement", "monomial", "from_rational", "zero", "one", "sigma"]

# dict-convolution cost above which multiplication switches to the dense
# integer-convolution path (exactness is unaffected; see _mul_dense)
_DENSE_THRESHOLD = 20000
_DENSE_CELL_LIMIT = 6_000_000


def _coeff_int(ctx: PrimeContext, n: int, L: int) -> UnramifiedCoeff:
    return UnramifiedCoeff(ctx.p, ctx.nu, n, 0, L)


class SeriesElement:
    """Immutable truncated expansion over a fixed PrimeContext.

    Do not mutate ``terms`` after construction; all operations return new
    elements, so instances are safe to share between threads.
    """

    __slots__ = ("ctx", "sigma_index", "terms", "precision")

    def __init__(
        self,
        ctx: PrimeContext,
        terms: dict[tuple[Fraction, int], UnramifiedCoeff],
        precision: Fraction | None,
        sigma_index: int | None = None,
    ):
        self.ctx = ctx
        normalized, precision, index = _normalize(ctx, terms, precision, sigma_index)
        self.terms = normalized
        self.precision = precision
        self.sigma_index = index

    # ------------------------------------------------------------------
    # basic inspection

    def term_valuation(self, key: tuple[Fraction, int]) -> Fraction:
        x, j = key
        if j == 0:
            return x
        return x - Fraction(j, self.ctx.p ** self.sigma_index)

    def is_exact_zero(self) -> bool:
        return self.precision is None and not self.terms

    def _val_lower(self) -> Fraction | None:
        """Lower bound for the valuation; None means +infinity (exact 0)."""
        if self.terms:
            return min(self.term_valuation(k) for k in self.terms)
        return self.precision

    def valuation(self) -> Fraction:
        """Exact valuation: min term valuation, guarded against hidden ties.

        Distinct (x, j) terms can share a valuation only through the tail
        symbol; if their residues cancel at the shared leading exponent the
        true valuation is larger and we refuse to answer.
        """
        v, _ = self.leading()
        return v

    def leading(self) -> tuple[Fraction, Fp2]:
        """Valuation together with the leading canonical digit (residue)."""
        if not self.terms:
            if self.precision is None:
                raise ValueError("valuation of an exact zero")
            raise PrecisionLoss(
                f"no terms below the O(p^{self.precision}) marker"
            )
        vmin = None
        ties: list[tuple[Fraction, int]] = []
        for key in self.terms:
            v = self.term_valuation(key)
            if vmin is None or v < vmin:
                vmin, ties = v, [key]
            elif v == vmin:
                ties.append(key)
        residue = self.ctx.fp2(0)
        for key in ties:
            residue = residue + self.terms[key].residue()
        if residue.is_zero():
            raise AmbiguousLeading(
                f"{len(ties)} terms tie at valuation {vmin} and their residues cancel"
            )
        return vmin, residue

    def leading_monomial_key(self) -> tuple[Fraction, int]:
        """Key of the unique minimal-valuation term (no ties allowed)."""
        self.leading()  # tie check
        return min(self.terms, key=self.term_valuation)

    def effective_precision(self) -> Fraction | None:
        """Marker precision capped by the coefficient digit support."""
        caps = []
        if self.precision is not None:
            caps.append(self.precision)
        for (x, j), c in self.terms.items():
            tail = Fraction(j, self.ctx.p ** self.sigma_index) if j else Fraction(0)
            caps.append(x + c.L - tail)
        return min(caps) if caps else None

    # ------------------------------------------------------------------
    # tail-index handling

    def with_sigma_index(self, K: int) -> "SeriesElement":
        if self.sigma_index is not None:
            raise ValueError("element already carries a tail index")
        return SeriesElement(self.ctx, dict(self.terms), self.precision, K)

    def sigma_rewrite(self, K_new: int) -> "SeriesElement":
        """Rewrite every tail power to index K_new >= current index."""
        K = self.sigma_index
        if K is None:
            return self
        if K_new < K:
            raise ValueError("tail index can only be raised")
        if K_new == K:
            return self
        p = self.ctx.p
        # sigma_K = mu_K + ... + mu_{K_new-1} + sigma_{K_new},
        # mu_k = p^(-1/p^k); expand powers by repeated convolution
        base = {(Fraction(0), 1): 1}
        for k in range(K, K_new):
            base[(Fraction(-1, p ** k), 0)] = 1
        powers: dict[int, dict[tuple[Fraction, int], int]] = {0: {(Fraction(0), 0): 1}}

        def power(j: int) -> dict[tuple[Fraction, int], int]:
            if j not in powers:
                prev = power(j - 1)
                out: dict[tuple[Fraction, int], int] = {}
                for (dx1, j1), n1 in prev.items():
                    for (dx2, j2), n2 in base.items():
                        key = (dx1 + dx2, j1 + j2)
                        out[key] = out.get(key, 0) + n1 * n2
                powers[j] = out
            return powers[j]

        new_terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
        for (x, j), c in self.terms.items():
            for (dx, j2), count in power(j).items():
                key = (x + dx, j2)
                piece = c * _coeff_int(self.ctx, count, c.L)
                if key in new_terms:
                    new_terms[key] = new_terms[key] + piece
                else:
                    new_terms[key] = piece
        return SeriesElement(self.ctx, new_terms, self.precision, K_new)

    def _aligned(self, other: "SeriesElement") -> tuple["SeriesElement", "SeriesElement"]:
        if self.ctx != other.ctx:
            raise ValueError("elements live over different primes")
        Ka, Kb = self.sigma_index, other.sigma_index
        if Ka == Kb:
            return self, other
        if Ka is None:
            return self, other
        if Kb is None:
            return self, other
        K = max(Ka, Kb)
        return self.sigma_rewrite(K), other.sigma_rewrite(K)

    # ------------------------------------------------------------------
    # ring operations

    def __neg__(self) -> "SeriesElement":
        return SeriesElement(
            self.ctx, {k: -c for k, c in self.terms.items()}, self.precision, self.sigma_index
        )

    def __add__(self, other: "SeriesElement") -> "SeriesElement":
        a, b = self._aligned(other)
        precision = _min_prec(a.precision, b.precision)
        merged = dict(a.terms)
        for key, c in b.terms.items():
            if key in merged:
                merged[key] = merged[key] + c
            else:
                merged[key] = c
        index = a.sigma_index if a.sigma_index is not None else b.sigma_index
        return SeriesElement(self.ctx, merged, precision, index)

    def __sub__(self, other: "SeriesElement") -> "SeriesElement":
        return self + (-other)

    def __mul__(self, other: "SeriesElement") -> "SeriesElement":
        if self.is_exact_zero() or other.is_exact_zero():
            return zero(self.ctx)
        a, b = self._aligned(other)
        va, vb = a._val_lower(), b._val_lower()
        precision = _mul_prec(a.precision, b.precision, va, vb)
        index = a.sigma_index if a.sigma_index is not None else b.sigma_index
        if (
            len(a.terms) * len(b.terms) > _DENSE_THRESHOLD
            and precision is not None
        ):
            dense = _mul_dense(a, b, precision, index)
            if dense is not None:
                return dense
        out: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
        _accumulate_products(out, a.terms, b.terms, precision, index, self.ctx.p)
        return SeriesElement(self.ctx, out, precision, index)

    def scale_coeff(self, c: UnramifiedCoeff) -> "SeriesElement":
        """Multiply by a unit coefficient (precision marker unchanged)."""
        if not c.is_unit():
            raise ValueError("scale_coeff expects a unit; use scale_rational")
        return SeriesElement(
            self.ctx, {k: t * c for k, t in self.terms.items()}, self.precision, self.sigma_index
        )

    def scale_rational(self, r: Fraction | int) -> "SeriesElement":
        """Multiply by an exact rational (p-part shifts the exponents)."""
        r = Fraction(r)
        if r == 0:
            return zero(self.ctx)
        t = 0
        num, den = r.numerator, r.denominator
        p = self.ctx.p
        while num % p == 0:
            num //= p
            t += 1
        while den % p == 0:
            den //= p
            t -= 1
        unit = embed_rational(self.ctx, Fraction(num, den), self.ctx.working_digits)
        return self.scale_coeff(unit).shift(Fraction(t))

    def shift(self, x: Fraction) -> "SeriesElement":
        """Multiply by the exact monomial p^x."""
        x = Fraction(x)
        if x == 0:
            return self
        terms = {(xx + x, j): c for (xx, j), c in self.terms.items()}
        precision = None if self.precision is None else self.precision + x
        return SeriesElement(self.ctx, terms, precision, self.sigma_index)

    def truncate(self, r: Fraction | None) -> "SeriesElement":
        """Cap the precision marker at r (never raises it)."""
        if r is None:
            return self
        r = Fraction(r)
        if self.precision is not None and self.precision <= r:
            return self
        return SeriesElement(self.ctx, dict(self.terms), r, self.sigma_index)

    def reduce_digits(self, L: int) -> "SeriesElement":
        """Cap every coefficient at L known digits."""
        terms = {k: (c if c.L <= L else c.reduce(L)) for k, c in self.terms.items()}
        return SeriesElement(self.ctx, terms, self.precision, self.sigma_index)

    def invert(self, target: Fraction | None = None) -> "SeriesElement":
        """Inverse, truncated at absolute precision ``target``.

        The leading term must be a plain monomial with unit coefficient;
        factoring it out leaves 1 + w with v(w) > 0 and the inverse is the
        geometric series in -w.  Relative precision cannot exceed that of
        the input, which bounds target by r - 2 v(a).
        """
        key = self.leading_monomial_key()
        x, j = key
        if j != 0:
            raise ValueError("leading term carries a tail symbol; not invertible here")
        c = self.terms[key]
        v = x
        if self.precision is not None:
            best = self.precision - 2 * v
            if target is None:
                target = best
            elif target > best:
                raise PrecisionLoss(
                    f"inverse only determined to O(p^{best}), asked for O(p^{target})"
                )
        unit = self.scale_coeff(c.inverse()).shift(-v)
        w = unit - one(self.ctx)
        if not w.terms and w.precision is None:
            inv = one(self.ctx)
        else:
            if target is None:
                raise ValueError("target precision required to invert a non-monomial")
            rel = target + v
            w = w.truncate(rel)
            acc = one(self.ctx).truncate(rel)
            term = one(self.ctx).truncate(rel)
            guard = 0
            while True:
                term = (term * -w).truncate(rel)
                if not term.terms:
                    break
                acc = acc + term
                guard += 1
                if guard > 10000:
                    raise RuntimeError("geometric series failed to terminate")
            inv = acc
        result = inv.scale_coeff(c.inverse()).shift(-v)
        return result.truncate(target)

    def power(self, s: int, target: Fraction | None = None) -> "SeriesElement":
        """Integer power with truncation control (binary powering)."""
        if s == 0:
            return one(self.ctx)
        if s < 0:
            v = self.valuation()
            target_inv = None if target is None else target + (-s - 1) * v
            return self.invert(target_inv).power(-s, target)
        base = self
        if target is not None:
            v = self._val_lower()
            if v is None:
                return zero(self.ctx)
            if self.precision is not None:
                achievable = (s - 1) * v + self.precision
                if target > achievable:
                    raise PrecisionLoss(
                        f"power only determined to O(p^{achievable}), asked for O(p^{target})"
                    )
            base = self.truncate(target - (s - 1) * v)
        result = None
        acc = base
        n = s
        while n:
            if n & 1:
                result = acc if result is None else result * acc
            n >>= 1
            if n:
                acc = acc * acc
        return result.truncate(target) if target is not None else result

    def __pow__(self, s: int) -> "SeriesElement":
        return self.power(s)

    # ------------------------------------------------------------------
    # comparisons and digits

    def equal_mod(self, other: "SeriesElement", r: Fraction) -> bool:
        """True iff self - other = O(p^r); refuses when digits run out."""
        r = Fraction(r)
        for e in (self, other):
            eff = e.effective_precision()
            if eff is not None and eff < r:
                raise PrecisionLoss(
                    f"operand only known to O(p^{eff}), compared at O(p^{r})"
                )
        diff = self - other
        return all(diff.term_valuation(k) >= r for k in diff.terms)

    def accumulation_point(self) -> Fraction | None:
        """Smallest exponent at which unrolled tail digits accumulate."""
        points = [x for (x, j) in self.terms if j >= 1]
        return min(points) if points else None

    def vanishes_below(self, bound: Fraction) -> bool:
        """True iff every canonical digit of the element below ``bound`` is 0.

        Tail-free case: a termwise check.  With tail symbols, digits below
        the bound can cancel across terms only after unrolling (powers of a
        deeper tail reproduce shallower monomials, e.g. the p-th power of
        the level-(J+1) leading monomial is the level-J one), so a termwise
        check is too coarse.  Instead the element is unrolled to three
        consecutive depths past the point where one unroll step is finer
        than the exponent grid, and the below-bound content must then show
        the exact telescoping pattern:

        * the tail-carrying part is identical at all three depths,
        * explicit monomials at one depth are gone at the next (each
          frontier cancels one level later), and
        * every surviving monomial sits at a frontier exponent
          ``x - t/p^(J-1)`` of a tail term at ``x``.

        Once the unroll step cannot straddle two distinct grid exponents,
        the coefficient arithmetic behind these cancellations repeats
        verbatim at every deeper level, so the verified pattern certifies
        that no digit below the bound ever survives.
        """
        bound = Fraction(bound)
        eff = self.effective_precision()
        if eff is not None and eff < bound:
            raise PrecisionLoss(
                f"element only known to O(p^{eff}), digit question at O(p^{bound})"
            )
        if not self.terms:
            return True
        if self.sigma_index is None:
            return all(self.term_valuation(k) >= bound for k in self.terms)
        if all(self.term_valuation(k) >= bound for k in self.terms):
            return True
        p = self.ctx.p
        den = 1
        for (x, _j) in self.terms:
            den = den * x.denominator // _gcd(den, x.denominator)
        den = den * bound.denominator // _gcd(den, bound.denominator)
        jmax = max(j for (_x, j) in self.terms)
        J1 = self.sigma_index
        while p ** (J1 - 1) <= 2 * den * (jmax + 1):
            J1 += 1
        levels = []
        for J in (J1, J1 + 1, J1 + 2):
            lev = self.sigma_rewrite(J)
            package = {}
            monos = {}
            for (x, j), c in lev.terms.items():
                if lev.term_valuation((x, j)) >= bound:
                    continue
                if j >= 1:
                    package[(x, j)] = c
                else:
                    monos[x] = c
            levels.append((J, package, monos))
        (jA, pA, mA), (_jB, pB, mB), (_jC, pC, mC) = levels
        if pA != pB or pB != pC:
            return False
        if set(mA) & set(mB) or set(mB) & set(mC):
            return False
        for J, package, monos in levels:
            step = Fraction(1, p ** (J - 1))
            xs = {x for (x, _j) in package}
            for q in monos:
                if not any(
                    (x - q) > 0 and ((x - q) / step).denominator == 1 for x in xs
                ):
                    return False
        return True

    def canonical_digits(self, window_end: Fraction) -> list[tuple[Fraction, Fp2]]:
        """Canonical digit expansion below ``window_end``.

        Repeated leading-digit extraction with carries: the lowest pending
        exponent contributes its residue as a digit, and the rest of the
        coefficient moves up one exponent (costing one known digit).  Tail
        powers are unrolled just far enough that every one of their
        monomials below the window is explicit.
        """
        w = Fraction(window_end)
        eff = self.effective_precision()
        if eff is not None and w > eff:
            raise PrecisionLoss(f"window O(p^{w}) beyond element precision O(p^{eff})")
        acc_pt = self.accumulation_point()
        if acc_pt is not None and w >= acc_pt:
            raise WindowBeyondAccumulation(
                f"window {w} reaches the accumulation point at {acc_pt}"
            )
        elem = self
        if self.sigma_index is not None:
            K = self.sigma_index
            p = self.ctx.p
            while any(
                x - Fraction(j, p ** K) < w for (x, j) in elem.terms if j >= 1
            ):
                K += 1
                elem = elem.sigma_rewrite(K)
        pending: dict[Fraction, UnramifiedCoeff] = {}
        heap: list[Fraction] = []
        for (x, j), c in elem.terms.items():
            if j != 0 or x >= w:
                continue
            if x in pending:
                pending[x] = pending[x] + c
            else:
                pending[x] = c
                heappush(heap, x)
        digits: list[tuple[Fraction, Fp2]] = []
        while heap:
            x = heappop(heap)
            c = pending.pop(x)
            if x >= w or c.is_zero():
                continue
            d = c.residue()
            if d.is_zero():
                carry = c.shift_down(1)
            else:
                digits.append((x, d))
                lift = teichmueller(self.ctx, d, c.L)
                rest = c - lift
                carry = rest.shift_down(1) if not rest.is_zero() else None
            if carry is not None and x + 1 < w:
                if carry.L < 1:
                    raise PrecisionLoss("digit carries exhausted coefficient precision")
                if x + 1 in pending:
                    pending[x + 1] = pending[x + 1] + carry
                else:
                    pending[x + 1] = carry
                    heappush(heap, x + 1)
        digits.sort(key=lambda t: t[0])
        return digits

    # ------------------------------------------------------------------
    # serialization

    def to_json(self) -> dict:
        if self.precision is None:
            prec = "exact"
        else:
            prec = {"num": self.precision.numerator, "den": self.precision.denominator}
        terms = []
        for (x, j) in sorted(self.terms, key=lambda k: (k[0], k[1])):
            c = self.terms[(x, j)]
            terms.append(
                {
                    "coeff": {"digits": c.digits(), "L": c.L},
                    "exp": {"num": x.numerator, "den": x.denominator},
                    "sigma_pow": j,
                }
            )
        return {
            "p": self.ctx.p,
            "sigma_index": self.sigma_index,
            "precision": prec,
            "terms": terms,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, data: dict, ctx: PrimeContext | None = None) -> "SeriesElement":
        if ctx is None:
            ctx = context(int(data["p"]))
        elif ctx.p != int(data["p"]):
            raise ValueError("context prime does not match serialized element")
        prec_field = data["precision"]
        precision = (
            None
            if prec_field == "exact"
            else Fraction(prec_field["num"], prec_field["den"])
        )
        terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
        for t in data["terms"]:
            x = Fraction(t["exp"]["num"], t["exp"]["den"])
            c = UnramifiedCoeff.from_digits(ctx.p, ctx.nu, t["coeff"]["digits"], t["coeff"]["L"])
            key = (x, int(t["sigma_pow"]))
            terms[key] = terms[key] + c if key in terms else c
        return cls(ctx, terms, precision, data.get("sigma_index"))

    @classmethod
    def loads(cls, text: str, ctx: PrimeContext | None = None) -> "SeriesElement":
        return cls.from_json(json.loads(text), ctx)

    # ------------------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SeriesElement):
            return NotImplemented
        return (
            self.ctx == other.ctx
            and self.sigma_index == other.sigma_index
            and self.precision == other.precision
            and self.terms == other.terms
        )

    def __hash__(self) -> int:  # pragma: no cover
        return hash((self.ctx.p, self.sigma_index, self.precision, frozenset(self.terms)))

    def __repr__(self) -> str:
        bits = []
        for (x, j) in sorted(self.terms, key=lambda k: self.term_valuation(k)):
            c = self.terms[(x, j)]
            if c.b:
                cs = f"({c.a}+{c.b}s)"
            else:
                cs = str(c.a)
            part = cs
            if x:
                part += f"*p^({x})"
            if j:
                part += f"*s{self.sigma_index}" + (f"^{j}" if j > 1 else "")
            bits.append(part)
        if self.precision is not None:
            bits.append(f"O(p^({self.precision}))")
        return " + ".join(bits) if bits else "0"


# ----------------------------------------------------------------------
# constructors


def monomial(
    ctx: PrimeContext,
    exponent: Fraction | int = 0,
    coeff: UnramifiedCoeff | Fraction | int = 1,
    sigma_pow: int = 0,
    sigma_index: int | None = None,
    precision: Fraction | None = None,
) -> SeriesElement:
    """Single term c * p^exponent * sigma_K^j."""
    if sigma_pow and sigma_index is None:
        raise ValueError("sigma_pow needs a sigma_index")
    if not isinstance(coeff, UnramifiedCoeff):
        coeff = embed_rational(ctx, Fraction(coeff), ctx.working_digits)
    key = (Fraction(exponent), sigma_pow)
    return SeriesElement(ctx, {key: coeff}, precision, sigma_index)


def from_rational(ctx: PrimeContext, r: Fraction | int, precision: Fraction | None = None) -> SeriesElement:
    """Exact rational as an element (its p-part goes into the exponent)."""
    r = Fraction(r)
    if r == 0:
        return zero(ctx, precision)
    t = 0
    num, den = r.numerator, r.denominator
    while num % ctx.p == 0:
        num //= ctx.p
        t += 1
    while den % ctx.p == 0:
        den //= ctx.p
        t -= 1
    return monomial(ctx, Fraction(t), Fraction(num, den), precision=precision)


def zero(ctx: PrimeContext, precision: Fraction | None = None) -> SeriesElement:
    return SeriesElement(ctx, {}, precision, None)


def one(ctx: PrimeContext) -> SeriesElement:
    return monomial(ctx, 0, 1)


def sigma(ctx: PrimeContext, K: int) -> SeriesElement:
    """The tail sum sigma_K as a symbolic element (valuation -1/p^K)."""
    if K < 1:
        raise ValueError("tail index must be >= 1")
    return monomial(ctx, 0, 1, sigma_pow=1, sigma_index=K)


# ----------------------------------------------------------------------
# internals


def _min_prec(a: Fraction | None, b: Fraction | None) -> Fraction | None:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def _mul_prec(
    ra: Fraction | None, rb: Fraction | None, va: Fraction | None, vb: Fraction | None
) -> Fraction | None:
    cands = []
    if ra is not None:
        if vb is None:
            raise PrecisionLoss("multiplier valuation unknown")
        cands.append(ra + vb)
    if rb is not None:
        if va is None:
            raise PrecisionLoss("multiplier valuation unknown")
        cands.append(rb + va)
    return min(cands) if cands else None


def _normalize(
    ctx: PrimeContext,
    raw: dict[tuple[Fraction, int], UnramifiedCoeff],
    precision: Fraction | None,
    sigma_index: int | None,
) -> tuple[dict[tuple[Fraction, int], UnramifiedCoeff], Fraction | None, int | None]:
    """Merge duplicate keys, absorb p-powers into exponents, filter by marker.

    A coefficient known to L digits determines its term only up to
    O(p^(x+L-tail)); when that cap falls below the requested marker, the
    marker degrades to the cap instead of pretending to more digits than
    are stored.
    """
    p = ctx.p
    out: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
    work = list(raw.items())
    while work:
        (x, j), c = work.pop()
        if j and sigma_index is None:
            raise ValueError("tail power without a tail index")
        tail = Fraction(j, p ** sigma_index) if j else Fraction(0)
        if c.is_zero():
            # known digits all vanish; content beyond x+L caps the marker
            if precision is not None:
                cap = x + c.L - tail
                if cap < precision:
                    precision = cap
            continue
        t = c.p_valuation()
        if t:
            c = c.shift_down(t)
            x = x + t
        key = (x, j)
        if key in out:
            merged = out.pop(key) + c
            work.append((key, merged))
            continue
        out[key] = c
    if precision is not None:
        while True:
            kept: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
            degraded = False
            for (x, j), c in out.items():
                tail = Fraction(j, p ** sigma_index) if j else Fraction(0)
                if x - tail >= precision:
                    continue
                cap = x + c.L - tail
                if cap < precision:
                    precision = cap
                    degraded = True
                    break
                kept[(x, j)] = c
            if not degraded:
                out = kept
                break
    if not any(j for (_, j) in out):
        sigma_index = None
    return out, precision, sigma_index


def _accumulate_products(
    out: dict[tuple[Fraction, int], UnramifiedCoeff],
    left: dict[tuple[Fraction, int], UnramifiedCoeff],
    right: dict[tuple[Fraction, int], UnramifiedCoeff],
    cutoff: Fraction | None,
    index: int | None,
    p: int,
) -> None:
    """Termwise product accumulation, skipping pairs past the cutoff.

    A pair contributes below the marker iff the sum of the two term
    valuations does, so sorting one side by valuation turns the cutoff
    into a prefix test.
    """
    pK = p ** index if index is not None else 1

    def val(key: tuple[Fraction, int]) -> Fraction:
        return key[0] - Fraction(key[1], pK) if key[1] else key[0]

    rs = sorted(((val(k), k, c) for k, c in right.items()), key=lambda t: t[0])
    for (x1, j1), c1 in left.items():
        v1 = val((x1, j1))
        for v2, (x2, j2), c2 in rs:
            if cutoff is not None and v1 + v2 >= cutoff:
                break
            key = (x1 + x2, j1 + j2)
            piece = c1 * c2
            out[key] = out[key] + piece if key in out else piece


def _mul_dense(
    a: SeriesElement,
    b: SeriesElement,
    precision: Fraction,
    index: int | None,
) -> SeriesElement | None:
    """Exact dense convolution over int64 arrays; None when unsafe.

    Coefficients are bucketed by their digit precision; each bucket pair is
    convolved at its own shared modulus (or multiplied termwise when the
    pair is small), so per-coefficient precision survives intact.
    """
    try:
        import numpy as np
        from scipy.signal import convolve2d
    except Exception:  # pragma: no cover
        return None
    p = a.ctx.p
    nu = a.ctx.nu

    def classes(e: SeriesElement) -> dict[int, dict]:
        by_l: dict[int, dict] = {}
        for k, c in e.terms.items():
            by_l.setdefault(c.L, {})[k] = c
        return by_l

    cls_a, cls_b = classes(a), classes(b)
    if len(cls_a) * len(cls_b) > 36:
        return None
    den = 1
    for (x, _j) in list(a.terms) + list(b.terms):
        den = den * x.denominator // _gcd(den, x.denominator)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}
    for La, ta in cls_a.items():
        for Lb, tb in cls_b.items():
            if len(ta) * len(tb) <= 4000:
                _accumulate_products(terms, ta, tb, precision, index, p)
                continue
            L = min(La, Lb)
            mod = p ** L
            xs_a = [int(x * den) for (x, _j) in ta]
            xs_b = [int(x * den) for (x, _j) in tb]
            amin, bmin = min(xs_a), min(xs_b)
            rows_a = max(xs_a) - amin + 1
            rows_b = max(xs_b) - bmin + 1
            ja = max(j for (_x, j) in ta)
            jb = max(j for (_x, j) in tb)
            if (rows_a + rows_b) * (ja + jb + 1) > _DENSE_CELL_LIMIT:
                return None
            if min(len(ta), len(tb)) * (mod - 1) ** 2 * (1 + nu) >= 2 ** 62:
                return None

            def pack(tt, xmin, rows, jmax):
                A = np.zeros((rows, jmax + 1), dtype=np.int64)
                B = np.zeros((rows, jmax + 1), dtype=np.int64)
                for (x, j), c in tt.items():
                    i = int(x * den) - xmin
                    cc = c if c.L <= L else c.reduce(L)
                    A[i, j] = cc.a
                    B[i, j] = cc.b
                return A, B

            Aa, Ba = pack(ta, amin, rows_a, ja)
            Ab, Bb = pack(tb, bmin, rows_b, jb)
            comp_a = (convolve2d(Aa, Ab) + nu * convolve2d(Ba, Bb)) % mod
            comp_b = (convolve2d(Aa, Bb) + convolve2d(Ba, Ab)) % mod
            nz = np.argwhere((comp_a != 0) | (comp_b != 0))
            base = amin + bmin
            for i, j in nz:
                x = Fraction(base + int(i), den)
                j = int(j)
                tail = Fraction(j, p ** index) if j else Fraction(0)
                if x - tail >= precision:
                    continue
                piece = UnramifiedCoeff(p, nu, int(comp_a[i, j]), int(comp_b[i, j]), L)
                key = (x, j)
                terms[key] = terms[key] + piece if key in terms else piece
    return SeriesElement(a.ctx, terms, precision, index)


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a
