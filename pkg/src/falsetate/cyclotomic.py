"""Explicit truncated expansions at p-power roots of unity, with oracles.

`build_zeta` constructs the closed-form truncated expansion of a primitive
p^n-th root of unity (n >= 2) inside the series engine; everything else in
this module either derives further expansions from it (inverse powers,
powers of the tail element used by the recursion) or certifies it against
an independent computation:

* `residual_check` plugs the expansion into the p^n-th cyclotomic
  polynomial and compares the residual valuation against the Newton
  convergence threshold computed in-engine, certifying that a true root
  lies within the stated precision of the expansion.
* `greedy_root_digits` grows a root of the cyclotomic polynomial digit by
  digit from scratch (Newton-polygon slope plus exhaustive digit search),
  giving canonical digits to compare against the closed form.

The identity checks at the bottom re-derive each displayed expansion from
the ones before it purely inside the engine and report exact modular
equality; they are the package's verification surface for the recursion
step used by the uniformizer tower.
"""

from __future__ import annotations

from fractions import Fraction
from math import comb, factorial, ceil

from .arith import Fp2, PrimeContext, UnramifiedCoeff, embed_rational, teichmueller
from .errors import PrecisionLoss, WindowBeyondAccumulation
from .poly import PolyOverK
from .series import SeriesElement, from_rational, monomial, one, sigma, zero

__all__ = [
    "ZetaExpansion",
    "ABetaElement",
    "zeta_precision",
    "build_sigma",
    "build_zeta",
    "cyclotomic_polynomial",
    "residual_check",
    "greedy_root_digits",
    "build_inv_power",
    "build_a_beta",
    "a_beta_power",
    "check_inv_power",
    "check_power_expansion",
    "check_remainder_sum",
    "product_pipeline",
    "check_product_pipeline",
    "check_tower_compatibility",
]


def zeta_precision(ctx: PrimeContext, n: int) -> Fraction:
    """Precision bound of the level-n expansion: 2 / (p^(n-2) (p-1))."""
    if n < 2:
        raise ValueError("expansions are available for levels n >= 2 only")
    return Fraction(2, ctx.p ** (n - 2) * (ctx.p - 1))


def level_exponent(ctx: PrimeContext, n: int) -> Fraction:
    """First ramified exponent at level n: 1 / (p^(n-1) (p-1))."""
    return Fraction(1, ctx.p ** (n - 1) * (ctx.p - 1))


def zeta_unit(ctx: PrimeContext, L: int | None = None) -> UnramifiedCoeff:
    """Teichmueller lift of the fixed generator of order 2(p-1)."""
    return teichmueller(ctx, ctx.generator_2p2, L)


def build_sigma(ctx: PrimeContext, n: int) -> SeriesElement:
    """The symbolic tail sum of valuation -1/p^n."""
    return sigma(ctx, n)


class ZetaExpansion:
    """Truncated expansion of a primitive p^n-th root of unity, n >= 2."""

    __slots__ = ("ctx", "n", "element")

    def __init__(self, ctx: PrimeContext, n: int, element: SeriesElement):
        self.ctx = ctx
        self.n = n
        self.element = element
        lead = (element - one(ctx)).valuation()
        if lead != level_exponent(ctx, n):
            raise ValueError(
                f"level-{n} expansion has wrong leading gap {lead}"
            )

    @property
    def precision(self) -> Fraction:
        return zeta_precision(self.ctx, self.n)

    def __repr__(self) -> str:
        return f"ZetaExpansion(p={self.ctx.p}, n={self.n})"


def build_zeta(ctx: PrimeContext, n: int, working_digits: int | None = None) -> ZetaExpansion:
    """Closed-form truncated expansion of zeta_{p^n} for n >= 2.

    Five groups of terms: the pure ramified head, the head's tail-shifted
    companion, the harmonic correction, and two border terms that survive
    the precision cut only because of their tail factors.
    """
    p = ctx.p
    if n < 2:
        raise ValueError("build_zeta needs n >= 2")
    L = working_digits if working_digits is not None else ctx.working_digits
    zeta = zeta_unit(ctx, L)
    zpow = [zeta ** k for k in range(p + 2)]
    x = level_exponent(ctx, n)
    R = zeta_precision(ctx, n)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}

    def put(exp: Fraction, j: int, c: UnramifiedCoeff) -> None:
        key = (exp, j)
        terms[key] = terms[key] + c if key in terms else c

    for k in range(p):
        head = embed_rational(ctx, Fraction((-1) ** (n * k), factorial(k)), L)
        put(k * x, 0, head * zpow[k])
        tail = embed_rational(ctx, Fraction((-1) ** (n * (k + 1)), factorial(k)), L)
        put((k + p) * x, 1, tail * zpow[k + 1])
    hk = Fraction(0)
    for k in range(1, p):
        hk += Fraction(1, k)
        corr = embed_rational(ctx, Fraction(-((-1) ** (n * (k + 1))) * hk, factorial(k)), L)
        put((k + p) * x, 0, corr * zpow[k + 1])
    put(R, 2, embed_rational(ctx, Fraction(1, 2), L) * zpow[2])
    border = R - Fraction(p - 2, p ** n * (p - 1))
    put(border, 0, embed_rational(ctx, Fraction((-1) ** n, 2), L) * zpow[3])
    element = SeriesElement(ctx, terms, R, n)
    return ZetaExpansion(ctx, n, element)


def cyclotomic_polynomial(ctx: PrimeContext, n: int) -> PolyOverK:
    """Minimal polynomial of a primitive p^n-th root of unity."""
    if n < 1:
        raise ValueError("n >= 1 required")
    p = ctx.p
    step = p ** (n - 1)
    coeffs = [zero(ctx)] * (step * (p - 1) + 1)
    for i in range(p):
        coeffs[i * step] = one(ctx)
    return PolyOverK(ctx, coeffs)


def _exactify(e: SeriesElement) -> SeriesElement:
    """The finite sum itself, marker removed (it is an exact element)."""
    return SeriesElement(e.ctx, dict(e.terms), None, e.sigma_index)


def _cyclotomic_value_and_derivative_data(
    ctx: PrimeContext, n: int, E: SeriesElement, work: Fraction
) -> tuple[SeriesElement, SeriesElement]:
    """(Phi(E), derivative cofactor sum_{i>=1} i u^(i-1)) at marker `work`."""
    p = ctx.p
    m = p ** (n - 1)
    Ew = E.truncate(work)
    u = Ew.power(m)
    upow = [one(ctx).truncate(work)]
    for _ in range(p - 1):
        upow.append(upow[-1] * u)
    value = zero(ctx, work)
    for i in range(p):
        value = value + upow[i]
    deriv_cofactor = zero(ctx, work)
    for i in range(1, p):
        deriv_cofactor = deriv_cofactor + upow[i - 1].scale_rational(i)
    return value, deriv_cofactor


def residual_check(z: ZetaExpansion) -> bool:
    """Certify the expansion as a root approximation by its residual.

    Treats the displayed finite sum as an exact element E, computes the
    valuations of Phi(E) and Phi'(E) in-engine and reports whether
    v(Phi(E)) >= r + v(Phi'(E)) for the expansion's precision r; by Newton
    convergence this places a true root within O(p^r) of E.
    """
    ctx, n = z.ctx, z.n
    r = z.precision
    E = _exactify(z.element)

    # derivative valuation first, at a coarse marker
    coarse = Fraction(n + 2)
    E1 = E.reduce_digits(n + 5)
    _, cof = _cyclotomic_value_and_derivative_data(ctx, n, E1, coarse)
    v_deriv = Fraction(n - 1) + cof.valuation()

    bound = r + v_deriv
    digits_needed = ceil(bound) + 4
    E2 = E.reduce_digits(digits_needed)
    value, _ = _cyclotomic_value_and_derivative_data(ctx, n, E2, bound + Fraction(1, 2))
    # every canonical digit below the bound must cancel exactly
    return value.vanishes_below(bound)


def greedy_root_digits(
    ctx: PrimeContext, n: int, window_end: Fraction
) -> list[tuple[Fraction, Fp2]]:
    """Digit-by-digit root of the level-n cyclotomic polynomial.

    Independent of `build_zeta`: starting from 0, each step reads the next
    digit exponent off the steepest Newton-polygon slope of Phi shifted to
    the current approximation, then finds the unique residue digit that
    strictly increases the residual valuation.  Valid strictly below the
    first accumulation point of the root's digit support, where all
    conjugate branches share their digits and the search is unambiguous.
    """
    p = ctx.p
    w = Fraction(window_end)
    acc = p * level_exponent(ctx, n)
    if w >= acc:
        raise WindowBeyondAccumulation(
            f"digit window {w} reaches the accumulation point {acc}"
        )
    if w > zeta_precision(ctx, n):
        raise PrecisionLoss("window beyond the certified precision")
    deg = p ** (n - 1) * (p - 1)
    step = p ** (n - 1)
    work = w + Fraction(n) + 1
    L = ceil(work) + 2
    candidates = [
        ctx.fp2(a, b) for b in range(p) for a in range(p) if (a, b) != (0, 0)
    ]
    cand_lifts = [teichmueller(ctx, d, L) for d in candidates]

    S = zero(ctx)
    digits: list[tuple[Fraction, Fp2]] = []
    last_e = None
    for _ in range(300):
        spow = [one(ctx).truncate(work)]
        for _k in range(deg):
            spow.append((spow[-1] * S).truncate(work) if not S.is_exact_zero() else zero(ctx, work))
        if S.is_exact_zero():
            spow = [one(ctx).truncate(work)] + [zero(ctx, work)] * deg
        cs: list[SeriesElement] = []
        for i in range(deg + 1):
            acc_c = zero(ctx, work)
            for t in range(p):
                tm = t * step
                if tm < i:
                    continue
                acc_c = acc_c + spow[tm - i].scale_rational(comb(tm, i))
            cs.append(acc_c)
        c0 = cs[0]
        if not c0.terms:
            break
        v0 = min(c0.term_valuation(k) for k in c0.terms)
        slope = None
        for i in range(1, deg + 1):
            if not cs[i].terms:
                continue
            vi = min(cs[i].term_valuation(k) for k in cs[i].terms)
            s = Fraction(v0 - vi, i)
            if slope is None or s > slope:
                slope = s
        if slope is None or slope >= w:
            break
        e = slope
        if last_e is not None and e <= last_e:
            raise RuntimeError("digit exponents failed to increase")
        winners = []
        for d, lift in zip(candidates, cand_lifts):
            mono = monomial(ctx, e, lift)
            val = zero(ctx, work)
            for i in range(deg, -1, -1):
                val = val * mono + cs[i]
            vv = min(
                (val.term_valuation(k) for k in val.terms), default=val.precision
            )
            if vv > v0:
                winners.append((d, lift))
        if len(winners) != 1:
            raise RuntimeError(
                f"digit at exponent {e} is not unique ({len(winners)} candidates)"
            )
        d, lift = winners[0]
        digits.append((e, d))
        S = S + monomial(ctx, e, lift)
        last_e = e
    else:  # pragma: no cover
        raise RuntimeError("digit search did not terminate")
    return digits


# ----------------------------------------------------------------------
# derived expansions


def build_inv_power(z_next: ZetaExpansion) -> SeriesElement:
    """(zeta_{p^(n+1)} - 1)^(-2p+2), truncated at its best precision."""
    ctx = z_next.ctx
    if z_next.n < 3:
        raise ValueError("build_inv_power expects the level-(n+1) expansion, n >= 2")
    base = z_next.element - one(ctx)
    return base.power(-2 * ctx.p + 2)


def _inv_power_display(ctx: PrimeContext, n: int) -> SeriesElement:
    """Displayed form of (zeta_{p^(n+1)} - 1)^(-2p+2)."""
    p = ctx.p
    x = level_exponent(ctx, n + 1)
    L = ctx.working_digits
    zeta = zeta_unit(ctx, L)
    head = Fraction(-2, p ** n)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {
        (head, 0): embed_rational(ctx, 1, L),
        (head + x, 0): embed_rational(ctx, -((-1) ** n), L) * zeta,
    }
    index = None
    if p == 3:
        # extra tail term specific to p = 3
        terms[(head + Fraction(2, 3 ** n * 2), 1)] = embed_rational(ctx, -1, L)
        index = n + 1
    return SeriesElement(ctx, terms, head + 2 * x, index)


def check_inv_power(ctx: PrimeContext, n: int) -> bool:
    """Engine identity: computed inverse power equals its displayed form."""
    lhs = build_inv_power(build_zeta(ctx, n + 1))
    rhs = _inv_power_display(ctx, n)
    r = Fraction(-2, ctx.p ** n) + 2 * level_exponent(ctx, n + 1)
    return lhs.equal_mod(rhs, r)


class ABetaElement:
    """Leading form of the recursion input at level n with parameter beta."""

    __slots__ = ("ctx", "n", "beta", "element")

    def __init__(self, ctx: PrimeContext, n: int, beta: Fraction, element: SeriesElement):
        self.ctx = ctx
        self.n = n
        self.beta = beta
        self.element = element
        X = level_exponent(ctx, n)
        if element.valuation() != X - Fraction(1, ctx.p ** n):
            raise ValueError("leading valuation does not match the defining form")

    def __repr__(self) -> str:
        return f"ABetaElement(p={self.ctx.p}, n={self.n}, beta={self.beta})"


def build_a_beta(ctx: PrimeContext, n: int, beta: Fraction | int) -> ABetaElement:
    """(-1)^n zeta p^X sigma_n (1 + (-1)^n beta zeta p^X) + O(p^(2X))."""
    beta = Fraction(beta)
    if beta.denominator % ctx.p == 0:
        raise ValueError("beta must be p-integral")
    if n < 2:
        raise ValueError("n >= 2 required")
    L = ctx.working_digits
    zeta = zeta_unit(ctx, L)
    X = level_exponent(ctx, n)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {
        (X, 1): embed_rational(ctx, (-1) ** n, L) * zeta
    }
    if beta != 0:
        terms[(2 * X, 1)] = embed_rational(ctx, beta, L) * zeta * zeta
    element = SeriesElement(ctx, terms, 2 * X, n)
    return ABetaElement(ctx, n, beta, element)


def a_beta_power(a: ABetaElement, k: int) -> SeriesElement:
    """k-th power of the recursion input, 1 <= k <= 2p-1."""
    p = a.ctx.p
    if not 1 <= k <= 2 * p - 1:
        raise ValueError(f"power must lie in 1..{2 * p - 1}")
    X = level_exponent(a.ctx, a.n)
    return a.element.power(k, 2 * X)


def _power_display(ctx: PrimeContext, n: int, beta: Fraction, k: int) -> SeriesElement:
    """Displayed expansion of the k-th power, with its indicator terms."""
    p = ctx.p
    L = ctx.working_digits
    zeta = zeta_unit(ctx, L)
    x = level_exponent(ctx, n + 1)
    X = level_exponent(ctx, n)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}

    def put(exp: Fraction, j: int, c: UnramifiedCoeff) -> None:
        key = (exp, j)
        terms[key] = terms[key] + c if key in terms else c

    put(k * x, 0, embed_rational(ctx, (-1) ** (n * k), L) * zeta ** k)
    if k <= p + 1:
        put((k + p - 1) * x, 1, embed_rational(ctx, k * (-1) ** (n * k), L) * zeta ** k)
    if k == 2:
        put(2 * X, 2, zeta ** 2)
    if k == 3:
        put(
            Fraction(2 * p * p - p + 2, p ** (n + 1) * (p - 1)),
            0,
            embed_rational(ctx, 3 * (-1) ** n, L) * zeta ** 3,
        )
    if beta != 0:
        if k <= p - 1:
            put(
                (k + p) * x,
                0,
                embed_rational(ctx, beta * k * (-1) ** (n * (k + 1)), L) * zeta ** (k + 1),
            )
        if k == 1:
            put(2 * X, 1, embed_rational(ctx, beta, L) * zeta ** 2)
    return SeriesElement(ctx, terms, 2 * X, n + 1)


def check_power_expansion(ctx: PrimeContext, n: int, beta: Fraction | int, k: int) -> bool:
    """Engine identity for one power of the recursion input."""
    a = build_a_beta(ctx, n, beta)
    lhs = a_beta_power(a, k)
    rhs = _power_display(ctx, n, Fraction(beta), k)
    return lhs.equal_mod(rhs, 2 * level_exponent(ctx, n))


def _remainder_display(ctx: PrimeContext, n: int, beta: Fraction) -> SeriesElement:
    """Displayed form of zeta_{p^(n+1)} minus the degree-(p-1) head sum."""
    p = ctx.p
    L = ctx.working_digits
    zeta = zeta_unit(ctx, L)
    x = level_exponent(ctx, n + 1)
    X = level_exponent(ctx, n)
    terms: dict[tuple[Fraction, int], UnramifiedCoeff] = {}

    def put(exp: Fraction, j: int, c: UnramifiedCoeff) -> None:
        key = (exp, j)
        terms[key] = terms[key] + c if key in terms else c

    put((2 * p - 1) * x, 1, embed_rational(ctx, (-1) ** (n + 1), L) * zeta)
    hk = Fraction(0)
    for k in range(1, p):
        hk += Fraction(1, k)
        coeff = Fraction((-1) ** k, factorial(k)) * (k * beta - hk) * (-1) ** (n * k + n + 1)
        if coeff != 0:
            put((k + p) * x, 0, embed_rational(ctx, coeff, L) * zeta ** (k + 1))
    if beta != 0:
        put(2 * X, 1, embed_rational(ctx, beta, L) * zeta ** 2)
    if p == 3:
        put(
            Fraction(2 * p * p - p + 2, p ** (n + 1) * (p - 1)),
            0,
            embed_rational(ctx, Fraction(-((-1) ** n), 2), L) * zeta ** 3,
        )
    return SeriesElement(ctx, terms, 2 * X, n + 1)


def _head_sum(ctx: PrimeContext, a: ABetaElement) -> SeriesElement:
    """sum_{k=0}^{p-1} (-1)^k / k! * (input)^k."""
    p = ctx.p
    acc = one(ctx)
    for k in range(1, p):
        acc = acc + a_beta_power(a, k).scale_rational(Fraction((-1) ** k, factorial(k)))
    return acc


def check_remainder_sum(ctx: PrimeContext, n: int, beta: Fraction | int) -> bool:
    """Engine identity for the level-(n+1) remainder after the head sum."""
    beta = Fraction(beta)
    a = build_a_beta(ctx, n, beta)
    z_next = build_zeta(ctx, n + 1)
    lhs = z_next.element - _head_sum(ctx, a)
    rhs = _remainder_display(ctx, n, beta)
    return lhs.equal_mod(rhs, 2 * level_exponent(ctx, n))


def product_pipeline(ctx: PrimeContext, n: int, beta: Fraction | int) -> SeriesElement:
    """Full recursion step: inverse power times the corrected remainder."""
    beta = Fraction(beta)
    p = ctx.p
    a = build_a_beta(ctx, n, beta)
    z_next = build_zeta(ctx, n + 1)
    remainder = z_next.element - _head_sum(ctx, a)
    hk = Fraction(0)
    for k in range(1, p):
        hk += Fraction(1, k)
        coeff = Fraction((-1) ** k, factorial(k)) * (k * beta - hk)
        if coeff != 0:
            remainder = remainder - a_beta_power(a, p + k).scale_rational(coeff)
    inv = build_inv_power(z_next)
    return inv * remainder


def _product_display(ctx: PrimeContext, n: int) -> SeriesElement:
    L = ctx.working_digits
    zeta = zeta_unit(ctx, L)
    x = level_exponent(ctx, n + 1)
    terms = {
        (x, 1): embed_rational(ctx, (-1) ** (n + 1), L) * zeta,
        (2 * x, 1): embed_rational(ctx, 2, L) * zeta ** 2,
    }
    return SeriesElement(ctx, terms, 2 * x, n + 1)


def check_product_pipeline(ctx: PrimeContext, n: int, beta: Fraction | int) -> bool:
    """Engine identity: the recursion step collapses to its two-term form."""
    lhs = product_pipeline(ctx, n, beta)
    rhs = _product_display(ctx, n)
    return lhs.equal_mod(rhs, 2 * level_exponent(ctx, n + 1))


def check_tower_compatibility(ctx: PrimeContext, n: int) -> bool:
    """p-th power of the level-(n+1) expansion matches the level-n one."""
    zn = build_zeta(ctx, n)
    znext = build_zeta(ctx, n + 1)
    r = znext.precision
    return znext.element.power(ctx.p, r).equal_mod(zn.element, r)
