"""Distribution families: closed-form tail expansions, moments, samplers.

Each supported family yields (i) a tail expansion in a power / log-power
scale with exact coefficients, (ii) closed-form moments (fractional orders
included where the family allows it), and (iii) enough structure for the
Monte-Carlo oracle to sample it.  A generic ``power-series`` family lets
callers inject arbitrary expansions together with synthetic moments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterator, Mapping, Sequence

import sympy

from .laplace import MomentVector, Scalar, _known_negative
from .scale import (
    IncomparableExponentsError,
    ScaleBasis,
    ScaleItem,
    gap_sign,
)

FAMILIES = (
    "burr",
    "hall-weissman",
    "frechet",
    "pareto",
    "student",
    "log-gamma",
    "exponential",
    "point-mass",
    "power-series",
)

# Namespace for parsing scalar values from documents.  Bare identifiers are
# handled separately and always become free symbols, so parameters named
# "beta" or "gamma" never turn into special functions; inside compound
# expressions only the functions below are recognised.
_PARSE_GLOBALS = {
    "Symbol": sympy.Symbol,
    "Integer": sympy.Integer,
    "Float": sympy.Float,
    "Rational": sympy.Rational,
    "Function": sympy.Function,
    "sqrt": sympy.sqrt,
    "log": sympy.log,
    "exp": sympy.exp,
    "gamma": sympy.gamma,
    "polylog": sympy.polylog,
    "Abs": sympy.Abs,
    "sign": sympy.sign,
    "Min": sympy.Min,
    "Max": sympy.Max,
    "FallingFactorial": sympy.FallingFactorial,
    "RisingFactorial": sympy.RisingFactorial,
    "pi": sympy.pi,
    "oo": sympy.oo,
}


def parse_scalar(value) -> sympy.Expr:
    """Parse a JSON scalar (string/int/float) into a sympy expression.

    A bare identifier becomes a positive free symbol.  Compound expressions
    may use sqrt/log/exp/gamma and friends; their remaining free names also
    become positive symbols (report strings round-trip through this).
    """
    if isinstance(value, str):
        s = value.strip()
        if s.isidentifier():
            return sympy.Symbol(s, positive=True)
        from sympy.parsing.sympy_parser import parse_expr

        expr = parse_expr(s, global_dict=dict(_PARSE_GLOBALS), evaluate=True)
        free = expr.free_symbols
        if free:
            expr = expr.subs(
                {f: sympy.Symbol(f.name, positive=True) for f in free}
            )
        return expr
    return sympy.sympify(value)

SIGNS = ("nonnegative", "symmetric", "two-sided")


class UnsupportedFamilyError(ValueError):
    """Requested operation is not available for this family."""


class MomentExistenceError(ValueError):
    """A moment of order >= the tail index was requested."""


@dataclass(frozen=True)
class TailVector:
    """Coefficients of a tail expansion in a given scale.

    `positive_leading` is the tail-positivity claim: the first nonzero
    coefficient of an actual tail must be positive.  Derivative expansions
    of odd order alternate sign and set the flag off.
    """

    basis: ScaleBasis
    p: tuple
    positive_leading: bool = True

    def __post_init__(self) -> None:
        if len(self.p) != len(self.basis):
            raise ValueError("coefficient vector length must match the scale")
        if not self.positive_leading:
            return
        for coeff in self.p:
            if coeff == 0:
                continue
            if _known_negative(coeff):
                raise ValueError("leading tail coefficient must be positive")
            break

    def pairs(self) -> list[tuple]:
        """(exponent pair, coefficient) for the nonzero entries."""
        return [
            (it.key(), c) for it, c in zip(self.basis.items, self.p) if c != 0
        ]

    def evaluate(self, t: float, n_terms: int | None = None) -> float:
        """Numeric value of the (truncated) expansion at t."""
        total = 0.0
        used = 0
        for it, c in zip(self.basis.items, self.p):
            if c == 0:
                continue
            if n_terms is not None and used >= n_terms:
                break
            term = float(sympy.sympify(c)) * t ** (-float(it.a))
            if not it.b.is_zero:
                term *= math.log(t) ** float(it.b)
            total += term
            used += 1
        return total


@dataclass(frozen=True)
class DistributionSpec:
    """A member of one of the supported heavy-tail families.

    `sign` states the support convention; two-sided laws must carry an
    explicit lower-tail expansion (`lower_terms`).  `moment_values`
    overrides closed-form moments (required for power-series specs) and is
    treated as synthetic.
    """

    family: str
    params: Mapping[str, Any]
    sign: str = "nonnegative"
    lower_terms: tuple | None = None
    moment_values: tuple | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"unknown family {self.family!r}")
        if self.sign not in SIGNS:
            raise ValueError(f"unknown sign convention {self.sign!r}")
        if self.sign == "two-sided" and self.lower_terms is None:
            raise ValueError("two-sided law needs an explicit lower-tail expansion")

    def param(self, name: str) -> Any:
        return sympy.sympify(self.params[name])


def tail_index(spec: DistributionSpec) -> sympy.Expr:
    """Index alpha of regular variation of the upper tail."""
    p = spec.param
    if spec.family == "burr":
        return sympy.expand(p("tau") * p("gamma"))
    if spec.family in ("hall-weissman", "frechet", "pareto", "student", "log-gamma"):
        return sympy.sympify(p("alpha"))
    if spec.family == "power-series":
        terms = _power_series_terms(spec)
        return terms[0][0]
    raise UnsupportedFamilyError(f"{spec.family} has no power-law tail index")


def _power_series_terms(spec: DistributionSpec) -> list[tuple]:
    out = []
    for entry in spec.params["terms"]:
        a, b, c = entry
        out.append((sympy.expand(sympy.sympify(a)), sympy.sympify(b), sympy.sympify(c)))
    return out


def tail_terms(spec: DistributionSpec) -> Iterator[tuple]:
    """Yield (a, b, coeff) tail-expansion terms in increasing depth.

    The iterator is infinite for families with full series expansions;
    consumers stop it by term count or by exponent cutoff.
    """
    p = spec.param
    if spec.family == "burr":
        beta, tau, gam = p("beta"), p("tau"), p("gamma")
        k = 0
        while True:
            coeff = (-1) ** k * sympy.rf(gam, k) / math.factorial(k) * beta ** (gam + k)
            yield (sympy.expand(tau * gam + k * tau), sympy.S.Zero, coeff)
            k += 1
    elif spec.family == "hall-weissman":
        a, b = p("a"), p("b")
        alpha, beta = p("alpha"), p("beta")
        yield (sympy.sympify(alpha), sympy.S.Zero, a / (a + b))
        yield (sympy.sympify(beta), sympy.S.Zero, b / (a + b))
    elif spec.family == "frechet":
        alpha = p("alpha")
        k = 1
        while True:
            yield (
                sympy.expand(alpha * k),
                sympy.S.Zero,
                Fraction((-1) ** (k + 1), math.factorial(k)),
            )
            k += 1
    elif spec.family == "pareto":
        alpha = p("alpha")
        k = 0
        while True:
            coeff = (-1) ** k * sympy.rf(alpha, k) / math.factorial(k)
            yield (sympy.expand(alpha + k), sympy.S.Zero, coeff)
            k += 1
    elif spec.family == "student":
        alpha = p("alpha")
        K = _student_constant(spec)
        k = 0
        while True:
            coeff = (
                K
                * alpha ** ((alpha + 1) / 2)
                * (-1) ** k
                * sympy.rf((alpha + 1) / 2, k)
                * alpha ** k
                / (math.factorial(k) * (alpha + 2 * k))
            )
            yield (sympy.expand(alpha + 2 * k), sympy.S.Zero, coeff)
            k += 1
    elif spec.family == "log-gamma":
        lam, alpha = p("lambda"), p("alpha")
        k = 0
        while True:
            coeff = sympy.ff(lam - 1, k) * alpha ** (lam - 1 - k) / sympy.gamma(lam)
            if coeff.is_zero:
                return  # integer lambda: the expansion terminates
            yield (sympy.sympify(alpha), sympy.expand(lam - 1 - k), coeff)
            k += 1
    elif spec.family == "power-series":
        yield from _power_series_terms(spec)
    else:
        raise UnsupportedFamilyError(
            f"{spec.family} has no heavy-tail power expansion"
        )


def _student_constant(spec: DistributionSpec):
    """Normalising constant of the Student density, kept in Gamma form."""
    alpha = spec.param("alpha")
    return sympy.gamma((alpha + 1) / 2) / (
        sympy.sqrt(alpha * sympy.pi) * sympy.gamma(alpha / 2)
    )


def lower_tail_terms(spec: DistributionSpec) -> list[tuple]:
    """Terms of the lower tail P{X <= -t}, empty for nonnegative laws."""
    if spec.sign == "nonnegative":
        return []
    if spec.sign == "symmetric":
        gen = tail_terms(spec)
        return gen  # caller truncates exactly like the upper tail
    return [
        (sympy.expand(sympy.sympify(a)), sympy.sympify(b), sympy.sympify(c))
        for a, b, c in spec.lower_terms
    ]


def collect_terms(
    spec: DistributionSpec,
    *,
    cutoff=None,
    n_terms: int | None = None,
    max_log_depth: int | None = None,
    floors=None,
    lower: bool = False,
) -> list[tuple]:
    """Materialise tail terms up to a cutoff exponent and/or a term count."""
    if lower and spec.sign == "two-sided":
        source: Iterator = iter(lower_tail_terms(spec))
    elif lower and spec.sign == "nonnegative":
        return []
    else:
        source = iter(tail_terms(spec))
    out = []
    count = 0
    for a, b, c in source:
        if n_terms is not None and count >= n_terms:
            break
        if max_log_depth is not None and count >= max_log_depth and not b.is_zero:
            break
        if cutoff is not None and gap_sign(a, cutoff, floors) > 0:
            break
        out.append((a, b, c))
        count += 1
    if n_terms is not None and count < n_terms:
        raise UnsupportedFamilyError(
            f"{spec.family} expansion has only {count} terms"
        )
    return out


def expand_tail(spec: DistributionSpec, n_terms: int) -> tuple[ScaleBasis, TailVector]:
    """First `n_terms` of the tail expansion, as a scale plus coefficients."""
    if n_terms < 1:
        raise ValueError("need at least one term")
    terms = collect_terms(spec, n_terms=n_terms)
    items = tuple(ScaleItem(a, b) for a, b, _ in terms)
    basis = ScaleBasis(items, cutoff=items[-1].a)
    return basis, TailVector(basis, tuple(c for _, _, c in terms))


# ---------------------------------------------------------------------------
# Moments


def fractional_moment(spec: DistributionSpec, s) -> sympy.Expr:
    """E X^s in closed form (X ~ spec), for 0 <= s < alpha where applicable."""
    s = sympy.sympify(s)
    if s.is_zero:
        return sympy.S.One
    p = spec.param
    if spec.moment_values is not None:
        if s.is_integer and 0 <= int(s) < len(spec.moment_values):
            return sympy.sympify(spec.moment_values[int(s)])
        raise MomentExistenceError("only listed integer moments are available")
    if spec.family == "burr":
        beta, tau, gam = p("beta"), p("tau"), p("gamma")
        _require_below_index(s, tau * gam)
        return (
            beta ** (s / tau)
            * sympy.gamma(gam - s / tau)
            * sympy.gamma(1 + s / tau)
            / sympy.gamma(gam)
        )
    if spec.family == "pareto":
        alpha = p("alpha")
        _require_below_index(s, alpha)
        # X = Y - 1 with P{Y > y} = y^-alpha on y >= 1.
        if s.is_integer and s.is_positive:
            j = int(s)
            return sympy.cancel(
                sum(
                    math.comb(j, i) * (-1) ** (j - i) * alpha / (alpha - i)
                    for i in range(j + 1)
                )
            )
        return alpha * sympy.gamma(alpha - s) * sympy.gamma(s + 1) / sympy.gamma(alpha + 1)
    if spec.family == "frechet":
        alpha = p("alpha")
        _require_below_index(s, alpha)
        return sympy.gamma(1 - s / alpha)
    if spec.family == "exponential":
        theta = p("theta")
        return theta ** s * sympy.gamma(s + 1)
    if spec.family == "log-gamma":
        lam, alpha = p("lambda"), p("alpha")
        _require_below_index(s, alpha)
        return (1 - s / alpha) ** (-lam)
    if spec.family == "point-mass":
        return p("value") ** s
    if spec.family == "student":
        alpha = p("alpha")
        _require_below_index(s, alpha)
        if not s.is_integer:
            raise UnsupportedFamilyError("Student moments: integer orders only")
        j = int(s)
        if j % 2 == 1:
            return sympy.S.Zero
        r = j // 2
        out = alpha ** r
        for i in range(1, r + 1):
            out *= sympy.Rational(2 * i - 1, 1) / (alpha - 2 * i)
        return out
    if spec.family == "hall-weissman":
        a, b = p("a"), p("b")
        alpha, beta = p("alpha"), p("beta")
        _require_below_index(s, alpha)
        if s == 1:
            # Mean pinned by the customary convention for this family; the
            # body below the tail threshold is otherwise unspecified.
            return (a / (alpha - 1) + b / (beta - 1)) / (a + b)
        raise UnsupportedFamilyError(
            "Hall-Weissman moments beyond the mean are not determined by the tail"
        )
    raise UnsupportedFamilyError(f"no closed-form moments for {spec.family}")


def _require_below_index(s, alpha) -> None:
    try:
        if gap_sign(s, alpha) >= 0:
            raise MomentExistenceError(f"moment order {s} >= tail index {alpha}")
    except IncomparableExponentsError:
        pass  # symbolic order vs index: caller asserts integrability


def moments(spec: DistributionSpec, m: int) -> MomentVector:
    """Raw moments mu_0..mu_m; errors if any requested order >= alpha."""
    mu = tuple(fractional_moment(spec, j) if j else sympy.S.One for j in range(m + 1))
    return MomentVector(mu, synthetic=spec.moment_values is not None)


def mellin_log_moment(spec: DistributionSpec, s, logpow: int = 0) -> sympy.Expr:
    """E[X^s (log X)^k], computed as the k-th derivative of s -> E X^s."""
    if logpow == 0:
        return fractional_moment(spec, s)
    svar = sympy.Dummy("s")
    expr = fractional_moment(spec, svar)
    return sympy.expand(sympy.diff(expr, svar, logpow).subs(svar, sympy.sympify(s)))


# ---------------------------------------------------------------------------
# Numeric helpers (exact tail function, quantiles) used by the oracle


def tail_callable(spec: DistributionSpec) -> Callable[[float], float]:
    """Exact upper tail t -> P{X > t} as a float function."""
    p = spec.param
    if spec.family == "burr":
        beta, tau, gam = float(p("beta")), float(p("tau")), float(p("gamma"))
        return lambda t: (1.0 + t ** tau / beta) ** (-gam)
    if spec.family == "pareto":
        alpha = float(p("alpha"))
        return lambda t: (1.0 + t) ** (-alpha) if t >= 0 else 1.0
    if spec.family == "frechet":
        alpha = float(p("alpha"))
        return lambda t: -math.expm1(-(t ** (-alpha))) if t > 0 else 1.0
    if spec.family == "exponential":
        theta = float(p("theta"))
        return lambda t: math.exp(-t / theta) if t >= 0 else 1.0
    if spec.family == "student":
        from scipy import stats

        alpha = float(p("alpha"))
        return lambda t: float(stats.t.sf(t, df=alpha))
    if spec.family == "log-gamma":
        from scipy import stats

        lam, alpha = float(p("lambda")), float(p("alpha"))
        return lambda t: float(stats.gamma.sf(alpha * math.log(max(t, 1.0)), a=lam))
    raise UnsupportedFamilyError(f"no exact tail function for {spec.family}")


# ---------------------------------------------------------------------------
# JSON wire format


def spec_from_json(doc: Mapping[str, Any]) -> DistributionSpec:
    """Parse a distribution document: family, params, sign, optional terms."""
    family = doc["family"]
    params = {k: v for k, v in doc.get("params", {}).items()}
    sign = doc.get("sign", "nonnegative")
    lower = doc.get("lower_tail")
    lower_terms = tuple(tuple(t) for t in lower) if lower is not None else None
    mv = doc.get("moments")
    moment_values = tuple(parse_scalar(x) for x in mv) if mv is not None else None
    return DistributionSpec(
        family=family,
        params=params,
        sign=sign,
        lower_terms=lower_terms,
        moment_values=moment_values,
    )


def spec_to_json(spec: DistributionSpec) -> dict:
    doc: dict[str, Any] = {
        "family": spec.family,
        "params": {k: str(v) for k, v in spec.params.items()},
        "sign": spec.sign,
    }
    if spec.lower_terms is not None:
        doc["lower_tail"] = [[str(x) for x in t] for t in spec.lower_terms]
    if spec.moment_values is not None:
        doc["moments"] = [str(x) for x in spec.moment_values]
    return doc
