"""Weighted-sum machinery: weight power sums and the master tail expansion.

The expansion of the tail (and tail derivatives) of ``sum_i c_i X_i``
is assembled on a derivative-closed scale as

    L_G  *  sum_i  L_{M_{c_i}F}^{-1}  D^k  M_{c_i}  p,

with p the tail vector of the innovation law (upper or lower tail per the
sign of the weight).  For analytic weight families (AR(1), MA(q)) and for
generic symbolic weights the sum over i collapses into a substitution
``c^s -> C_s`` of weight power sums; explicit lists are summed term by
term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import sympy

from . import tails
from .laplace import (
    MomentVector,
    Scalar,
    SeriesPoly,
    character_from_moments,
    invert_nilpotent,
    moment_series,
)
from .scale import (
    ScaleBasis,
    ScaleItem,
    character_matrix,
    close_under_derivative,
    derivative_matrix,
    lower_solve,
    mat_vec,
    operator_matrix,
    scaling_matrix,
)
from .tails import DistributionSpec, TailVector

# Formal weight power sums: C(s) = sum_i c_i^s, CL(s, k) = sum_i c_i^s log(c_i)^k.
C = sympy.Function("C")
CL = sympy.Function("CL")


class EngineError(ValueError):
    pass


class DivergenceError(EngineError):
    """A requested weight power sum does not converge."""


class PreconditionError(EngineError):
    """An expansion request violates its validity conditions."""


@dataclass(frozen=True)
class WeightSequence:
    """Deterministic weight sequence c = (c_i).

    kinds: ``explicit`` (finite list), ``ar1`` (c_i = a^i, 0 < a < 1),
    ``maq`` (finite moving-average coefficients), ``generic`` (formal
    nonnegative weights; power sums stay symbolic as C(s), CL(s, k)).
    """

    kind: str
    values: tuple = ()
    a: Any = None
    phi: tuple = ()

    def __post_init__(self) -> None:
        if self.kind not in ("explicit", "ar1", "maq", "generic"):
            raise EngineError(f"unknown weight kind {self.kind!r}")
        if self.kind == "explicit":
            object.__setattr__(
                self, "values", tuple(sympy.sympify(v) for v in self.values)
            )
            if not self.values:
                raise EngineError("explicit weight list is empty")
        if self.kind == "maq":
            object.__setattr__(self, "phi", tuple(sympy.sympify(v) for v in self.phi))
            if not self.phi:
                raise EngineError("MA(q) weight list is empty")
        if self.kind == "ar1":
            a = sympy.sympify(self.a)
            object.__setattr__(self, "a", a)
            if a.is_number and not (a > 0 and a < 1):
                raise EngineError("AR(1) weight needs 0 < a < 1")

    # -- basic structure ----------------------------------------------------

    @property
    def finite_list(self) -> tuple | None:
        if self.kind == "explicit":
            return self.values
        if self.kind == "maq":
            return self.phi
        return None

    @property
    def has_negative(self) -> bool:
        lst = self.finite_list
        if lst is None:
            return False
        return any(v.is_number and v < 0 for v in lst)

    def truncated_values(self, n: int) -> list:
        """First n weights; exact for finite lists."""
        if self.kind == "ar1":
            return [self.a ** i for i in range(n)]
        lst = self.finite_list
        if lst is None:
            raise EngineError("generic weights cannot be materialised")
        return list(lst[:n])

    # -- power sums ----------------------------------------------------------

    def power_sum(self, p) -> Scalar:
        """C_p = sum_i c_i^p (signed for integer p on explicit lists)."""
        p = sympy.sympify(p)
        if self.kind == "generic":
            return C(p)
        if self.kind == "ar1":
            if p.is_number and p <= 0:
                raise DivergenceError("AR(1) power sum needs p > 0")
            return 1 / (1 - self.a ** p)
        lst = self.finite_list
        if not p.is_integer:
            for v in lst:
                if v.is_number and v < 0:
                    raise DivergenceError(
                        "fractional power sum of a signed list is undefined"
                    )
        return sympy.expand(sum((v ** p for v in lst if v != 0), sympy.S.Zero))

    def power_log_sum(self, s, k: int) -> Scalar:
        """(C log C)_{s,k} = sum_i c_i^s log(c_i)^k."""
        if k == 0:
            return self.power_sum(s)
        s = sympy.sympify(s)
        if self.kind == "generic":
            return CL(s, sympy.Integer(k))
        if self.kind == "ar1":
            # sum_{i>=1} i^k a^{is} (log a)^k; the i=0 weight contributes 0.
            x = self.a ** s
            return sympy.expand_func(sympy.polylog(-k, x)) * sympy.log(self.a) ** k
        lst = self.finite_list
        total = sympy.S.Zero
        for v in lst:
            if v == 0 or v == 1:
                continue
            if v.is_number and v < 0:
                raise DivergenceError("log power sum of a signed list is undefined")
            total += v ** s * sympy.log(v) ** k
        return sympy.expand(total)

    def abs_power_sum(self, r) -> Scalar:
        """|C|_r = sum |c_i|^r."""
        if self.kind in ("generic", "ar1"):
            return self.power_sum(r)
        lst = self.finite_list
        return sympy.expand(sum((sympy.Abs(v) ** r for v in lst if v != 0), sympy.S.Zero))

    def signed_power_sum(self, r) -> Scalar:
        """sum sign(c_i) |c_i|^r."""
        if self.kind in ("generic", "ar1"):
            return self.power_sum(r)
        lst = self.finite_list
        return sympy.expand(
            sum((sympy.sign(v) * sympy.Abs(v) ** r for v in lst if v != 0), sympy.S.Zero)
        )

    def sup_abs(self) -> Scalar:
        if self.kind == "ar1":
            return sympy.S.One
        lst = self.finite_list
        if lst is None:
            raise EngineError("generic weights have no numeric supremum")
        return sympy.Max(*[sympy.Abs(v) for v in lst])


def power_sum(w: WeightSequence, p) -> Scalar:
    return w.power_sum(p)


def cross_sum(w: WeightSequence, p, q) -> Scalar:
    """C_{p;q} = C_{p+q} - C_p C_q."""
    return sympy.expand(
        w.power_sum(sympy.sympify(p) + sympy.sympify(q))
        - w.power_sum(p) * w.power_sum(q)
    )


def norm_N(w: WeightSequence, alpha, gamma, omega) -> Scalar:
    """max of the ell_p quasi-norm at p = gamma*(alpha/(alpha+omega) ^ 1/2)
    and ``2^(alpha/(alpha+omega)) sup |c_i|``."""
    alpha, gamma, omega = map(sympy.sympify, (alpha, gamma, omega))
    p = gamma * sympy.Min(alpha / (alpha + omega), sympy.Rational(1, 2))
    lp = w.abs_power_sum(p) ** (1 / p)
    return sympy.Max(lp, 2 ** (alpha / (alpha + omega)) * w.sup_abs())


@dataclass(frozen=True)
class ExpansionRequest:
    """Order bookkeeping for one expansion run.

    m: number of correction orders (m < alpha); k: derivative order;
    omega: assumed smoothness order, gamma: norm parameter (both recorded
    and sanity-checked when numeric); log_depth caps the number of
    log-power terms drawn from a single family (default m+1).
    """

    m: int
    k: int = 0
    omega: Any = None
    gamma: Any = None
    log_depth: int | None = None

    def __post_init__(self) -> None:
        if self.m < 0 or self.k < 0:
            raise PreconditionError("orders must be nonnegative")

    @property
    def effective_log_depth(self) -> int:
        return self.log_depth if self.log_depth is not None else self.m + 1

    def validate(self, alpha) -> None:
        alpha = sympy.sympify(alpha)
        if alpha.is_number and not (sympy.Integer(self.m) < alpha):
            raise PreconditionError(f"m = {self.m} must be < tail index {alpha}")
        if self.omega is not None:
            omega = sympy.sympify(self.omega)
            if omega.is_number and not (sympy.Integer(self.m + self.k) < omega):
                raise PreconditionError("m + k must be < smoothness order omega")
            if self.gamma is not None:
                gamma = sympy.sympify(self.gamma)
                if gamma.is_number and not (
                    0 < gamma < 1 and gamma < omega - self.m - self.k
                ):
                    raise PreconditionError("gamma must lie in (0, min(1, omega-m-k))")


# ---------------------------------------------------------------------------
# Moments of the weighted sum


def _modified_moments(fm: MomentVector, m: int, multiplier) -> MomentVector:
    """Moments of a law whose k-th cumulant is multiplier(k) times F's.

    Series route: take log of the moment series, scale the degree-k
    coefficient by multiplier(k), exponentiate back.
    """
    p1 = moment_series(fm.truncated(m))
    p2 = p1.log()
    p3 = SeriesPoly((sympy.S.Zero,) + tuple(p2[j] * multiplier(j) for j in range(1, m + 1)))
    p4 = p3.exp()
    mu = tuple(
        sympy.expand(sympy.sympify(math.factorial(j) * p4[j])) for j in range(m + 1)
    )
    return MomentVector(mu, synthetic=fm.synthetic)


def g_moments(w: WeightSequence, fm: MomentVector, m: int) -> MomentVector:
    """Moments of the full weighted sum: cumulants scale by C_k."""
    return _modified_moments(fm, m, lambda k: w.power_sum(k))


def residual_moments(w: WeightSequence, i: int, fm: MomentVector, m: int) -> MomentVector:
    """Moments of the weighted sum with the i-th summand removed."""
    lst = w.finite_list
    if w.kind == "ar1":
        ci = w.a ** i
    elif lst is not None:
        ci = lst[i]
    else:
        raise EngineError("residual moments need a materialisable weight sequence")
    return _modified_moments(fm, m, lambda k: w.power_sum(k) - ci ** k)


def _residual_moments_symbolic(w: WeightSequence, c, fm: MomentVector, m: int) -> MomentVector:
    return _modified_moments(fm, m, lambda k: w.power_sum(k) - c ** k)


# ---------------------------------------------------------------------------
# Master expansion


def _floors_for(alpha, req: ExpansionRequest) -> dict:
    """Symbol lower bounds usable in exponent comparisons (alpha > m)."""
    alpha = sympy.sympify(alpha)
    if alpha.is_Symbol:
        return {alpha: Fraction(req.m)}
    return {}


def _place_terms(basis: ScaleBasis, terms: Iterable[tuple]) -> list:
    """Coefficient vector over the basis; duplicate exponents merge by sum."""
    vec = [sympy.S.Zero] * len(basis)
    for a, b, coeff in terms:
        idx = basis.index_of(a, b)
        if idx is None:
            raise EngineError(f"term t^-({a}) log^({b}) missing from the closed scale")
        vec[idx] = sympy.expand(vec[idx] + coeff)
    return vec


def _substitute_weight_powers(expr, c, w: WeightSequence):
    """Replace c^s log(c)^k monomials by weight power sums C_s, (C log C)_{s,k}."""
    expr = sympy.expand(expr)
    if expr.is_zero:
        return sympy.S.Zero
    logc = sympy.log(c)
    out = sympy.S.Zero
    for term in sympy.Add.make_args(expr):
        e = sympy.S.Zero
        k = 0
        rest = sympy.S.One
        for factor in sympy.Mul.make_args(term):
            base, expo = factor.as_base_exp()
            if base == c:
                e = e + expo
            elif base == logc:
                k += int(expo)
            elif factor.has(c):
                raise EngineError(f"cannot isolate weight power in {factor}")
            else:
                rest = rest * factor
        if e.is_zero and k == 0:
            raise EngineError("weight-free term in a per-weight summand")
        out = out + rest * w.power_log_sum(sympy.expand(e), k)
    return sympy.expand(out)


def _scaled_char_inverse_matrix(fm: MomentVector, m: int, c, D):
    """Matrix of the inverse character of M_c F (moments c^j mu_j)."""
    scaled = MomentVector(
        tuple(c ** j * fm.mu[j] for j in range(m + 1)), synthetic=True
    )
    inv = invert_nilpotent(character_from_moments(scaled))
    return operator_matrix(inv.coeff, D)


def _closed_basis(spec: DistributionSpec, req: ExpansionRequest, need_lower: bool):
    alpha = tails.tail_index(spec)
    req.validate(alpha)
    floors = _floors_for(alpha, req)
    cutoff = sympy.expand(alpha + req.m + req.k)
    upper = tails.collect_terms(
        spec, cutoff=cutoff, floors=floors, max_log_depth=req.effective_log_depth
    )
    lower = (
        tails.collect_terms(
            spec,
            cutoff=cutoff,
            floors=floors,
            max_log_depth=req.effective_log_depth,
            lower=True,
        )
        if need_lower
        else []
    )
    seed = [ScaleItem(a, b) for a, b, _ in list(upper) + list(lower)]
    basis = close_under_derivative(seed, cutoff, floors)
    return basis, upper, lower


def _per_weight_sum(
    w: WeightSequence,
    spec: DistributionSpec,
    req: ExpansionRequest,
    basis: ScaleBasis,
    D,
    p_up,
    p_low,
    fm: MomentVector,
    *,
    direct: bool,
):
    """sum_i Op_i D^k M_{c_i} p, with Op the inverse character (convolution
    route) or the residual character (direct route)."""
    n = len(basis)

    def _one_weight(ci, op_matrix):
        mag = sympy.Abs(ci) if ci.is_number else ci
        if ci.is_number and ci < 0:
            if spec.sign == "nonnegative":
                return None  # upper tail of c_i X_i vanishes
            base = p_low
            if base is None:
                raise PreconditionError(
                    "negative weight needs a lower-tail expansion"
                )
        else:
            base = p_up
        v = mat_vec(scaling_matrix(basis, mag), base)
        for _ in range(req.k):
            v = mat_vec(D, v)
        return mat_vec(op_matrix, v)

    if w.kind in ("generic", "ar1", "maq"):
        c = sympy.Dummy("c", positive=True)
        if direct:
            rm = _residual_moments_symbolic(w, c, fm, req.m)
            op = character_matrix(rm, D)
        else:
            op = _scaled_char_inverse_matrix(fm, req.m, c, D)
        v = _one_weight(c, op)
        return [_substitute_weight_powers(entry, c, w) for entry in v]

    acc = [sympy.S.Zero] * n
    for i, ci in enumerate(w.values):
        if ci == 0:
            continue
        if direct:
            op = character_matrix(residual_moments(w, i, fm, req.m), D)
        else:
            op = _scaled_char_inverse_matrix(fm, req.m, ci, D)
        v = _one_weight(ci, op)
        if v is None:
            continue
        acc = [x + y for x, y in zip(acc, v)]
    return acc


def _expand(w, spec, req, *, direct: bool) -> TailVector:
    need_lower = w.has_negative and spec.sign != "nonnegative"
    basis, upper, lower = _closed_basis(spec, req, need_lower)
    D = derivative_matrix(basis)
    p_up = _place_terms(basis, upper)
    p_low = _place_terms(basis, lower) if need_lower else None
    fm = tails.moments(spec, req.m)
    s = _per_weight_sum(w, spec, req, basis, D, p_up, p_low, fm, direct=direct)
    if direct:
        q = s
    else:
        lg = character_matrix(g_moments(w, fm, req.m), D)
        q = mat_vec(lg, s)
    return TailVector(
        basis,
        tuple(sympy.expand(x) for x in q),
        positive_leading=(req.k % 2 == 0),
    )


def expand_convolution(
    w: WeightSequence, spec: DistributionSpec, req: ExpansionRequest
) -> TailVector:
    """Tail expansion of the k-th derivative of the weighted-sum tail,
    computed through the inverse-character route (one matrix inversion,
    analytic weight families allowed)."""
    return _expand(w, spec, req, direct=False)


def expand_direct(
    w: WeightSequence, spec: DistributionSpec, req: ExpansionRequest
) -> TailVector:
    """Same expansion through per-summand residual characters (no matrix
    inversion); explicit finite weight lists only."""
    if w.finite_list is None and w.kind != "generic":
        raise PreconditionError("direct route needs an explicit weight list")
    return _expand(w, spec, req, direct=True)


def degenerate_tail(
    w: WeightSequence, alpha, m: int, fm: MomentVector
) -> TailVector:
    """Innovation tail vector whose full m-order expansion collapses to the
    leading term alone.

    Solves the lower-triangular system ``(L_G sum_i L_i^-1 M_{c_i}) p = e_0``
    on the pure-power scale {t^-(alpha+j)}; the diagonal is
    (C_alpha, ..., C_(alpha+m)).
    """
    alpha = sympy.sympify(alpha)
    req = ExpansionRequest(m=m)
    floors = _floors_for(alpha, req)
    basis = close_under_derivative([alpha], alpha + m, floors)
    D = derivative_matrix(basis)
    n = len(basis)

    if w.kind in ("generic", "ar1", "maq"):
        c = sympy.Dummy("c", positive=True)
        mat = [
            row[:]
            for row in _matmul_cols(
                _scaled_char_inverse_matrix(fm, m, c, D), scaling_matrix(basis, c)
            )
        ]
        A = [[_substitute_weight_powers(x, c, w) if x != 0 else sympy.S.Zero for x in row] for row in mat]
    else:
        A = [[sympy.S.Zero] * n for _ in range(n)]
        for ci in w.values:
            if ci == 0:
                continue
            if ci.is_number and ci < 0:
                raise PreconditionError("degenerate construction assumes c_i >= 0")
            term = _matmul_cols(
                _scaled_char_inverse_matrix(fm, m, ci, D), scaling_matrix(basis, ci)
            )
            A = [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(A, term)]

    B = _matmul_cols(character_matrix(g_moments(w, fm, m), D), A)
    for j in range(n):
        if B[j][j] == 0:
            raise EngineError("degenerate system has a singular diagonal")
    e0 = [sympy.S.One] + [sympy.S.Zero] * (n - 1)
    p = lower_solve([[sympy.expand(x) for x in row] for row in B], e0)
    return TailVector(basis, tuple(sympy.expand(sympy.together(x)) for x in p))


def _matmul_cols(a, b):
    from .scale import mat_mul

    return mat_mul(a, b)


# ---------------------------------------------------------------------------
# JSON wire format


def weights_from_json(doc: Mapping[str, Any]) -> WeightSequence:
    kind = doc["kind"]
    if kind == "explicit":
        return WeightSequence(kind="explicit", values=tuple(doc["values"]))
    if kind == "ar1":
        return WeightSequence(kind="ar1", a=doc["a"])
    if kind == "maq":
        return WeightSequence(kind="maq", phi=tuple(doc["phi"]))
    if kind == "generic":
        return WeightSequence(kind="generic")
    raise EngineError(f"unknown weight kind {kind!r}")


def weights_to_json(w: WeightSequence) -> dict:
    if w.kind == "explicit":
        return {"kind": "explicit", "values": [str(v) for v in w.values]}
    if w.kind == "ar1":
        return {"kind": "ar1", "a": str(w.a)}
    if w.kind == "maq":
        return {"kind": "maq", "phi": [str(v) for v in w.phi]}
    return {"kind": "generic"}
