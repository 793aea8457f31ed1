"""Application solvers built on the character algebra.

Randomly stopped sums, compound Poisson laws, the M/G/1 waiting-time tail,
subcritical branching intensity, infinitely divisible tails, explicit and
implicit transient renewal equations, second-order regular-variation
classification, and the asymptotic variance of the Hill estimator for
linear processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

import sympy

from . import tails
from .engine import (
    EngineError,
    ExpansionRequest,
    PreconditionError,
    WeightSequence,
    g_moments,
)
from .laplace import (
    LaplaceCharacter,
    MomentVector,
    SeriesPoly,
    character_from_moments,
    compose,
    equilibrium_moments,
    identity_character,
    invert_partitions,
    laplace_series,
    mellin_character,
    moment_series,
    subtract,
)
from .scale import (
    ScaleBasis,
    ScaleItem,
    character_matrix,
    close_under_derivative,
    derivative_matrix,
    lower_solve,
    mat_eye,
    mat_mul,
    mat_sub,
    mat_vec,
    operator_matrix,
)
from .tails import DistributionSpec, TailVector


# ---------------------------------------------------------------------------
# Randomly stopped sums


def stopped_sum_operator(
    n_moments: MomentVector, fm: MomentVector, m: int
) -> tuple:
    """Coefficients of the operator E[N L_{F^*(N-1)}] in R_m[D].

    Built from the Laplace-transform series: with L_X(u), L_N(u) the
    transform series of the summand and of the count, the operator's D^j
    coefficient is ``-(1/j!) d^j/du^j [ L_N'(-log L_X(u)) / L_X(u) ]`` at
    u = 0.  Moments of N are needed to order m+1.
    """
    if n_moments.m < m + 1:
        raise PreconditionError("count law needs moments to order m+1")
    lam_x = laplace_series(fm, m)
    if lam_x[0] == 0:
        raise PreconditionError("summand transform has zero constant term")
    # Series of L_N'(u) to degree m: coefficient of u^k is -(-1)^k nu_{k+1}/k!.
    lam_n_prime = SeriesPoly(
        tuple(
            -Fraction((-1) ** k, math.factorial(k)) * n_moments.mu[k + 1]
            for k in range(m + 1)
        )
    )
    inner = lam_x.log().scale(-1)  # -log L_X(u), zero constant term
    a = lam_n_prime.compose(inner).mul(lam_x.reciprocal())
    return tuple(sympy.expand(sympy.sympify(-a[j])) for j in range(m + 1))


def count_moments_from_transform(transform: SeriesPoly) -> MomentVector:
    """Moments nu_j = (-1)^j j! [u^j] L_N(u) from a transform series."""
    mu = tuple(
        sympy.expand(sympy.sympify((-1) ** j * math.factorial(j) * transform[j]))
        for j in range(transform.order + 1)
    )
    return MomentVector(mu)


def geometric_count_moments(a, order: int) -> MomentVector:
    """Moments of N with P{N = k} = (1-a) a^k, k >= 0, via its transform
    (1-a) / (1 - a e^-u)."""
    a = sympy.sympify(a)
    expu = SeriesPoly(
        tuple(Fraction((-1) ** k, math.factorial(k)) for k in range(order + 1))
    )
    denom = SeriesPoly((1,) + (0,) * order).sub(expu.scale(a))
    return count_moments_from_transform(denom.reciprocal().scale(1 - a))


def poisson_count_moments(a, order: int) -> MomentVector:
    """Moments of a Poisson(a) count via exp(a(e^-u - 1))."""
    a = sympy.sympify(a)
    expu_minus_1 = SeriesPoly(
        (0,) + tuple(Fraction((-1) ** k, math.factorial(k)) for k in range(1, order + 1))
    )
    return count_moments_from_transform(expu_minus_1.scale(a).exp())


def apply_operator(coeffs: Sequence, tv: TailVector) -> TailVector:
    """Apply a D-polynomial operator to a tail vector in its own scale."""
    D = derivative_matrix(tv.basis)
    out = mat_vec(operator_matrix(list(coeffs), D), list(tv.p))
    return TailVector(
        tv.basis,
        tuple(sympy.expand(x) for x in out),
        positive_leading=tv.positive_leading,
    )


def compound_poisson(a, fm: MomentVector, m: int, p_f: TailVector) -> TailVector:
    """Tail of the Poisson(a)-stopped sum: a * L_K applied to the tail of F.

    The compound law K has j-th cumulant ``a mu_{F,j}``; its raw moments are
    reassembled by exponentiating the scaled cumulant series.
    """
    a = sympy.sympify(a)
    muk = compound_poisson_moments(a, fm, m)
    D = derivative_matrix(p_f.basis)
    out = mat_vec(character_matrix(muk, D), list(p_f.p))
    return TailVector(p_f.basis, tuple(sympy.expand(a * x) for x in out))


def _compound_poisson_moment_series(a, p1: SeriesPoly, m: int) -> SeriesPoly:
    one = SeriesPoly((1,) + (0,) * m)
    return p1.sub(one).scale(a).exp()


def compound_poisson_moments(a, fm: MomentVector, m: int) -> MomentVector:
    """Raw moments of the compound Poisson law with intensity a, jumps ~ F."""
    a = sympy.sympify(a)
    mk = _compound_poisson_moment_series(a, moment_series(fm.truncated(m)), m)
    return MomentVector(
        tuple(sympy.expand(sympy.sympify(math.factorial(j) * mk[j])) for j in range(m + 1)),
        synthetic=fm.synthetic,
    )


# ---------------------------------------------------------------------------
# M/G/1 queue


def mg1_load(service: DistributionSpec, mean_interarrival) -> sympy.Expr:
    beta = tails.fractional_moment(service, 1)
    return sympy.sympify(beta / sympy.sympify(mean_interarrival))


def mg1_waiting_tail(
    service: DistributionSpec, mean_interarrival, m: int
) -> tuple:
    """Operator coefficients for the stationary waiting-time tail.

    The waiting time is a geometric(a) compound of the stationary-excess
    law H of the service law (a = service mean / interarrival mean); the
    D^j coefficient applied to the tail of H is
    ``a (1-a) (1/j!) d^j/du^j (1 - a L_H(u))^-2`` at u = 0.
    """
    a = mg1_load(service, mean_interarrival)
    if a.is_number and not (a < 1):
        raise PreconditionError(f"unstable queue: load {a} >= 1")
    bm = tails.moments(service, m + 1)
    hm = equilibrium_moments(bm)
    return _geometric_compound_coeffs(a, hm, m)


def _geometric_compound_coeffs(a, hm: MomentVector, m: int) -> tuple:
    lam_h = laplace_series(hm, m)
    one = SeriesPoly((1,) + (0,) * m)
    b = one.sub(lam_h.scale(a)).reciprocal()
    b2 = b.mul(b)
    return tuple(sympy.expand(sympy.sympify(a * (1 - a) * b2[j])) for j in range(m + 1))


def equilibrium_tail(service_tail: TailVector, mean) -> TailVector:
    """Tail of H(t) = mean^-1 int_0^t Bbar: exponents drop by one.

    Pure-power scales only; the coefficient at t^-(a-1) is p_a/(mean (a-1)).
    """
    items = []
    coeffs = []
    for it, c in zip(service_tail.basis.items, service_tail.p):
        if not it.b.is_zero:
            raise EngineError("stationary-excess tail needs a pure-power scale")
        items.append(ScaleItem(it.a - 1))
        coeffs.append(sympy.expand(c / (sympy.sympify(mean) * (it.a - 1))))
    basis = ScaleBasis(
        tuple(items), sympy.expand(service_tail.basis.cutoff - 1), service_tail.basis.floors
    )
    return TailVector(basis, tuple(coeffs))


def mg1_waiting_expansion(
    service: DistributionSpec, mean_interarrival, m: int, n_terms: int
) -> TailVector:
    """Waiting-time tail expansion assembled on the excess-law scale."""
    coeffs = mg1_waiting_tail(service, mean_interarrival, m)
    _, btail = tails.expand_tail(service, n_terms)
    beta = tails.fractional_moment(service, 1)
    htail = equilibrium_tail(btail, beta)
    # close the excess scale under differentiation before applying D powers
    floors = {}
    basis = close_under_derivative(
        list(htail.basis.items), htail.basis.items[0].a + m, floors
    )
    vec = [sympy.S.Zero] * len(basis)
    for it, c in zip(htail.basis.items, htail.p):
        idx = basis.index_of(it.a, it.b)
        if idx is not None:
            vec[idx] = c
    return apply_operator(coeffs, TailVector(basis, tuple(vec)))


# ---------------------------------------------------------------------------
# Branching


def branching_intensity(fm: MomentVector, rho, m: int) -> tuple:
    """Operator coefficients for the expected-population tail of a
    subcritical age-dependent branching process (offspring mean rho < 1).

    Equals ``rho^-1 E[N L_{F^*(N-1)}]`` for a geometric(rho) count; the
    D^j coefficient is ``(1-rho) (1/j!) d^j/du^j (1 - rho L_F(u))^-2`` at 0.
    """
    rho = sympy.sympify(rho)
    if rho.is_number and not (0 < rho < 1):
        raise PreconditionError("offspring mean must lie in (0, 1)")
    coeffs = _geometric_compound_coeffs(rho, fm, m)
    return tuple(sympy.expand(sympy.cancel(c / rho)) for c in coeffs)


# ---------------------------------------------------------------------------
# Infinitely divisible laws


def infdiv_tail(nu_tail: TailVector, g_moments_vec: MomentVector, m: int) -> TailVector:
    """Tail of an infinitely divisible law from its Levy-measure tail:
    the law's own character applied to the measure's tail expansion."""
    return apply_operator(
        character_from_moments(g_moments_vec.truncated(m)).coeff, nu_tail
    )


# ---------------------------------------------------------------------------
# Renewal equations


@dataclass(frozen=True)
class RenewalProblem:
    """F - a F*H = K (explicit) or F = K * (H mellin* F) (implicit, a None)."""

    h: DistributionSpec
    k: DistributionSpec
    m: int
    a: Any = None

    def __post_init__(self) -> None:
        if self.a is not None:
            a = sympy.sympify(self.a)
            if a.is_number and not (abs(a) < 1):
                raise PreconditionError("transient renewal needs |a| < 1")


def renewal_solve(prob: RenewalProblem) -> tuple[LaplaceCharacter, TailVector]:
    """Solve F - a F*H = K for the character of F and the tail of
    G = (1-a) F.

    Character: L_F = (Id - a L_H)^-1 o L_K.  Tail: the lower-triangular
    system (Id - a L_H) p_G = (1-a) p_K + a L_G p_H on a common scale.
    """
    if prob.a is None:
        raise PreconditionError("explicit renewal needs the multiplier a")
    a = sympy.sympify(prob.a)
    m = prob.m
    hm = tails.moments(prob.h, m)
    km = tails.moments(prob.k, m)
    lh = character_from_moments(hm)
    lk = character_from_moments(km)
    id_m = identity_character(m)
    resolvent = LaplaceCharacter(
        tuple(i - a * l for i, l in zip(id_m.coeff, lh.coeff))
    )
    lf = compose(invert_partitions(resolvent), lk)

    alpha_h = tails.tail_index(prob.h)
    alpha_k = tails.tail_index(prob.k)
    alpha = alpha_k if sympy.sympify(alpha_k - alpha_h).is_nonpositive else alpha_h
    cutoff = sympy.expand(alpha + m)
    h_terms = tails.collect_terms(prob.h, cutoff=cutoff)
    k_terms = tails.collect_terms(prob.k, cutoff=cutoff)
    seed = [ScaleItem(x, b) for x, b, _ in h_terms + k_terms]
    basis = close_under_derivative(seed, cutoff)
    D = derivative_matrix(basis)

    def _place(terms):
        vec = [sympy.S.Zero] * len(basis)
        for x, b, c in terms:
            vec[basis.index_of(x, b)] += c
        return vec

    p_h = _place(h_terms)
    p_k = _place(k_terms)
    mu_g = MomentVector(
        tuple(sympy.expand((1 - a) * mu) if j else sympy.S.One for j, mu in enumerate(lf.moments)),
        synthetic=True,
    )
    lg_mat = character_matrix(mu_g, D)
    lh_mat = character_matrix(hm, D)
    lhs = mat_sub(mat_eye(len(basis)), [[a * x for x in row] for row in lh_mat])
    rhs = [
        sympy.expand((1 - a) * pk + a * gh)
        for pk, gh in zip(p_k, mat_vec(lg_mat, p_h))
    ]
    p_g = lower_solve(lhs, rhs)
    return lf, TailVector(basis, tuple(sympy.expand(x) for x in p_g))


def implicit_renewal_contraction(prob: RenewalProblem, alpha) -> sympy.Expr:
    """E M^(2(alpha+m+1)), the contraction quantity that must be < 1."""
    return tails.fractional_moment(prob.h, 2 * (sympy.sympify(alpha) + prob.m + 1))


def implicit_renewal_solve(prob: RenewalProblem) -> tuple[MomentVector, TailVector]:
    """Solve R =d Q + M R (M ~ H on [0, inf), Q ~ K, independent).

    Moments come from the recursion
    ``mu_{F,k} = sum_j C(k,j) mu_{K,j} mu_{H,k-j} mu_{F,k-j}``; the tail
    vector solves ``(Id - L_K int M_x dH(x)) p_F = L_{H mellin* F} p_K`` on
    the scale of the forcing tail.
    """
    if prob.a is not None:
        raise PreconditionError("implicit renewal takes no multiplier")
    if prob.h.sign != "nonnegative":
        raise PreconditionError("multiplier law must live on [0, inf)")
    m = prob.m
    km = tails.moments(prob.k, m)
    hm = tails.moments(prob.h, m)

    mu_f: list = [sympy.S.One]
    for k in range(1, m + 1):
        if hm.mu[k].is_number and not (hm.mu[k] < 1):
            raise PreconditionError(
                f"moment recursion needs E M^{k} < 1 (got {hm.mu[k]})"
            )
        s = sum(
            math.comb(k, j) * km.mu[j] * hm.mu[k - j] * mu_f[k - j]
            for j in range(1, k + 1)
        )
        mu_f.append(sympy.expand(sympy.cancel(s / (1 - hm.mu[k]))))
    fm = MomentVector(tuple(mu_f), synthetic=True)

    alpha = tails.tail_index(prob.k)
    contraction = implicit_renewal_contraction(prob, alpha)
    if contraction.is_number and not (contraction < 1):
        raise PreconditionError(
            f"contraction condition fails: E M^(2(alpha+m+1)) = {contraction}"
        )

    cutoff = sympy.expand(alpha + m)
    k_terms = tails.collect_terms(prob.k, cutoff=cutoff)
    basis = close_under_derivative([ScaleItem(x, b) for x, b, _ in k_terms], cutoff)
    D = derivative_matrix(basis)
    n = len(basis)
    p_k = [sympy.S.Zero] * n
    for x, b, c in k_terms:
        p_k[basis.index_of(x, b)] += c

    # int M_x dH(x): expectation of the rescaling matrix entry-wise.
    e_mat = [[sympy.S.Zero] * n for _ in range(n)]
    for j, src in enumerate(basis.items):
        for i, dst in enumerate(basis.items):
            if not (dst.a - src.a).is_zero:
                continue
            gap = sympy.expand(src.b - dst.b)
            if not (gap.is_integer and gap >= 0):
                continue
            kk = int(gap)
            e_mat[i][j] = (
                sympy.ff(src.b, kk)
                / math.factorial(kk)
                * (-1) ** kk
                * tails.mellin_log_moment(prob.h, src.a, kk)
            )

    lk_mat = character_matrix(km, D)
    mix = mellin_character(hm, fm)
    mix_mat = operator_matrix(list(mix.coeff), D)
    lhs = mat_sub(mat_eye(n), mat_mul(lk_mat, e_mat))
    rhs = mat_vec(mix_mat, p_k)
    p_f = lower_solve([[sympy.expand(x) for x in row] for row in lhs], rhs)
    return fm, TailVector(basis, tuple(sympy.expand(sympy.together(x)) for x in p_f))


# ---------------------------------------------------------------------------
# Second-order regular variation


@dataclass(frozen=True)
class SecondOrderSpec:
    """Second-order regular-variation data of the innovation tail.

    rho2 <= 0 is the second-order index; the kernel is
    k(l) = (l^rho2 - 1)/rho2 (or log l at rho2 = 0).  `a_limit` is
    lim t^xi g(t) with xi = 1 when the mean is nonzero and 2 otherwise
    (sympy oo allowed).  p, q are the upper/lower tail-balance weights.
    """

    alpha: Any
    rho2: Any
    a_limit: Any
    p: Any = 1
    q: Any = 0

    def __post_init__(self) -> None:
        rho2 = sympy.sympify(self.rho2)
        if rho2.is_number and rho2 > 0:
            raise PreconditionError("second-order index must be <= 0")
        p, q = sympy.sympify(self.p), sympy.sympify(self.q)
        if p.is_number and q.is_number and sympy.simplify(p + q - 1) != 0:
            raise PreconditionError("tail-balance weights must satisfy p + q = 1")


@dataclass(frozen=True)
class SecondOrderClassification:
    case: int | None
    indeterminate: bool
    condition_value: Any
    second_order_coefficient: Any
    gstar_order: str
    xi: int

    @property
    def outcome(self) -> str:
        return "higher order needed" if self.indeterminate else f"case {self.case}"


def _kernel_weight_sum(w: WeightSequence, alpha, rho2):
    """V = sum |c_i|^alpha k(1/|c_i|) for the stated kernel."""
    rho2 = sympy.sympify(rho2)
    if rho2.is_zero:
        # k(1/c) = -log c
        return sympy.expand(-w.power_log_sum(alpha, 1))
    # k(1/c) = (c^-rho2 - 1)/rho2
    return sympy.expand(
        (w.abs_power_sum(sympy.expand(alpha - rho2)) - w.abs_power_sum(alpha)) / rho2
    )


def second_order_classify(
    so: SecondOrderSpec, w: WeightSequence, fm: MomentVector, *, float_band: float = 1e-9
) -> SecondOrderClassification:
    """Decide which second-order regime governs the weighted-sum tail.

    Returns the case label, the value of the relevant nondegeneracy
    condition, and the leading second-order coefficient; when the condition
    value is zero (exactly, or within the relative float band) the result
    is an explicit "higher order needed" outcome instead of a coefficient.
    """
    alpha = sympy.sympify(so.alpha)
    rho2 = sympy.sympify(so.rho2)
    a = sympy.sympify(so.a_limit) if so.a_limit is not sympy.oo else sympy.oo
    p, q = sympy.sympify(so.p), sympy.sympify(so.q)

    mu1 = fm.mu[1]
    mu1_zero = sympy.sympify(mu1).is_zero
    xi = 2 if mu1_zero else 1

    u = w.abs_power_sum(alpha)
    v = _kernel_weight_sum(w, alpha, rho2)

    if a is sympy.oo:
        case = 1
        cond = sympy.expand(u + rho2 * v)
        coefficient = v
    elif not mu1_zero:
        case = 2
        signed = w.signed_power_sum(alpha)
        w_term = alpha * mu1 * (p - q) * (
            w.power_sum(1) * signed - w.abs_power_sum(alpha + 1)
        )
        cond = sympy.expand(a * u + a * rho2 * v + rho2 * w_term)
        coefficient = sympy.expand(a * v + w_term)
    else:
        case = 3
        mu2 = fm.mu[2]
        w_term = (
            alpha * (alpha + 1) / 2 * mu2 * (w.power_sum(2) * u - w.abs_power_sum(alpha + 2))
        )
        cond = sympy.expand(
            a * u + a * rho2 * v - alpha * (alpha + 1) * mu2 * (
                w.power_sum(2) * u - w.abs_power_sum(alpha + 2)
            )
        )
        coefficient = sympy.expand(a * v + w_term)

    indeterminate = _is_zero_within_band(cond, u, float_band)
    gstar = "g" if (a is sympy.oo or not _is_zero_within_band(a, 1, 0.0)) else f"t^-{xi}"
    return SecondOrderClassification(
        case=None if indeterminate else case,
        indeterminate=indeterminate,
        condition_value=cond,
        second_order_coefficient=None if indeterminate else coefficient,
        gstar_order=gstar,
        xi=xi,
    )


def _is_zero_within_band(value, scale_ref, band: float) -> bool:
    value = sympy.sympify(value)
    if value.is_zero:
        return True
    if value.is_number and value.is_Float or (
        value.is_number and any(isinstance(x, sympy.Float) for x in value.atoms(sympy.Number))
    ):
        ref = abs(float(sympy.sympify(scale_ref))) if sympy.sympify(scale_ref).is_number else 1.0
        return abs(float(value)) <= band * max(ref, 1.0)
    return False


# ---------------------------------------------------------------------------
# Hill-estimator variance for linear processes


def hill_variance(w: WeightSequence, alpha) -> sympy.Expr:
    """Asymptotic variance ``alpha^-2 (1 + 2 S / |C|_alpha)`` with
    ``S = sum_{j>=1} sum_{k>=0} min(|c_k|^alpha, |c_{j+k}|^alpha)``."""
    alpha = sympy.sympify(alpha)
    if w.kind == "ar1":
        r = sympy.Abs(w.a)
        return (1 + r ** alpha) / (alpha ** 2 * (1 - r ** alpha))
    lst = w.finite_list
    if lst is None:
        raise EngineError("Hill variance needs a materialisable weight sequence")
    mags = [sympy.Abs(v) ** alpha for v in lst]
    total = sum(mags)
    if total == 0:
        raise EngineError("all weights vanish")
    s = sympy.S.Zero
    n = len(mags)
    for j in range(1, n):
        for k in range(0, n - j):
            s += sympy.Min(mags[k], mags[j + k])
    return sympy.expand((1 + 2 * s / total) / alpha ** 2)


def hill_variance_series(w: WeightSequence, alpha, tol: float = 1e-12) -> float:
    """Float evaluation of the double series with an explicit geometric
    tail bound below `tol`; exercised against the closed forms in tests."""
    alpha = float(alpha)
    if w.kind == "ar1":
        r = abs(float(w.a))
        x = r ** alpha
        total = 1.0 / (1.0 - x)
        s = 0.0
        j = 1
        while True:
            term = x ** j / (1.0 - x)  # sum_k min = sum_k |c_{j+k}|^alpha
            s += term
            # remaining tail: sum_{i>j} x^i/(1-x) = x^(j+1)/(1-x)^2
            if x ** (j + 1) / (1.0 - x) ** 2 < tol:
                break
            j += 1
        return (1.0 + 2.0 * s / total) / alpha ** 2
    return float(hill_variance(w, alpha))
