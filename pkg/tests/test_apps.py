import random
from fractions import Fraction as F

import pytest
import sympy
from sympy import Rational, Symbol, expand, simplify

from tailcalc import apps as A
from tailcalc import engine as E
from tailcalc import tails as T
from tailcalc.laplace import (
    MomentVector,
    SeriesPoly,
    character_from_moments,
    compose,
    equilibrium_moments,
    moment_series,
)
from conftest import random_moments

MU1, MU2 = sympy.symbols("mu1 mu2")
RHO = Symbol("rho", positive=True)


def fm(*mu):
    return MomentVector(tuple(mu), synthetic=True)


class TestStoppedSum:
    def test_deterministic_one_summand(self):
        m = 2
        ones = MomentVector((1,) * (m + 2))
        got = A.stopped_sum_operator(ones, fm(1, MU1, MU2), m)
        assert got == (1, 0, 0)

    def test_deterministic_two_summands(self):
        m = 2
        two = MomentVector(tuple(2 ** j for j in range(m + 2)))
        got = A.stopped_sum_operator(two, fm(1, MU1, MU2), m)
        want = tuple(2 * c for c in character_from_moments(fm(1, MU1, MU2)).coeff)
        assert all(expand(g - w) == 0 for g, w in zip(got, want))

    @pytest.mark.parametrize("m", [1, 2, 3, 4])
    def test_poisson_count_matches_compound_law(self, m):
        a = Symbol("a", positive=True)
        base = fm(*([1] + list(sympy.symbols(f"nu1:{m + 1}"))))
        nm = A.poisson_count_moments(a, m + 1)
        op = A.stopped_sum_operator(nm, base, m)
        muk = A.compound_poisson_moments(a, base, m)
        want = character_from_moments(muk)
        assert all(simplify(o - a * c) == 0 for o, c in zip(op, want.coeff))

    def test_needs_enough_count_moments(self):
        with pytest.raises(E.PreconditionError):
            A.stopped_sum_operator(MomentVector((1, 1)), fm(1, MU1), 1)


class TestCompoundPoisson:
    def test_small_intensity_first_order(self):
        # to first order in a the result is a * p_F
        a = Symbol("a", positive=True)
        spec = T.DistributionSpec(
            family="power-series",
            params={"terms": ((3, 0, 1),)},
            moment_values=(1, MU1),
        )
        single = E.WeightSequence(kind="explicit", values=(1,))
        base = E.expand_convolution(single, spec, E.ExpansionRequest(m=1))
        tv = A.compound_poisson(a, fm(1, MU1), 1, base)
        lead = sympy.expand(tv.p[0])
        assert lead == a
        # D-term coefficient: a * (-a mu1) * D p entry
        assert expand(tv.p[1] - 3 * a ** 2 * MU1) == 0

    def test_matches_geometric_route_structure(self):
        # compound Poisson at m=1: Kbar ~ a(p - a mu1 D p)
        a = Symbol("a", positive=True)
        muk = A.compound_poisson_moments(a, fm(1, MU1), 1)
        assert expand(muk.mu[1] - a * MU1) == 0


class TestQueue:
    def test_leading_coefficient_is_load_ratio(self):
        spec = T.DistributionSpec(family="pareto", params={"alpha": 5})
        coeffs = A.mg1_waiting_tail(spec, 2, 0)
        a = A.mg1_load(spec, 2)
        assert coeffs[0] == a / (1 - a)

    def test_load_to_zero_kills_all_coefficients(self):
        spec = T.DistributionSpec(family="pareto", params={"alpha": 5})
        mu = Symbol("mu", positive=True)  # mean interarrival
        coeffs = A.mg1_waiting_tail(spec, mu, 2)
        for c in coeffs:
            assert sympy.limit(c, mu, sympy.oo) == 0

    def test_first_derivative_coefficient(self):
        # coefficient of D at m=1: -2 a^2 mu_{H,1} / (1-a)^2
        spec = T.DistributionSpec(family="pareto", params={"alpha": 5})
        coeffs = A.mg1_waiting_tail(spec, 2, 1)
        bm = T.moments(spec, 2)
        hm = equilibrium_moments(bm)
        a = A.mg1_load(spec, 2)
        want = -2 * a ** 2 * hm.mu[1] / (1 - a) ** 2
        assert simplify(coeffs[1] - want) == 0

    @pytest.mark.parametrize("m", [0, 1, 2, 3, 4])
    def test_cross_route_geometric_stopped_sum(self, m):
        spec = T.DistributionSpec(family="pareto", params={"alpha": 13})
        mean_arrival = Rational(3, 2)
        coeffs = A.mg1_waiting_tail(spec, mean_arrival, m)
        bm = T.moments(spec, m + 1)
        hm = equilibrium_moments(bm)
        a = A.mg1_load(spec, mean_arrival)
        nm = A.geometric_count_moments(a, m + 1)
        other = A.stopped_sum_operator(nm, hm, m)
        assert all(simplify(x - y) == 0 for x, y in zip(coeffs, other))

    def test_unstable_queue_rejected(self):
        spec = T.DistributionSpec(family="pareto", params={"alpha": 5})
        with pytest.raises(E.PreconditionError):
            A.mg1_waiting_tail(spec, Rational(1, 8), 1)

    def test_waiting_expansion_leading_term(self):
        # Wbar ~ (a/(1-a)) Hbar with Hbar ~ Bbar-integral tail
        spec = T.DistributionSpec(family="pareto", params={"alpha": 5})
        tv = A.mg1_waiting_expansion(spec, 2, 1, 2)
        a = A.mg1_load(spec, 2)
        beta = T.fractional_moment(spec, 1)
        # leading Hbar coefficient: 1/(beta * (alpha - 1)) at exponent 4
        want = (a / (1 - a)) / (beta * 4)
        assert simplify(tv.p[0] - want) == 0


class TestBranching:
    def test_order_two_display(self):
        got = A.branching_intensity(fm(1, MU1, MU2), RHO, 2)
        sigma2 = MU2 - MU1 ** 2
        want = (
            1 / (1 - RHO),
            -2 * RHO * MU1 / (1 - RHO) ** 2,
            RHO * ((1 - RHO) * sigma2 + (1 + 2 * RHO) * MU1 ** 2) / (1 - RHO) ** 3,
        )
        assert all(simplify(g - w) == 0 for g, w in zip(got, want))

    def test_vanishing_offspring_mean(self):
        got = A.branching_intensity(fm(1, MU1, MU2), RHO, 2)
        at_zero = [sympy.limit(c, RHO, 0) for c in got]
        assert at_zero == [1, 0, 0]

    def test_first_order_constant(self):
        got = A.branching_intensity(fm(1, MU1), RHO, 0)
        assert simplify(got[0] - 1 / (1 - RHO)) == 0

    def test_rho_out_of_range(self):
        with pytest.raises(E.PreconditionError):
            A.branching_intensity(fm(1, MU1), 2, 0)


class TestInfDiv:
    def _nu(self, a_scale=1):
        spec = T.DistributionSpec(
            family="power-series",
            params={"terms": ((3, 0, a_scale), (4, 0, -2 * a_scale))},
            moment_values=(1, MU1, MU2),
        )
        single = E.WeightSequence(kind="explicit", values=(1,))
        return E.expand_convolution(single, spec, E.ExpansionRequest(m=1))

    def test_zeroth_order_is_levy_tail(self):
        nu = self._nu()
        got = A.infdiv_tail(nu, fm(1, MU1), 0)
        assert got.p == nu.p

    def test_two_term_formula(self):
        # Gbar ~ nubar - mu_{G,1} D nubar
        nu = self._nu()
        g1 = Symbol("g1")
        got = A.infdiv_tail(nu, fm(1, g1), 1)
        assert expand(got.p[0] - nu.p[0]) == 0
        assert expand(got.p[1] - (nu.p[1] + 3 * g1 * nu.p[0])) == 0

    def test_finite_activity_decomposition(self):
        # with nubar = a Fbar: applying the law's character equals the
        # compound-Poisson route convolved with the light part
        a = Symbol("a", positive=True)
        spec = T.DistributionSpec(
            family="power-series",
            params={"terms": ((4, 0, 1),)},
            moment_values=(1, MU1, MU2),
        )
        single = E.WeightSequence(kind="explicit", values=(1,))
        p_f = E.expand_convolution(single, spec, E.ExpansionRequest(m=2))
        nu_tail = T.TailVector(p_f.basis, tuple(a * x for x in p_f.p))
        muk = A.compound_poisson_moments(a, fm(1, MU1, MU2), 2)
        h1, h2 = sympy.symbols("h1 h2")
        light = fm(1, h1, h2)
        from tailcalc.laplace import convolve_moments

        g_mom = convolve_moments(muk, light)
        lhs = A.infdiv_tail(nu_tail, g_mom, 2)
        inner = A.compound_poisson(a, fm(1, MU1, MU2), 2, p_f)
        rhs = A.apply_operator(character_from_moments(light).coeff, inner)
        assert all(expand(x - y) == 0 for x, y in zip(lhs.p, rhs.p))


class TestRenewal:
    def _pareto(self, alpha):
        return T.DistributionSpec(family="pareto", params={"alpha": alpha})

    def test_zero_multiplier(self):
        prob = A.RenewalProblem(h=self._pareto(3), k=self._pareto(3), m=1, a=0)
        lf, tv = A.renewal_solve(prob)
        km = T.moments(self._pareto(3), 1)
        assert lf.coeff == character_from_moments(km).coeff
        assert tv.p == (1, -3)

    def test_character_roundtrip(self):
        prob = A.RenewalProblem(h=self._pareto(4), k=self._pareto(4), m=2, a=F(1, 2))
        lf, _ = A.renewal_solve(prob)
        hm = T.moments(self._pareto(4), 2)
        lh = character_from_moments(hm)
        lhs = compose(
            type(lf)(tuple(i - F(1, 2) * c for i, c in zip((1, 0, 0), lh.coeff))), lf
        )
        km = T.moments(self._pareto(4), 2)
        assert all(
            simplify(x - y) == 0
            for x, y in zip(lhs.coeff, character_from_moments(km).coeff)
        )

    def test_geometric_compound_cross_route(self):
        # G = K * S with S the geometric(a)-stopped sum of H; the tail of G
        # must match the two-summand expansion of K and S
        alpha, m, a = 3, 1, F(1, 2)
        h = k = self._pareto(alpha)
        prob = A.RenewalProblem(h=h, k=k, m=m, a=a)
        _, tv = A.renewal_solve(prob)

        hm = T.moments(h, m)
        km = T.moments(k, m)
        # tail of S: geometric stopped-sum operator applied to Hbar
        nm = A.geometric_count_moments(a, m + 1)
        coeffs = A.stopped_sum_operator(nm, hm, m)
        single = E.WeightSequence(kind="explicit", values=(1,))
        base_h = E.expand_convolution(single, h, E.ExpansionRequest(m=m))
        s_tail = A.apply_operator(coeffs, base_h)
        # moments of S from its transform series
        ms = moment_series(hm)
        one = SeriesPoly((1,) + (0,) * m)
        s_series = one.sub(ms.scale(a)).reciprocal().scale(1 - a)
        import math

        s_moments = MomentVector(
            tuple(
                sympy.expand(sympy.sympify(math.factorial(j) * s_series[j]))
                for j in range(m + 1)
            ),
            synthetic=True,
        )
        base_k = E.expand_convolution(single, k, E.ExpansionRequest(m=m))
        from tailcalc.scale import character_matrix, derivative_matrix, mat_vec

        D = derivative_matrix(base_k.basis)
        want = [
            x + y
            for x, y in zip(
                mat_vec(character_matrix(s_moments, D), list(base_k.p)),
                mat_vec(character_matrix(km, D), list(s_tail.p)),
            )
        ]
        assert all(simplify(x - y) == 0 for x, y in zip(tv.p, want))

    def test_multiplier_bound(self):
        with pytest.raises(E.PreconditionError):
            A.RenewalProblem(h=self._pareto(3), k=self._pareto(3), m=1, a=2)


class TestImplicitRenewal:
    def test_point_mass_multiplier_returns_forcing(self):
        h = T.DistributionSpec(family="point-mass", params={"value": 0})
        k = T.DistributionSpec(family="pareto", params={"alpha": 3})
        fmv, tv = A.implicit_renewal_solve(A.RenewalProblem(h=h, k=k, m=1))
        km = T.moments(k, 1)
        assert fmv.mu == km.mu
        assert tv.p == (1, -3)

    def test_exponential_pareto_worked_example(self):
        theta, alpha = sympy.symbols("theta alpha", positive=True)
        h = T.DistributionSpec(family="exponential", params={"theta": theta})
        k = T.DistributionSpec(family="pareto", params={"alpha": alpha})
        fmv, tv = A.implicit_renewal_solve(A.RenewalProblem(h=h, k=k, m=1))
        assert simplify(fmv.mu[1] - 1 / ((1 - theta) * (alpha - 1))) == 0
        e0 = theta ** alpha * sympy.gamma(alpha + 1)
        e1 = theta ** (alpha + 1) * sympy.gamma(alpha + 2)
        assert simplify(tv.p[0] - 1 / (1 - e0)) == 0
        p1_want = (
            alpha
            * (e0 * (theta - alpha + theta * alpha) + alpha - 1 - theta * alpha)
            / ((1 - alpha) * (1 - theta) * (1 - e0) * (1 - e1))
        )
        assert simplify(tv.p[1] - p1_want) == 0

    def test_fixed_point_residual(self):
        # substituting the solved tail back into the linear system leaves
        # zero residual
        h = T.DistributionSpec(family="exponential", params={"theta": F(1, 5)})
        k = T.DistributionSpec(family="pareto", params={"alpha": 3})
        prob = A.RenewalProblem(h=h, k=k, m=1)
        fmv, tv = A.implicit_renewal_solve(prob)
        from tailcalc.scale import (
            character_matrix,
            derivative_matrix,
            mat_mul,
            mat_vec,
        )
        from tailcalc.laplace import mellin_character
        from tailcalc.scale import operator_matrix

        km = T.moments(k, 1)
        hm = T.moments(h, 1)
        D = derivative_matrix(tv.basis)
        e_mat = [
            [T.fractional_moment(h, it.a) if i == j else 0 for j, _ in enumerate(tv.basis.items)]
            for i, it in enumerate(tv.basis.items)
        ]
        lk = character_matrix(km, D)
        mix = operator_matrix(list(mellin_character(hm, fmv).coeff), D)
        lhs = mat_vec(mat_mul(lk, e_mat), list(tv.p))
        rhs = mat_vec(mix, [1, -3])
        residual = [
            sympy.nsimplify(p - (x + y)) for p, x, y in zip(tv.p, lhs, rhs)
        ]
        assert residual == [0, 0]

    def test_contraction_violation(self):
        h = T.DistributionSpec(family="exponential", params={"theta": 1})
        k = T.DistributionSpec(family="pareto", params={"alpha": 3})
        with pytest.raises(E.PreconditionError):
            A.implicit_renewal_solve(A.RenewalProblem(h=h, k=k, m=1))


class TestClassifier:
    def test_student_ar1_case_three(self):
        alpha = Rational(4)
        student = T.DistributionSpec(
            family="student", params={"alpha": alpha}, sign="symmetric"
        )
        fmv = T.moments(student, 2)
        w = E.WeightSequence(kind="ar1", a=F(1, 2))
        a_lim = alpha ** 2 * (alpha + 1) / (alpha + 2)
        so = A.SecondOrderSpec(
            alpha=alpha, rho2=-2, a_limit=a_lim, p=F(1, 2), q=F(1, 2)
        )
        res = A.second_order_classify(so, w, fmv)
        assert res.case == 3 and not res.indeterminate
        assert res.gstar_order == "g"

    def test_fast_decay_gives_case_one(self):
        # g(t) = t^-beta with beta < xi: a_limit = oo; coefficient is the
        # kernel-weighted power sum
        w = E.WeightSequence(kind="explicit", values=(1, F(1, 2)))
        so = A.SecondOrderSpec(alpha=3, rho2=F(-1, 2), a_limit=sympy.oo)
        res = A.second_order_classify(so, w, fm(1, F(1, 2), F(5, 4)))
        assert res.case == 1
        want = (w.abs_power_sum(F(7, 2)) - w.abs_power_sum(3)) / F(-1, 2)
        assert sympy.nsimplify(res.second_order_coefficient - want) == 0

    def test_engineered_cancellation_is_indeterminate(self):
        alpha = Rational(3)
        w = E.WeightSequence(kind="explicit", values=(1, F(1, 2)))
        mu2 = Rational(1)
        ca2 = w.power_sum(alpha + 2)
        ccross = E.cross_sum(w, alpha, 2)
        acoef = Rational(1, 2) * alpha * (alpha + 1) * mu2 * ccross / ca2
        so = A.SecondOrderSpec(
            alpha=alpha, rho2=-2, a_limit=-2 * acoef, p=F(1, 2), q=F(1, 2)
        )
        res = A.second_order_classify(so, w, fm(1, 0, mu2))
        assert res.indeterminate
        assert res.outcome == "higher order needed"
        assert res.second_order_coefficient is None

    def test_float_band_indeterminate(self):
        alpha = 3.0
        w = E.WeightSequence(kind="explicit", values=(1, 0.5))
        mu2 = 1.0
        ca2 = float(w.power_sum(5))
        ccross = float(E.cross_sum(w, 3, 2))
        acoef = 0.5 * 3 * 4 * mu2 * ccross / ca2 * (1 + 1e-12)
        so = A.SecondOrderSpec(alpha=alpha, rho2=-2, a_limit=-2 * acoef, p=0.5, q=0.5)
        res = A.second_order_classify(so, w, fm(1, 0, mu2))
        assert res.indeterminate


class TestHillVariance:
    def test_single_weight(self):
        w = E.WeightSequence(kind="explicit", values=(1,))
        assert A.hill_variance(w, 3) == Rational(1, 9)

    def test_ar1_closed_form(self):
        r = Symbol("r", positive=True)
        alpha = Symbol("alpha", positive=True)
        w = E.WeightSequence(kind="ar1", a=r)
        want = (1 + r ** alpha) / (alpha ** 2 * (1 - r ** alpha))
        assert simplify(A.hill_variance(w, alpha) - want) == 0

    def test_ma1_hand_sum(self):
        # weights (1, phi): S = min(1, phi^alpha) = phi^alpha for phi < 1
        w = E.WeightSequence(kind="maq", phi=(1, F(1, 2)))
        got = A.hill_variance(E.WeightSequence(kind="explicit", values=(1, F(1, 2))), 3)
        want = (1 + 2 * F(1, 8) / (1 + F(1, 8))) / 9
        assert sympy.nsimplify(got - sympy.nsimplify(want)) == 0

    def test_series_truncation_matches_closed_form(self):
        w = E.WeightSequence(kind="ar1", a=F(1, 2))
        series = A.hill_variance_series(w, 3)
        closed = float(A.hill_variance(w, 3))
        assert abs(series - closed) < 1e-11
