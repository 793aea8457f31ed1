import math
import os
from fractions import Fraction as F

import numpy as np
import pytest
import sympy

from tailcalc import engine as E
from tailcalc import oracle as O
from tailcalc import tails as T
from tailcalc.laplace import MomentVector


PARETO3 = T.DistributionSpec(family="pareto", params={"alpha": 3})


class TestBruteMoments:
    def test_single_unit_weight(self):
        fm = MomentVector((1, F(1, 2), F(5, 4)), synthetic=True)
        for j in range(3):
            assert O.brute_moments((1,), fm, j) == fm.mu[j]

    def test_two_unit_weights_square(self):
        mu1, mu2 = sympy.symbols("mu1 mu2")
        fm = MomentVector((1, mu1, mu2), synthetic=True)
        got = O.brute_moments((1, 1), fm, 2)
        assert sympy.expand(got - (2 * mu2 + 2 * mu1 ** 2)) == 0

    def test_three_weights_against_series_route(self, rng):
        from conftest import positive_rational, random_moments

        for _ in range(5):
            weights = tuple(positive_rational(rng) for _ in range(3))
            fm = random_moments(rng, 4)
            w = E.WeightSequence(kind="explicit", values=weights)
            gm = E.g_moments(w, fm, 4)
            assert sympy.nsimplify(O.brute_moments(weights, fm, 4)) == sympy.nsimplify(
                gm.mu[4]
            )


class TestMonteCarlo:
    def test_bit_for_bit_determinism(self):
        cfg = O.McConfig(
            n_samples=100_000, thresholds=(5.0, 9.0), seed=7, truncation=1, shards=16
        )
        w = E.WeightSequence(kind="explicit", values=(1,))
        r1 = O.mc_tail(w, PARETO3, cfg)
        r2 = O.mc_tail(w, PARETO3, cfg)
        assert r1 == r2

    def test_thread_count_does_not_change_results(self):
        cfg = O.McConfig(
            n_samples=60_000, thresholds=(5.0,), seed=3, truncation=1, shards=12
        )
        w = E.WeightSequence(kind="explicit", values=(1,))
        r1 = O.mc_tail(w, PARETO3, cfg)
        os.environ["TAILCALC_THREADS"] = "4"
        try:
            r2 = O.mc_tail(w, PARETO3, cfg)
        finally:
            os.environ.pop("TAILCALC_THREADS")
        assert r1 == r2

    def test_known_single_variable_tail(self):
        # threshold where Fbar = 1e-3 exactly: t = 10^(1) - 1... for
        # Fbar=(1+t)^-3, Fbar(t)=1e-3 at t = 9
        cfg = O.McConfig(
            n_samples=400_000, thresholds=(9.0,), seed=11, truncation=1, shards=32
        )
        w = E.WeightSequence(kind="explicit", values=(1,))
        row = O.mc_tail(w, PARETO3, cfg).rows[0]
        assert row.ci_lo <= 1e-3 <= row.ci_hi

    def test_two_summands_within_ci_of_grid_convolution(self):
        w = E.WeightSequence(kind="explicit", values=(1, 1))
        t_star = 12.0
        cfg = O.McConfig(
            n_samples=600_000, thresholds=(t_star,), seed=5, truncation=2, shards=32
        )
        row = O.mc_tail(w, PARETO3, cfg).rows[0]
        g = O.grid_from_spec(PARETO3, 16.0, 2e-3)
        conv = O.numeric_convolution(g, g)
        idx = int(round(t_star / conv.h))
        truth = conv.tail[idx]
        assert row.ci_lo <= truth <= row.ci_hi

    def test_ar1_burr_first_order_slope(self):
        # index check: at reachable thresholds the exact slope of this
        # family approaches the index -15 from above (it is -15 t^tau/(1+t^tau)
        # for the innovation), so compare the MC slope against the local
        # slope of the first-order prediction C_15 Fbar over the same window
        spec = T.DistributionSpec(
            family="burr", params={"beta": 1, "tau": F(3, 2), "gamma": 10}
        )
        w = E.WeightSequence(kind="ar1", a=F(1, 2))
        thresholds = (2.0, 2.4)
        cfg = O.McConfig(
            n_samples=4_000_000, thresholds=thresholds, seed=13, truncation=24, shards=64
        )
        res = O.mc_tail(w, spec, cfg)
        p1, p2 = res.estimates()
        dlogt = math.log(thresholds[1]) - math.log(thresholds[0])
        slope = (math.log(p2) - math.log(p1)) / dlogt
        fbar = T.tail_callable(spec)
        pred_slope = (
            math.log(fbar(thresholds[1])) - math.log(fbar(thresholds[0]))
        ) / dlogt
        assert -15.0 < slope < -10.0
        assert abs(slope - pred_slope) < 0.6

    def test_zero_hits_is_an_error(self):
        cfg = O.McConfig(
            n_samples=1_000, thresholds=(1e6,), seed=1, truncation=1, shards=2
        )
        w = E.WeightSequence(kind="explicit", values=(1,))
        with pytest.raises(O.SamplerError):
            O.mc_tail(w, PARETO3, cfg)

    def test_truncation_bias_bound_reported(self):
        w = E.WeightSequence(kind="ar1", a=F(1, 2))
        cfg = O.McConfig(
            n_samples=50_000, thresholds=(3.0,), seed=2, truncation=16, shards=8
        )
        res = O.mc_tail(w, PARETO3, cfg)
        assert len(res.truncation_bias_bound) == 1
        bound = res.truncation_bias_bound[0]
        assert 0 < bound < 1e-9  # dropped weights are ~2^-16 and smaller

    def test_ci_coverage_sanity(self):
        # desk-scale meta-test: 99% CIs cover a known tail in >= 95 of 100
        # seeded replications
        w = E.WeightSequence(kind="explicit", values=(1,))
        truth = 1e-2
        t_star = 10 ** (2 / 3) - 1  # Fbar = 1e-2
        covered = 0
        for seed in range(100):
            cfg = O.McConfig(
                n_samples=40_000, thresholds=(t_star,), seed=seed, truncation=1, shards=4
            )
            row = O.mc_tail(w, PARETO3, cfg).rows[0]
            covered += row.ci_lo <= truth <= row.ci_hi
        assert covered >= 95

    def test_samplers_hit_their_tails(self):
        # quick one-sided KS-style check for each family sampler
        for spec, t in [
            (T.DistributionSpec(family="frechet", params={"alpha": 2}), 3.0),
            (T.DistributionSpec(family="burr", params={"beta": 1, "tau": 2, "gamma": 2}), 2.0),
            (T.DistributionSpec(family="student", params={"alpha": 4}, sign="symmetric"), 3.0),
            (T.DistributionSpec(family="log-gamma", params={"lambda": 2, "alpha": 6}), 2.0),
            (T.DistributionSpec(family="exponential", params={"theta": 1}), 2.0),
        ]:
            gen = np.random.Generator(np.random.Philox(key=99))
            x = O.sampler(spec)(gen, (200_000,))
            est = float((x > t).mean())
            truth = T.tail_callable(spec)(t)
            half = 4 * math.sqrt(truth * (1 - truth) / 200_000)
            assert abs(est - truth) < half, spec.family


class TestGridConvolution:
    def test_point_mass_neutral(self):
        g = O.grid_from_spec(PARETO3, 10.0, 1e-3)
        pm = O.point_mass_grid(10.0, 1e-3)
        conv = O.numeric_convolution(g, pm)
        assert np.abs(conv.tail - g.tail).max() == 0

    def test_exponential_pair_gives_gamma_tail(self):
        spec = T.DistributionSpec(family="exponential", params={"theta": 1})
        g = O.grid_from_spec(spec, 20.0, 1e-3)
        conv = O.numeric_convolution(g, g)
        truth = (1 + conv.t) * np.exp(-conv.t)
        assert np.abs(conv.tail - truth).max() < 1e-6

    def test_pareto_pair_matches_engine_expansion(self):
        # at large t the grid convolution agrees with the two-term engine
        # expansion to within the first omitted order
        g = O.grid_from_spec(PARETO3, 60.0, 5e-3)
        conv = O.numeric_convolution(g, g)
        spec = PARETO3
        w = E.WeightSequence(kind="explicit", values=(1, 1))
        tv = E.expand_convolution(w, spec, E.ExpansionRequest(m=1))
        for t_star in (30.0, 45.0):
            idx = int(round(t_star / conv.h))
            got = conv.tail[idx]
            pred = tv.evaluate(t_star)
            # first omitted order is t^-5
            assert abs(got - pred) < 60.0 / t_star ** 5

    def test_grid_mismatch_rejected(self):
        g1 = O.grid_from_spec(PARETO3, 10.0, 1e-2)
        g2 = O.grid_from_spec(PARETO3, 10.0, 2e-2)
        with pytest.raises(ValueError):
            O.numeric_convolution(g1, g2)
