import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagekde import CoverageError, DivergenceFamily, GaussianWord, IntegratorSpec, MixtureDensity, \
    XiCombination, combine_stage, eval_density, gaussian_cross_integral, integrate, mixing_coefficients, \
    mixture_inner
from stagekde import density as dm

from conftest import random_mixture

BETA1 = DivergenceFamily.power(1.0)
HALF = DivergenceFamily.power(0.5)


def line(lo=-8.0, hi=8.0, n=1024):
    return IntegratorSpec("grid", ((lo, hi),), n)


class TestEvaluation:
    def test_standard_normal_peak(self):
        assert eval_density(GaussianWord([0.0], 1.0), [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi),
                                                                                rel=1e-15)

    @pytest.mark.parametrize("fam", [BETA1, HALF, DivergenceFamily.kl()], ids=lambda f: f.label)
    def test_single_term_combination_is_the_word(self, fam, rng):
        w = GaussianWord([0.3, -1.0], 0.7)
        comb = XiCombination.from_words([w], [1.0], fam)
        X = rng.normal(size=(50, 2))
        np.testing.assert_allclose(eval_density(comb, X), eval_density(w, X), rtol=1e-12)

    def test_beta1_pair_is_arithmetic_mean(self, rng):
        a, b = GaussianWord([0.0], 1.0), GaussianWord([2.0], 0.5)
        comb = XiCombination.from_words([a, b], [0.5, 0.5], BETA1)
        X = rng.normal(size=(30, 1))
        np.testing.assert_allclose(comb.pdf(X), 0.5 * (a.pdf(X) + b.pdf(X)), rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_density(GaussianWord([0.0, 0.0], 1.0), [1.0, 2.0, 3.0])

    def test_duplicate_indices_merge(self):
        table = dm.WordTable([[0.0], [1.0]], [1.0, 1.0])
        comb = XiCombination(table, [1, 0, 1], [0.25, 0.5, 0.25], BETA1)
        assert comb.indices.tolist() == [1, 0]
        assert comb.weights.tolist() == [0.5, 0.5]

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            XiCombination.from_words([GaussianWord([0.0], 1.0)], [0.9], BETA1)


class TestMixture:
    def test_validation(self):
        with pytest.raises(ValueError):
            MixtureDensity([0.5, 0.6], [[0.0], [1.0]], [[[1.0]], [[1.0]]])
        with pytest.raises(ValueError):
            MixtureDensity([1.0], [[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])

    def test_json_round_trip(self, rng):
        f = random_mixture(rng, 2, 3)
        g = MixtureDensity.from_json(json.loads(json.dumps(f.to_json())))
        X = rng.normal(size=(20, 2))
        np.testing.assert_array_equal(f.pdf(X), g.pdf(X))

    def test_sampling_is_seeded(self, rng):
        f = random_mixture(rng, 2, 2)
        a = f.sample(100, np.random.default_rng(5))
        b = f.sample(100, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_sample_moments(self):
        f = MixtureDensity([0.3, 0.7], [[0.0, 0.0], [2.0, -1.0]],
                           [[[1.0, 0.5], [0.5, 1.0]], [[0.5, 0.0], [0.0, 2.0]]])
        X = f.sample(200000, np.random.default_rng(0))
        np.testing.assert_allclose(X.mean(axis=0), [1.4, -0.7], atol=0.01)

    def test_second_moment(self, rng):
        f = random_mixture(rng, 2, 3)
        c = np.array([[0.5, -0.2]])
        integ = dm.default_integrator(f, margin=12.0, resolution=513)
        ref = integrate(lambda x: f.pdf(x) * ((x - c) ** 2).sum(axis=1), integ)
        assert f.second_moment_about(c)[0] == pytest.approx(ref, rel=1e-8)


class TestCrossIntegral:
    def test_examples(self):
        assert gaussian_cross_integral(GaussianWord([0.0], 1.0), GaussianWord([0.0], 1.0)) == \
            pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)
        # mpmath quadrature oracle
        assert gaussian_cross_integral(GaussianWord([0.0], 1.0), GaussianWord([2.0], 1.0)) == \
            pytest.approx(0.103776874355149, abs=1e-14)
        assert gaussian_cross_integral(GaussianWord([0.0, 0.0], 1.0), GaussianWord([0.0, 0.0], 1.0)) == \
            pytest.approx(0.0795774715459477, abs=1e-15)

    def test_matches_quadrature(self, rng):
        for _ in range(10):
            a = GaussianWord(rng.normal(size=2), rng.uniform(0.3, 1.5))
            b = GaussianWord(rng.normal(size=2), rng.uniform(0.3, 1.5))
            integ = dm.default_integrator(a, b)
            ref = integrate(lambda x: a.pdf(x) * b.pdf(x), integ)
            assert gaussian_cross_integral(a, b) == pytest.approx(ref, abs=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(c1=st.floats(-5, 5), c2=st.floats(-5, 5), h1=st.floats(0.05, 3), h2=st.floats(0.05, 3))
    def test_symmetry(self, c1, c2, h1, h2):
        a, b = GaussianWord([c1], h1), GaussianWord([c2], h2)
        assert gaussian_cross_integral(a, b) == gaussian_cross_integral(b, a)

    def test_mixture_inner_full_covariance(self, rng):
        for _ in range(5):
            f, g = random_mixture(rng, 2), random_mixture(rng, 2)
            integ = dm.default_integrator(f, g)
            ref = integrate(lambda x: f.pdf(x) * g.pdf(x), integ)
            assert mixture_inner(f, g) == pytest.approx(ref, abs=1e-9)


class TestCombineStage:
    def setup_method(self):
        self.table = dm.WordTable(np.arange(10.0)[:, None], np.ones(10))

    def test_pi_one(self):
        prev = XiCombination(self.table, [3, 4], [0.5, 0.5], BETA1)
        nxt = combine_stage(prev, 7, 1.0)
        assert nxt.terms() == [(1.0, 7)]

    def test_pi_zero(self):
        prev = XiCombination(self.table, [3, 4], [0.5, 0.5], BETA1)
        assert combine_stage(prev, 7, 0.0) is prev

    def test_arithmetic(self):
        prev = XiCombination(self.table, [3], [1.0], BETA1)
        nxt = combine_stage(prev, 7, 2.0 / 3.0)
        assert nxt.indices.tolist() == [3, 7]
        np.testing.assert_allclose(nxt.weights, [1 / 3, 2 / 3], rtol=1e-15)

    @pytest.mark.parametrize("theta", [2.0, 3.0, 5.0])
    def test_weight_law(self, theta):
        pi, q = mixing_coefficients(30, theta)
        rng = np.random.default_rng(1)
        picks = rng.integers(0, 10, 30)
        comb = XiCombination(self.table, [picks[0]], [1.0], BETA1)
        for k in range(1, 30):
            comb = combine_stage(comb, picks[k], pi[k])
        expect = {}
        for s, w in zip(picks, q):
            expect[int(s)] = expect.get(int(s), 0.0) + w
        got = dict(zip(comb.indices.tolist(), comb.weights.tolist()))
        assert set(got) == set(expect)
        for s in got:
            assert got[s] == pytest.approx(expect[s], abs=1e-12)


class TestIntegrate:
    def test_standard_normal(self):
        val = integrate(GaussianWord([0.0], 1.0).pdf, line())
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_constant(self):
        assert integrate(lambda x: np.ones(x.shape[0]), line(0.0, 1.0, 33)) == pytest.approx(1.0, abs=1e-15)

    def test_against_adaptive_oracle(self):
        f, g = GaussianWord([0.0], 1.0), GaussianWord([1.0], 1.0)
        val = integrate(lambda x: f.pdf(x) * (f.pdf(x) - g.pdf(x)) ** 2, line(-10, 10, 2048))
        # mpmath adaptive quadrature at 30 digits
        assert val == pytest.approx(0.0260474132380026, abs=1e-6)

    def test_montecarlo_is_seeded_and_close(self):
        spec = IntegratorSpec("montecarlo", ((-6.0, 6.0), (-6.0, 6.0)), 200000, seed=3)
        w = GaussianWord([0.0, 0.0], 1.0)
        a, b = integrate(w.pdf, spec), integrate(w.pdf, spec)
        assert a == b
        assert a == pytest.approx(1.0, abs=0.02)

    def test_grid_limits(self):
        with pytest.raises(ValueError):
            IntegratorSpec("grid", ((0, 1),) * 4, 32)
        with pytest.raises(ValueError):
            IntegratorSpec("grid", ((0, 1),), 16)

    def test_coverage_error(self):
        with pytest.raises(CoverageError):
            dm.check_coverage(GaussianWord([0.0], 1.0), line(-1.0, 1.0))

    def test_beta1_mass(self, rng):
        table = dm.WordTable(rng.normal(size=(6, 2)), rng.uniform(0.3, 1.0, 6))
        w = rng.dirichlet(np.ones(6))
        w[-1] = 1.0 - w[:-1].sum()
        comb = XiCombination(table, np.arange(6), w, BETA1)
        assert integrate(comb.pdf, dm.default_integrator(comb)) == pytest.approx(1.0, abs=1e-6)

    def test_beta_half_mass_below_one(self, rng):
        table = dm.WordTable(rng.normal(size=(4, 2)), rng.uniform(0.3, 1.0, 4))
        comb = XiCombination(table, np.arange(4), [0.25] * 4, HALF)
        mass = integrate(comb.pdf, dm.default_integrator(comb))
        assert 0.0 < mass < 1.0
        single = XiCombination(table, [2], [1.0], HALF)
        wide = dm.default_integrator(single, margin=12.0, resolution=513)
        assert integrate(single.pdf, wide) == pytest.approx(1.0, abs=1e-8)

    def test_resolution_convergence(self, rng):
        f = random_mixture(rng, 2, 2)
        integ = dm.default_integrator(f)
        a = integrate(f.pdf, integ)
        b = integrate(f.pdf, integ.with_resolution(2 * integ.resolution))
        assert abs(a - b) < 1e-6

    def test_default_box_mass(self, rng):
        f = random_mixture(rng, 2, 3)
        assert dm.coverage_mass(f, dm.default_integrator(f).bounds) > 1 - 1e-6
