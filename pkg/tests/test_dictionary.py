import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagekde import BandwidthLadder, DegenerateDataError, Dictionary, build_b1, build_b2, \
    build_dictionary, reference_bandwidth


def with_sd(rng, m, sd):
    """m points in 2-d whose per-axis sample SD (n - 1) is exactly ``sd``."""
    X = rng.normal(size=(m, len(sd)))
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    return X * np.asarray(sd)


class TestReferenceBandwidth:
    def test_unit_sd(self, rng):
        h, per = reference_bandwidth(with_sd(rng, 64, [1.0, 1.0]))
        np.testing.assert_allclose(per, [0.5, 0.5], rtol=1e-14)
        assert h == pytest.approx(0.5, rel=1e-14)

    def test_axis_scaling(self, rng):
        X = with_sd(rng, 50, [1.0, 2.0])
        _, p1 = reference_bandwidth(X)
        Y = X.copy()
        Y[:, 1] *= 3.5
        _, p2 = reference_bandwidth(Y)
        assert p2[1] == pytest.approx(3.5 * p1[1], rel=1e-14)
        assert p2[0] == p1[0]

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError):
            reference_bandwidth([[0.0, 1.0]])
        with pytest.raises(DegenerateDataError):
            reference_bandwidth([[0.0, 1.0], [0.0, 2.0]])


class TestLadders:
    def test_b1_examples(self, rng):
        # h_ref = 0.1 at m = 100 needs SD = 0.1 * 100^(1/6)
        X = with_sd(rng, 100, [0.1 * 100 ** (1 / 6)] * 2)
        lad = build_b1(X)
        assert lad.values[0] == pytest.approx(0.215443469003188, rel=1e-12)
        assert lad.values[4] == pytest.approx(0.164754897244207, rel=1e-12)

    def test_b1_ratio_identity(self, rng):
        lad = build_b1(rng.normal(size=(37, 2)))
        for j in range(1, 6):
            assert lad.values[0] / lad.values[j - 1] == pytest.approx(j ** (1 / 6), rel=1e-13)

    def test_b1_monotone_above_reference(self, rng):
        X = rng.normal(size=(40, 2))
        lad = build_b1(X)
        h_ref, _ = reference_bandwidth(X)
        assert all(a > b for a, b in zip(lad.values, lad.values[1:]))
        assert min(lad.values) > h_ref

    def test_b2_examples(self, rng):
        lad = build_b2(with_sd(rng, 30, [1.0, 1.0]), eta=1.0)
        assert lad.values[0] == pytest.approx(1.12246204830937, rel=1e-12)
        assert lad.values[9] == pytest.approx(0.764724491331730, rel=1e-12)
        assert all(a > b for a, b in zip(lad.values, lad.values[1:]))

    def test_b2_eta_zero(self, rng):
        lad = build_b2(rng.normal(size=(30, 2)), eta=0.0)
        assert len(set(lad.values)) == 1

    def test_extrapolation_warning(self, rng):
        with pytest.warns(UserWarning):
            build_b1(rng.normal(size=(30, 1)))

    def test_json(self, rng):
        lad = build_b2(rng.normal(size=(30, 2)), eta=2.0)
        assert BandwidthLadder.from_json(json.loads(json.dumps(lad.to_json()))) == lad

    def test_invalid(self):
        with pytest.raises(ValueError):
            BandwidthLadder.explicit([1.0, -1.0])


class TestDictionary:
    def test_cardinality(self, rng):
        d = build_dictionary(rng.normal(size=(3, 2)), build_b1(rng.normal(size=(10, 2))))
        assert len(d) == 15

    def test_enumeration(self):
        d = build_dictionary([[0.0], [1.0]], BandwidthLadder.explicit([1.0]))
        words = d.words
        assert [w.center.tolist() for w in words] == [[0.0], [1.0]]
        assert [w.h for w in words] == [1.0, 1.0]

    @settings(max_examples=30, deadline=None)
    @given(m=st.integers(1, 20), J=st.integers(1, 6))
    def test_index_bijection(self, m, J):
        d = Dictionary(np.arange(m, dtype=float)[:, None], BandwidthLadder.explicit(np.arange(1, J + 1)))
        seen = set()
        for s in range(len(d)):
            i, j = d.pair_index(s)
            assert d.flat_index(i, j) == s
            assert d.word_centers[s, 0] == float(i) and d.word_h[s] == float(j + 1)
            seen.add((i, j))
        assert len(seen) == m * J

    def test_centers_are_points(self, rng):
        X = rng.normal(size=(8, 2))
        d = build_dictionary(X, build_b1(X))
        for c in d.word_centers:
            assert any(np.array_equal(c, x) for x in X)

    def test_translation_equivariance(self, rng):
        X = rng.normal(size=(25, 2))
        shift = np.array([3.0, -7.5])
        a = build_dictionary(X, build_b1(X))
        b = build_dictionary(X + shift, build_b1(X + shift))
        np.testing.assert_allclose(b.word_centers, a.word_centers + shift, rtol=1e-15)
        np.testing.assert_allclose(b.ladder.values, a.ladder.values, rtol=1e-12)
        l2a, l2b = build_b2(X), build_b2(X + shift)
        np.testing.assert_allclose(l2a.values, l2b.values, rtol=1e-12)

    def test_json_round_trip(self, rng):
        X = rng.normal(size=(6, 2))
        d = build_dictionary(X, build_b2(X))
        e = Dictionary.from_json(json.loads(json.dumps(d.to_json())))
        assert len(e) == len(d) == 60
        np.testing.assert_array_equal(e.word_centers, d.word_centers)
        np.testing.assert_array_equal(e.word_h, d.word_h)

    def test_bad_index_map(self, rng):
        X = rng.normal(size=(3, 2))
        doc = build_dictionary(X, build_b1(X)).to_json()
        doc["index_map"][0] = [1, 1]
        with pytest.raises(ValueError):
            Dictionary.from_json(doc)
