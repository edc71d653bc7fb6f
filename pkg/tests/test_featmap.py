import math

import numpy as np
import pytest

from kernattn.experiments import sample_pairs
from kernattn.featmap import (
    MAX_DEGREE,
    MultiIndex,
    TruncatedFeatureMap,
    convergence_report,
    enumerate_multi_indices,
    feature_vector,
    num_features,
    report_to_csv,
    tail_bound,
    truncated_kernel,
)

from .oracles import exp_series


class TestMultiIndices:
    def test_degree_two_in_two_dims(self):
        got = [p.powers for p in enumerate_multi_indices(2, 2) if p.degree == 2]
        assert sorted(got) == [(0, 2), (1, 1), (2, 0)]

    def test_count_d4_n6(self):
        assert len(enumerate_multi_indices(4, 6)) == 210

    def test_one_dimension(self):
        assert [p.degree for p in enumerate_multi_indices(1, 5)] == [0, 1, 2, 3, 4, 5]

    def test_order_is_degree_then_lexicographic(self):
        idx = enumerate_multi_indices(3, 4)
        keys = [(p.degree, p.powers) for p in idx]
        assert keys == sorted(keys)
        assert len(set(keys)) == len(keys)

    @pytest.mark.parametrize("d,N", [(1, 0), (2, 7), (3, 5), (5, 3), (8, 2)])
    def test_dimension_law(self, d, N):
        idx = enumerate_multi_indices(d, N)
        assert len(idx) == num_features(d, N) == math.comb(N + d, d)
        assert all(len(p.powers) == d and p.degree == sum(p.powers) for p in idx)

    @pytest.mark.parametrize("d,N", [(0, 2), (2, -1)])
    def test_invalid(self, d, N):
        with pytest.raises(ValueError):
            enumerate_multi_indices(d, N)


class TestFeatureVector:
    def test_one_dimensional_closed_form(self):
        fv = feature_vector(TruncatedFeatureMap(1, 2), [1.0])
        np.testing.assert_allclose(fv, [1.0, 1.0, 1 / math.sqrt(2)], rtol=1e-15)

    def test_zero_vector(self):
        fv = feature_vector(TruncatedFeatureMap(3, 4), np.zeros(3))
        assert fv[0] == 1.0 and not fv[1:].any()

    def test_degree_one_scaling(self):
        fv = feature_vector(TruncatedFeatureMap(2, 1), [1.0, 1.0])
        np.testing.assert_allclose(fv, [1.0, 2**-0.25, 2**-0.25], rtol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            feature_vector(TruncatedFeatureMap(3, 2), np.ones(2))

    def test_coefficient_formula(self):
        fm = TruncatedFeatureMap(3, 5)
        for p, c in zip(fm.indices, fm.coefficients):
            expected = 1.0 / (math.sqrt(math.prod(math.factorial(x) for x in p.powers)) * 3 ** (p.degree / 4))
            assert c == pytest.approx(expected, rel=1e-13)
        assert fm.coefficient(MultiIndex((2, 0, 1))) == pytest.approx(1 / (math.sqrt(2) * 3**0.75), rel=1e-14)

    def test_coefficients_finite_at_caps(self):
        assert np.all(np.isfinite(TruncatedFeatureMap(2, MAX_DEGREE).coefficients))
        assert np.all(np.isfinite(TruncatedFeatureMap(8, 6).coefficients))

    def test_degree_cap(self):
        with pytest.raises(ValueError, match="limit"):
            TruncatedFeatureMap(1, MAX_DEGREE + 1)

    def test_feature_count_cap(self):
        # C(30+8, 8) is far above the cap
        with pytest.raises(ValueError, match="features"):
            TruncatedFeatureMap(8, 30)


class TestTruncatedKernel:
    def test_partial_series(self):
        assert truncated_kernel(TruncatedFeatureMap(1, 2), [1.0], [1.0]) == pytest.approx(2.5, rel=1e-15)

    @pytest.mark.parametrize("N", [0, 1, 5])
    def test_zero_query(self, N):
        assert truncated_kernel(TruncatedFeatureMap(3, N), np.zeros(3), np.arange(3.0)) == pytest.approx(1.0)

    def test_matches_exponential_series_oracle(self, rng):
        d = 3
        fm = TruncatedFeatureMap(d, 7)
        for _ in range(10):
            q, k = rng.normal(size=d), rng.normal(size=d)
            x = float(q @ k) / math.sqrt(d)
            assert truncated_kernel(fm, q, k) == pytest.approx(exp_series(x, 7), rel=1e-12)

    def test_n12_within_tolerance(self, rng):
        fm = TruncatedFeatureMap(4, 12)
        for q, k in sample_pairs(rng, 4, 20, max_logit=2.0):
            exact = math.exp(float(q @ k) / 2.0)
            assert abs(truncated_kernel(fm, q, k) - exact) / exact <= 1e-5

    def test_permutation_equivariance(self, rng):
        fm = TruncatedFeatureMap(4, 6)
        for _ in range(10):
            q, k = rng.normal(size=4), rng.normal(size=4)
            perm = rng.permutation(4)
            assert truncated_kernel(fm, q[perm], k[perm]) == pytest.approx(truncated_kernel(fm, q, k), rel=1e-13)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            truncated_kernel(TruncatedFeatureMap(2, 2), np.ones(2), np.ones(3))


class TestConvergenceReport:
    def test_orthogonal_pair_exact_at_every_degree(self):
        rows = convergence_report(2, [1.0, 0.0], [0.0, 3.0], 6)
        assert all(r.rel_error == 0.0 for r in rows)

    def test_closed_form_error(self):
        rows = convergence_report(1, [1.0], [1.0], 4)
        assert rows[2].rel_error == pytest.approx(1 - 2.5 / math.e, rel=1e-12)
        assert rows[2].rel_error == pytest.approx(0.0803, abs=5e-5)

    def test_error_within_tail_bound(self, rng):
        for q, k in sample_pairs(rng, 4, 10, max_logit=2.0):
            x = float(q @ k) / 2.0
            for r in convergence_report(4, q, k, 12):
                # plus a round-off floor for summing ~1800 products
                assert r.rel_error <= tail_bound(x, r.N) * (1 + 1e-9) + 1e-12

    def test_rows_consistent_with_truncated_kernel(self, rng):
        q, k = rng.normal(size=3), rng.normal(size=3)
        for r in convergence_report(3, q, k, 5):
            assert r.value == pytest.approx(truncated_kernel(TruncatedFeatureMap(3, r.N), q, k), rel=1e-13)

    def test_csv(self):
        text = report_to_csv(convergence_report(1, [1.0], [1.0], 2), trial=3)
        lines = text.splitlines()
        assert lines[0] == "trial,N,value,abs_error,rel_error"
        assert lines[3].startswith("3,2,2.5,")


class TestTailBound:
    def test_zero_argument(self):
        assert tail_bound(0.0, 3) == 0.0

    def test_value(self):
        # x=1, N=2: 1/3! * e^1 / e^1
        assert tail_bound(1.0, 2) == pytest.approx(1 / 6, rel=1e-14)
