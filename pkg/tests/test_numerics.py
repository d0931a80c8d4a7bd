import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from calproxy.errors import NumericError
from calproxy.numerics import cosine_similarity, grad_check, l2_normalize, make_rng, softmax

nonzero_vectors = arrays(
    np.float64,
    st.integers(min_value=1, max_value=8),
    elements=st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
).filter(lambda v: np.linalg.norm(v) > 1e-6)


class TestCosineSimilarity:
    def test_collinear(self):
        assert cosine_similarity([2, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_analytic_half_sqrt2(self):
        assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    def test_symmetric(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        assert cosine_similarity(a, b) == cosine_similarity(b, a)

    def test_zero_norm_names_argument(self):
        with pytest.raises(ValueError, match="first"):
            cosine_similarity([0, 0], [1, 0])
        with pytest.raises(ValueError, match="second"):
            cosine_similarity([1, 0], [0, 0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            cosine_similarity([1, 0], [1, 0, 0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity([np.nan, 1.0], [1, 0])

    @given(v=nonzero_vectors, c=st.floats(min_value=1e-3, max_value=1e3))
    def test_scaling(self, v, c):
        assert cosine_similarity(v, c * v) == pytest.approx(1.0, abs=1e-9)
        assert cosine_similarity(v, -c * v) == pytest.approx(-1.0, abs=1e-9)


class TestL2Normalize:
    def test_analytic(self):
        assert np.allclose(l2_normalize([3, 4]), [0.6, 0.8], atol=1e-15)

    def test_identity_on_unit(self):
        assert np.allclose(l2_normalize([1, 0]), [1, 0], atol=0)

    def test_sign_preserved(self):
        assert np.allclose(l2_normalize([-2, 0]), [-1, 0], atol=0)

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            l2_normalize([0.0, 0.0])

    @given(v=nonzero_vectors)
    def test_unit_norm_and_idempotent(self, v):
        u = l2_normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-12
        assert np.max(np.abs(l2_normalize(u) - u)) < 1e-12


class TestSoftmax:
    def test_singleton(self):
        assert softmax([5.0]).tolist() == [1.0]

    def test_symmetry(self):
        assert softmax([0.0, 0.0]).tolist() == [0.5, 0.5]

    def test_analytic(self):
        w = softmax([1.0, 0.0])
        e = math.e
        assert w[0] == pytest.approx(e / (e + 1), abs=1e-12)
        assert w[1] == pytest.approx(1 / (e + 1), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax([])

    def test_large_inputs_stable(self):
        w = softmax([64.0, 0.0, -64.0])
        assert np.all(np.isfinite(w))
        assert abs(w.sum() - 1.0) < 1e-12

    @given(
        v=arrays(np.float64, st.integers(min_value=1, max_value=6),
                 elements=st.floats(min_value=-50, max_value=50, allow_nan=False)),
        shift=st.floats(min_value=-100, max_value=100, allow_nan=False),
    )
    def test_shift_invariance(self, v, shift):
        assert np.max(np.abs(softmax(v + shift) - softmax(v))) < 1e-12

    @given(v=arrays(np.float64, st.integers(min_value=1, max_value=6),
                    elements=st.floats(min_value=-50, max_value=50, allow_nan=False)))
    def test_normalized_nonnegative(self, v):
        w = softmax(v)
        assert np.all(w >= 0.0)
        assert abs(w.sum() - 1.0) < 1e-12


class TestGradCheck:
    def test_quadratic(self):
        err = grad_check(lambda x: float(x @ x), [1.0, 2.0], [2.0, 4.0], eps=1e-5)
        assert err < 1e-8

    def test_constant(self):
        assert grad_check(lambda x: 1.0, [0.3, -0.7], [0.0, 0.0], eps=1e-5) == 0.0

    def test_sum_exp(self):
        err = grad_check(lambda x: float(np.exp(x).sum()), [0.0, 1.0], [1.0, math.e], eps=1e-5)
        assert err < 1e-7

    def test_detects_wrong_gradient(self):
        err = grad_check(lambda x: float(x @ x), [1.0, 2.0], [2.0, 5.0], eps=1e-5)
        assert err > 0.1

    def test_non_finite_raises(self):
        def f(x):
            return float("nan") if x[0] > 1.0 else float(x[0])

        with pytest.raises(NumericError, match="coordinate"):
            grad_check(f, [1.0], [1.0], eps=1e-3)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: 0.0, [1.0], [0.0], eps=0.0)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(42).standard_normal(10_000)
        b = make_rng(42).standard_normal(10_000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(make_rng(1).standard_normal(100),
                                  make_rng(2).standard_normal(100))
