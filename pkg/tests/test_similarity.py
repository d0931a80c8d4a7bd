import math

import numpy as np
import pytest

from calproxy.global_center import GlobalCenter
from calproxy.numerics import cosine_similarity
from calproxy.similarity import ProxyBank, SimBreakdown, s_cp, s_em, s_mul

import oracles


class TestProxyBank:
    def test_shape_properties(self, rng):
        bank = ProxyBank.random_unit(4, 3, 8, rng)
        assert (bank.n_classes, bank.proxies_per_class, bank.dim) == (4, 3, 8)

    def test_random_unit_rows(self, rng):
        bank = ProxyBank.random_unit(3, 2, 5, rng)
        assert np.allclose(np.linalg.norm(bank.proxies, axis=-1), 1.0)

    def test_rejects_zero_proxy(self):
        p = np.ones((2, 1, 3))
        p[0, 0] = 0.0
        with pytest.raises(ValueError):
            ProxyBank(p)

    def test_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            ProxyBank(np.ones((2, 3)))

    def test_class_out_of_range(self, rng):
        with pytest.raises(IndexError):
            ProxyBank.random_unit(2, 1, 3, rng).class_proxies(2)


class TestSMul:
    def test_single_proxy_is_cosine(self, rng):
        for _ in range(50):
            x = rng.standard_normal(6)
            p = rng.standard_normal(6)
            assert abs(s_mul(x, [p]) - cosine_similarity(x, p)) < 1e-12

    def test_equal_similarities(self):
        # two proxies symmetric around x: weights are 0.5 each
        x = [1.0, 0.0]
        proxies = [[1.0, 1.0], [1.0, -1.0]]
        s = cosine_similarity(x, proxies[0])
        assert s_mul(x, proxies) == pytest.approx(s, abs=1e-12)

    def test_orthogonal_pair(self):
        # sims (1, 0): softmax weights e/(e+1), 1/(e+1)
        expected = math.e / (math.e + 1.0)
        assert s_mul([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(expected, abs=1e-8)
        assert s_mul([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(0.73105858, abs=1e-8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            s_mul([1.0, 0.0], np.empty((0, 2)))

    def test_slot_permutation_invariant(self, rng):
        x = rng.standard_normal(4)
        proxies = rng.standard_normal((5, 4))
        base = s_mul(x, proxies)
        for _ in range(5):
            perm = rng.permutation(5)
            assert s_mul(x, proxies[perm]) == pytest.approx(base, abs=1e-12)

    def test_convex_combination_bounds(self, rng):
        for _ in range(50):
            x = rng.standard_normal(3)
            proxies = rng.standard_normal((4, 3))
            sims = [cosine_similarity(x, p) for p in proxies]
            s = s_mul(x, proxies)
            assert min(sims) - 1e-12 <= s <= max(sims) + 1e-12

    def test_matches_scalar_oracle(self, rng):
        for _ in range(20):
            x = rng.standard_normal(5)
            proxies = rng.standard_normal((3, 5))
            assert s_mul(x, proxies) == pytest.approx(
                oracles.multi_proxy_similarity(x, proxies), abs=1e-12)


class TestSEm:
    def test_self_similarity(self, rng):
        x = rng.standard_normal(4)
        assert s_em(x, [x / np.linalg.norm(x)]) == pytest.approx(1.0, abs=1e-12)

    def test_empty_queue_is_zero(self):
        assert s_em([1.0, 0.0], []) == 0.0

    def test_mean_over_occupancy(self):
        assert s_em([1.0, 0.0], [np.array([1.0, 0.0]), np.array([0.0, 1.0])]) == pytest.approx(0.5, abs=1e-12)


class TestSCp:
    def make_parts(self, rng, n_p=1, queue_pushes=1):
        bank = ProxyBank.random_unit(2, n_p, 3, rng)
        gc = GlobalCenter(2, 3, 4, 0)
        for _ in range(queue_pushes):
            gc.push(0, rng.standard_normal(3))
        return bank, gc

    def test_inactive_gates_queue_term(self, rng):
        bank, gc = self.make_parts(rng)
        x = rng.standard_normal(3)
        out = s_cp(x, 0, bank, gc, active=False)
        assert out.s_em == 0.0
        assert out.s_cp == out.s_ep

    def test_perfect_alignment(self, rng):
        bank = ProxyBank.random_unit(1, 1, 3, rng)
        p = bank.proxies[0, 0]
        gc = GlobalCenter(1, 3, 4, 0)
        gc.push(0, p)
        out = s_cp(p, 0, bank, gc, active=True)
        assert out.s_ep == pytest.approx(1.0, abs=1e-12)
        assert out.s_em == pytest.approx(1.0, abs=1e-12)
        assert out.s_cp == pytest.approx(2.0, abs=1e-12)

    def test_orthogonal_proxy_with_matching_queue(self):
        bank = ProxyBank(np.array([[[0.0, 1.0]]]))
        gc = GlobalCenter(1, 2, 4, 0)
        gc.push(0, [1.0, 0.0])
        out = s_cp([1.0, 0.0], 0, bank, gc, active=True)
        assert out == SimBreakdown(s_ep=0.0, s_em=1.0, s_cp=1.0)

    def test_sum_structure(self, rng):
        bank, gc = self.make_parts(rng, n_p=3, queue_pushes=5)
        x = rng.standard_normal(3)
        out = s_cp(x, 0, bank, gc, active=True)
        assert out.s_cp == out.s_ep + out.s_em
        assert -1.0 <= out.s_ep <= 1.0
        assert -1.0 <= out.s_em <= 1.0

    def test_matches_scalar_oracle(self, rng):
        bank, gc = self.make_parts(rng, n_p=2, queue_pushes=3)
        x = rng.standard_normal(3)
        expected = oracles.composite_similarity(
            x, 0, [bank.class_proxies(c) for c in range(2)],
            [gc.entries(c) for c in range(2)], active=True)
        assert s_cp(x, 0, bank, gc, active=True).s_cp == pytest.approx(expected, abs=1e-12)
