import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calproxy.global_center import GlobalCenter
from calproxy.numerics import l2_normalize


def make_gc(classes=3, dim=4, capacity=5, start_epoch=2):
    return GlobalCenter(classes, dim, capacity, start_epoch)


class TestPush:
    def test_first_push(self):
        gc = make_gc()
        gc.push(0, [3.0, 0.0, 0.0, 0.0])
        entries = gc.entries(0)
        assert len(entries) == 1
        assert np.allclose(entries[0], [1, 0, 0, 0])

    def test_fifo_eviction(self, rng):
        gc = make_gc(classes=1, capacity=2)
        a, b, c = (rng.standard_normal(4) for _ in range(3))
        for v in (a, b, c):
            gc.push(0, v)
        entries = gc.entries(0)
        assert len(entries) == 2
        assert np.allclose(entries[0], l2_normalize(b))
        assert np.allclose(entries[1], l2_normalize(c))

    def test_capacity_30(self, rng):
        gc = GlobalCenter(1, 8, 30, 0)
        vectors = [rng.standard_normal(8) for _ in range(31)]
        for v in vectors:
            gc.push(0, v)
        entries = gc.entries(0)
        assert len(entries) == 30
        first = l2_normalize(vectors[0])
        assert all(not np.allclose(e, first) for e in entries)
        assert np.allclose(entries[0], l2_normalize(vectors[1]))

    def test_stored_unit_norm(self, rng):
        gc = make_gc()
        for _ in range(10):
            gc.push(1, rng.standard_normal(4) * rng.uniform(0.1, 50))
        for e in gc.entries(1):
            assert abs(np.linalg.norm(e) - 1.0) < 1e-9

    def test_detached_from_caller(self):
        gc = make_gc()
        v = np.array([2.0, 0.0, 0.0, 0.0])
        gc.push(0, v)
        v[0] = -99.0
        assert np.allclose(gc.entries(0)[0], [1, 0, 0, 0])

    def test_stored_read_only(self):
        gc = make_gc()
        gc.push(0, [1.0, 0.0, 0.0, 0.0])
        with pytest.raises(ValueError):
            gc.entries(0)[0][0] = 5.0

    def test_class_out_of_range(self):
        gc = make_gc(classes=2)
        with pytest.raises(IndexError):
            gc.push(2, [1.0, 0.0, 0.0, 0.0])
        with pytest.raises(IndexError):
            gc.push(-1, [1.0, 0.0, 0.0, 0.0])

    def test_zero_vector_rejected(self):
        gc = make_gc()
        with pytest.raises(ValueError):
            gc.push(0, [0.0, 0.0, 0.0, 0.0])

    def test_wrong_dim_rejected(self):
        gc = make_gc(dim=4)
        with pytest.raises(ValueError):
            gc.push(0, [1.0, 0.0])


class TestEntries:
    def test_empty(self):
        assert make_gc().entries(0) == []

    def test_insertion_order(self, rng):
        gc = make_gc(capacity=5)
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        gc.push(0, a)
        gc.push(0, b)
        entries = gc.entries(0)
        assert np.allclose(entries[0], l2_normalize(a))
        assert np.allclose(entries[1], l2_normalize(b))

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            make_gc(classes=2).entries(5)


class TestIsActive:
    def test_at_start_epoch_inactive(self):
        assert GlobalCenter(1, 2, 1, 12).is_active(12) is False

    def test_past_start_epoch_active(self):
        assert GlobalCenter(1, 2, 1, 12).is_active(13) is True

    def test_start_zero(self):
        assert GlobalCenter(1, 2, 1, 0).is_active(1) is True
        assert GlobalCenter(1, 2, 1, 0).is_active(0) is False

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            make_gc().is_active(-1)


class TestQueueProperties:
    @given(
        capacity=st.integers(min_value=1, max_value=6),
        ops=st.lists(st.tuples(st.integers(min_value=0, max_value=2),
                               st.integers(min_value=1, max_value=1000)),
                     max_size=60),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_ring_buffer_oracle(self, capacity, ops):
        gc = GlobalCenter(3, 2, capacity, 0)
        reference = {0: [], 1: [], 2: []}
        for class_id, salt in ops:
            v = np.array([float(salt), 1.0])
            gc.push(class_id, v)
            reference[class_id] = (reference[class_id] + [l2_normalize(v)])[-capacity:]
        for c in range(3):
            got = gc.entries(c)
            assert len(got) == len(reference[c])
            for a, b in zip(got, reference[c]):
                assert np.array_equal(a, b)

    def test_length_is_min_of_pushes_and_capacity(self, rng):
        gc = GlobalCenter(1, 3, 7, 0)
        for i in range(20):
            gc.push(0, rng.standard_normal(3))
            assert gc.occupancy(0) == min(i + 1, 7)

    def test_push_isolated_between_classes(self, rng):
        gc = make_gc(classes=3)
        gc.push(1, rng.standard_normal(4))
        assert gc.entries(0) == [] and gc.entries(2) == []
        assert gc.occupancy(1) == 1


class TestMeansAndState:
    def test_class_mean_matrix(self):
        gc = make_gc(classes=2, dim=2, capacity=4)
        gc.push(0, [1.0, 0.0])
        gc.push(0, [0.0, 1.0])
        means, counts = gc.class_mean_matrix()
        assert np.allclose(means[0], [0.5, 0.5])
        assert np.allclose(means[1], [0.0, 0.0])
        assert counts.tolist() == [2, 0]

    def test_state_round_trip(self, rng):
        gc = make_gc(classes=2, dim=3, capacity=2)
        for _ in range(3):
            gc.push(0, rng.standard_normal(3))
        gc.push(1, rng.standard_normal(3))
        clone = GlobalCenter.from_state(gc.to_state())
        assert clone.capacity == gc.capacity and clone.start_epoch == gc.start_epoch
        for c in range(2):
            for a, b in zip(clone.entries(c), gc.entries(c)):
                assert np.array_equal(a, b)
