"""Per-class FIFO memory of historical sample embeddings (the global center).

Each class owns a bounded queue; pushes normalize and detach the stored
copy, and eviction drops the oldest entry first. Consumers gate on
`is_active(epoch)` so the memory is ignored while early-training feature
drift would make it stale.
"""

from collections import deque

import numpy as np


class GlobalCenter:
    """Bounded per-class queues of unit-norm embedding snapshots."""

    def __init__(self, class_count: int, dim: int, capacity: int, start_epoch: int):
        if class_count < 1:
            raise ValueError("class_count must be >= 1")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if start_epoch < 0:
            raise ValueError("start_epoch must be >= 0")
        self.class_count = class_count
        self.dim = dim
        self.capacity = capacity
        self.start_epoch = start_epoch
        self._queues = [deque(maxlen=capacity) for _ in range(class_count)]

    def _check_class(self, class_id: int):
        if not (0 <= class_id < self.class_count):
            raise IndexError(
                f"class_id {class_id} out of range [0, {self.class_count})"
            )

    def push(self, class_id: int, embedding) -> None:
        """Append a normalized, detached copy; evict the oldest entry when full."""
        self._check_class(class_id)
        v = np.array(embedding, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise ValueError(f"embedding must have shape ({self.dim},), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite entries")
        n = float(np.linalg.norm(v))
        if n == 0.0:
            raise ValueError("cannot store a zero embedding")
        v /= n
        v.setflags(write=False)
        self._queues[class_id].append(v)

    def entries(self, class_id: int) -> list:
        """Current queue contents for one class, oldest first (read-only arrays)."""
        self._check_class(class_id)
        return list(self._queues[class_id])

    def occupancy(self, class_id: int) -> int:
        self._check_class(class_id)
        return len(self._queues[class_id])

    def is_active(self, epoch: int) -> bool:
        """True once the epoch is strictly past the configured start epoch."""
        if epoch < 0:
            raise ValueError("epoch must be >= 0")
        return epoch > self.start_epoch

    def class_mean_matrix(self):
        """(means, counts): per-class mean of stored entries (zero row when
        empty) and per-class occupancy."""
        means = np.zeros((self.class_count, self.dim))
        counts = np.zeros(self.class_count, dtype=np.int64)
        for c, q in enumerate(self._queues):
            if q:
                means[c] = np.mean(np.stack(q), axis=0)
                counts[c] = len(q)
        return means, counts

    def to_state(self) -> dict:
        return {
            "class_count": self.class_count,
            "dim": self.dim,
            "capacity": self.capacity,
            "start_epoch": self.start_epoch,
            "queues": [[v.tolist() for v in q] for q in self._queues],
        }

    @classmethod
    def from_state(cls, state: dict) -> "GlobalCenter":
        gc = cls(
            state["class_count"], state["dim"], state["capacity"], state["start_epoch"]
        )
        for c, entries in enumerate(state["queues"]):
            for v in entries:
                arr = np.asarray(v, dtype=np.float64)
                arr.setflags(write=False)
                gc._queues[c].append(arr)
        return gc
