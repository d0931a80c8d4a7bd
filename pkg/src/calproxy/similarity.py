"""Sample-to-class similarity layers.

A class is represented by its learnable proxies and (once active) by its
global-center queue. Sample-class similarity is the sum of a
softmax-weighted multi-proxy cosine term and the mean cosine against the
stored queue entries.
"""

from dataclasses import dataclass

import numpy as np

from .global_center import GlobalCenter
from .numerics import cosine_similarity, softmax


@dataclass
class ProxyBank:
    """Learnable class representatives, shape (n_classes, proxies_per_class, dim)."""

    proxies: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.proxies, dtype=np.float64)
        if p.ndim != 3:
            raise ValueError(f"proxies must be 3-D (class, slot, dim), got {p.shape}")
        if p.shape[1] < 1:
            raise ValueError("need at least one proxy per class")
        if not np.all(np.isfinite(p)):
            raise ValueError("proxies contain non-finite entries")
        if np.any(np.linalg.norm(p, axis=-1) == 0.0):
            raise ValueError("proxies must be nonzero vectors")
        self.proxies = p

    @property
    def n_classes(self) -> int:
        return self.proxies.shape[0]

    @property
    def proxies_per_class(self) -> int:
        return self.proxies.shape[1]

    @property
    def dim(self) -> int:
        return self.proxies.shape[2]

    def class_proxies(self, class_id: int) -> np.ndarray:
        if not (0 <= class_id < self.n_classes):
            raise IndexError(f"class_id {class_id} out of range [0, {self.n_classes})")
        return self.proxies[class_id]

    @classmethod
    def random_unit(cls, n_classes: int, proxies_per_class: int, dim: int, rng) -> "ProxyBank":
        """Unit-norm random directions, the conventional proxy initialization."""
        p = rng.standard_normal((n_classes, proxies_per_class, dim))
        p /= np.linalg.norm(p, axis=-1, keepdims=True)
        return cls(p)


@dataclass(frozen=True)
class SimBreakdown:
    """Composite similarity and its two addends."""

    s_ep: float
    s_em: float
    s_cp: float


def s_mul(x, class_proxies) -> float:
    """Softmax-weighted cosine similarity of a sample against one class's proxies.

    With a single proxy this is exactly the cosine similarity; in general it
    is a convex combination of the per-proxy similarities, weighting the
    closest proxy hardest.
    """
    proxies = np.asarray(class_proxies, dtype=np.float64)
    if proxies.ndim == 1:
        proxies = proxies[None, :]
    if proxies.shape[0] == 0:
        raise ValueError("class has no proxies")
    sims = np.array([cosine_similarity(x, p) for p in proxies])
    return float(np.dot(sims, softmax(sims)))


def s_em(x, class_queue) -> float:
    """Mean cosine similarity against the stored queue entries; 0 when empty.

    The mean divides by the actual entry count, so a partially filled queue
    is an unbiased estimate rather than a capacity-shrunk one.
    """
    if len(class_queue) == 0:
        return 0.0
    total = 0.0
    for b in class_queue:
        total += cosine_similarity(x, b)
    return total / len(class_queue)


def s_cp(x, class_id: int, bank: ProxyBank, gc: GlobalCenter, active: bool) -> SimBreakdown:
    """Composite sample-class similarity; the queue term is gated by `active`."""
    ep = s_mul(x, bank.class_proxies(class_id))
    em = s_em(x, gc.entries(class_id)) if active else 0.0
    return SimBreakdown(s_ep=ep, s_em=em, s_cp=ep + em)
