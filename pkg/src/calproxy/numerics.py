"""Float64 vector math shared by every module, plus the finite-difference oracle.

Everything here is a pure function; generators returned by `make_rng` are
single-owner and must not be shared across workers.
"""

import numpy as np

from .errors import NumericError

Vector = np.ndarray


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator: the same seed yields the same draw stream on
    every platform and run."""
    return np.random.default_rng(seed)


def _as_vector(a, name: str) -> np.ndarray:
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two nonzero vectors, in [-1, 1]."""
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape != vb.shape:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    if na == 0.0:
        raise ValueError("first argument has zero norm")
    nb = float(np.linalg.norm(vb))
    if nb == 0.0:
        raise ValueError("second argument has zero norm")
    # clamp rounding spill just past +/-1 for collinear inputs
    return float(min(1.0, max(-1.0, float(va @ vb) / (na * nb))))


def l2_normalize(a) -> np.ndarray:
    """Scale a nonzero vector to unit L2 norm, preserving direction."""
    v = _as_vector(a, "a")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def softmax(values) -> np.ndarray:
    """Stable softmax (max-subtraction); output sums to 1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax input contains non-finite entries")
    e = np.exp(v - v.max())
    return e / e.sum()


def softplus(z):
    """log(1 + e^z), stable for large |z|."""
    return np.logaddexp(0.0, z)


def grad_check(f, x0, analytic_grad, eps: float = 1e-5) -> float:
    """Compare an analytic gradient against central finite differences.

    Returns max over coordinates of
    |cd_i - g_i| / max(1, |cd_i|, |g_i|) where cd_i is the central
    difference of `f` at x0 with step `eps`. The denominator clamp at 1
    keeps the measure meaningful near zero gradients.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match x0 {x.shape}")
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        cd = (fp - fm) / (2.0 * eps)
        err = abs(cd - g[i]) / max(1.0, abs(cd), abs(g[i]))
        if err > worst:
            worst = err
    return worst
