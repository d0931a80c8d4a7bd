"""Proxy-based metric-learning losses and their analytic gradients.

Three families are implemented: proxy-anchor, proxy-NCA, and soft-triple.
Each family has a plain variant, which scores samples against proxies only,
and a calibrated ("cp_") variant, which adds the global-center similarity to
the score and a squared-error pull of the proxies toward the stored class
embeddings. Before the global center activates, the calibrated variants
compute exactly the plain ones.

Gradients flow into the batch embeddings and the proxies; queue entries are
constants by construction.
"""

from dataclasses import dataclass

import numpy as np

from .global_center import GlobalCenter
from .similarity import ProxyBank

BASE_KINDS = ("proxy_anchor", "proxy_nca", "soft_triple")
KINDS = BASE_KINDS + tuple("cp_" + k for k in BASE_KINDS)


@dataclass
class LossSpec:
    """Loss selection plus hyperparameters.

    `alpha` and `margin` scale and shift the proxy-anchor exponents;
    `calibration_weight` multiplies the proxy-calibration term;
    `st_scale` and `st_margin` are the soft-triple scale and margin.
    """

    kind: str
    alpha: float = 32.0
    margin: float = 0.1
    calibration_weight: float = 1.0
    st_scale: float = 20.0
    st_margin: float = 0.01
    proxies_per_class: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}, expected one of {KINDS}")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.st_scale <= 0.0:
            raise ValueError("st_scale must be positive")
        if self.calibration_weight < 0.0:
            raise ValueError("calibration_weight must be >= 0")
        if self.proxies_per_class < 1:
            raise ValueError("proxies_per_class must be >= 1")

    @property
    def is_cp(self) -> bool:
        return self.kind.startswith("cp_")

    @property
    def family(self) -> str:
        return self.kind[3:] if self.is_cp else self.kind


@dataclass
class BatchView:
    """One training batch: embeddings (n_b, d) with integer class labels (n_b,)."""

    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError(f"embeddings must be a nonempty (n, d) matrix, got {e.shape}")
        if y.shape != (e.shape[0],):
            raise ValueError("labels must be one integer per embedding row")
        self.embeddings = e
        self.labels = y


@dataclass
class GradBundle:
    """Gradients with respect to the batch embeddings and the proxy bank.

    There is intentionally no slot for the global-center entries: stored
    embeddings never receive gradient.
    """

    d_embeddings: np.ndarray
    d_proxies: np.ndarray


def _log1p_sum_exp(z):
    """log(1 + sum_i e^{z_i}) and the weights e^{z_i} / (1 + sum_j e^{z_j})."""
    if z.size == 0:
        return 0.0, z
    m = max(0.0, float(z.max()))
    e = np.exp(z - m)
    total = np.exp(-m) + e.sum()
    return m + float(np.log(total)), e / total


def _proxy_anchor_head(s, labels, spec, all_class_negatives):
    """Proxy-anchor value and dL/dS over the (n_b, n_c) similarity matrix.

    Positive log terms are averaged over the classes present in the batch.
    Negative log terms come from every class when `all_class_negatives`
    (calibrated, active path) and only from classes absent from the batch
    otherwise, each averaged over the contributing class set.
    """
    n_b, n_c = s.shape
    present = np.unique(labels)
    grad = np.zeros_like(s)
    value = 0.0

    pos_coef = 1.0 / len(present)
    for c in present:
        mask = labels == c
        z = -spec.alpha * (s[mask, c] - spec.margin)
        term, w = _log1p_sum_exp(z)
        value += pos_coef * term
        grad[mask, c] += pos_coef * (-spec.alpha) * w

    if all_class_negatives:
        neg_classes = np.arange(n_c)
    else:
        neg_classes = np.setdiff1d(np.arange(n_c), present)
    if neg_classes.size > 0:
        neg_coef = 1.0 / len(neg_classes)
        for c in neg_classes:
            mask = labels != c
            z = spec.alpha * (s[mask, c] + spec.margin)
            term, w = _log1p_sum_exp(z)
            value += neg_coef * term
            grad[mask, c] += neg_coef * spec.alpha * w

    return value, grad


def _proxy_nca_head(s, labels, spec):
    """Proxy-NCA value and dL/dS; the positive class is excluded from the
    denominator, so the value may be negative."""
    n_b, n_c = s.shape
    if n_c < 2:
        raise ValueError("proxy_nca requires at least two classes")
    rows = np.arange(n_b)
    z = s.copy()
    z[rows, labels] = -np.inf
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    value = float(np.mean(-s[rows, labels] + lse))
    grad = np.exp(z - lse[:, None]) / n_b
    grad[rows, labels] = -1.0 / n_b
    return value, grad


def _soft_triple_head(s, labels, spec):
    """Soft-triple value and dL/dS: a scaled softmax cross-entropy where the
    positive logit carries a margin."""
    n_b, n_c = s.shape
    if n_c < 2:
        raise ValueError("soft_triple requires at least two classes")
    rows = np.arange(n_b)
    z = spec.st_scale * s
    z[rows, labels] = spec.st_scale * (s[rows, labels] - spec.st_margin)
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    value = float(np.mean(-z[rows, labels] + lse))
    grad = np.exp(z - lse[:, None])
    grad[rows, labels] -= 1.0
    grad *= spec.st_scale / n_b
    return value, grad


def _calibration_parts(p_hat, gc, need_grad):
    """Sum of squared residuals between normalized proxies and their class's
    stored entries, plus (optionally) its gradient w.r.t. the normalized
    proxies."""
    value = 0.0
    d_p_hat = np.zeros_like(p_hat) if need_grad else None
    for c in range(gc.class_count):
        entries = gc.entries(c)
        if not entries:
            continue
        b = np.stack(entries)
        r = p_hat[c][:, None, :] - b[None, :, :]
        value += float((r * r).sum())
        if need_grad:
            d_p_hat[c] = 2.0 * r.sum(axis=1)
    return value, d_p_hat


def _evaluate(batch, bank, gc, spec, active, family, calibrate, need_grad):
    """Shared forward/backward engine for every loss variant."""
    x = batch.embeddings
    labels = batch.labels
    n_b, d = x.shape
    n_c = bank.n_classes
    if d != bank.dim:
        raise ValueError(f"embedding dim {d} does not match proxy dim {bank.dim}")
    if labels.min() < 0 or labels.max() >= n_c:
        raise ValueError("batch labels out of range for the proxy bank")

    use_cp = spec.is_cp and active

    x_norm = np.linalg.norm(x, axis=1)
    if np.any(x_norm == 0.0):
        raise ValueError("batch contains a zero embedding")
    x_hat = x / x_norm[:, None]

    p = bank.proxies
    p_norm = np.linalg.norm(p, axis=-1)
    p_hat = p / p_norm[..., None]

    # per-slot cosine similarities and their softmax weights over slots
    s_all = np.einsum("id,cjd->icj", x_hat, p_hat)
    mx = s_all.max(axis=-1, keepdims=True)
    e = np.exp(s_all - mx)
    w = e / e.sum(axis=-1, keepdims=True)
    s_ep = (s_all * w).sum(axis=-1)

    if use_cp:
        means, _counts = gc.class_mean_matrix()
        s = s_ep + x_hat @ means.T
    else:
        means = None
        s = s_ep

    if family == "proxy_anchor":
        value, d_s = _proxy_anchor_head(s, labels, spec, all_class_negatives=use_cp)
    elif family == "proxy_nca":
        value, d_s = _proxy_nca_head(s, labels, spec)
    elif family == "soft_triple":
        value, d_s = _soft_triple_head(s, labels, spec)
    else:
        raise ValueError(f"unknown loss family {family!r}")

    calibrating = calibrate and use_cp and spec.calibration_weight != 0.0
    if calibrating:
        cal_value, d_p_hat_cal = _calibration_parts(p_hat, gc, need_grad)
        value += spec.calibration_weight * cal_value

    if not need_grad:
        return value, None

    # back through the slot-softmax weighting: d s_ep / d s_all
    d_s_all = d_s[:, :, None] * w * (1.0 + s_all - s_ep[:, :, None])

    d_x_hat = np.einsum("icj,cjd->id", d_s_all, p_hat)
    if use_cp:
        d_x_hat += d_s @ means
    d_x = (d_x_hat - (d_x_hat * x_hat).sum(axis=1, keepdims=True) * x_hat) / x_norm[:, None]

    d_p_hat = np.einsum("icj,id->cjd", d_s_all, x_hat)
    if calibrating:
        d_p_hat += spec.calibration_weight * d_p_hat_cal
    d_p = (d_p_hat - (d_p_hat * p_hat).sum(axis=-1, keepdims=True) * p_hat) / p_norm[..., None]

    return value, GradBundle(d_embeddings=d_x, d_proxies=d_p)


def proxy_anchor_value(batch, bank, gc, spec, active) -> float:
    """Proxy-anchor loss value (without the calibration term)."""
    return _evaluate(batch, bank, gc, spec, active, "proxy_anchor", False, False)[0]


def proxy_nca_value(batch, bank, gc, spec, active) -> float:
    """Proxy-NCA loss value (without the calibration term)."""
    return _evaluate(batch, bank, gc, spec, active, "proxy_nca", False, False)[0]


def soft_triple_value(batch, bank, gc, spec, active) -> float:
    """Soft-triple loss value (without the calibration term)."""
    return _evaluate(batch, bank, gc, spec, active, "soft_triple", False, False)[0]


def l_mse(bank: ProxyBank, gc: GlobalCenter) -> float:
    """Proxy-calibration term: total squared error between each class's
    normalized proxies and every entry stored for that class."""
    p_norm = np.linalg.norm(bank.proxies, axis=-1)
    p_hat = bank.proxies / p_norm[..., None]
    return _calibration_parts(p_hat, gc, need_grad=False)[0]


def total_loss(batch, bank, gc, spec, active) -> float:
    """Family loss plus the weighted calibration term (calibrated kinds,
    active center only)."""
    return _evaluate(batch, bank, gc, spec, active, spec.family, True, False)[0]


def loss_and_grad(batch, bank, gc, spec, active):
    """`total_loss` value together with gradients for embeddings and proxies."""
    return _evaluate(batch, bank, gc, spec, active, spec.family, True, True)
