"""Two-layer tanh perceptron with a hand-written backward pass, plus Adam.

The embedder maps feature vectors to embeddings; outputs are not normalized
(the cosine-based losses ignore scale, and the calibration term normalizes
internally). Adam treats the proxy array as its own parameter group with an
independent learning-rate multiplier.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ForwardCache:
    """Intermediates from one forward pass, consumed by `Embedder.backward`."""

    features: np.ndarray
    hidden: np.ndarray
    version: int


class Embedder:
    """input_dim -> hidden_dim (tanh) -> embed_dim."""

    def __init__(self, input_dim: int, hidden_dim: int, embed_dim: int, rng):
        if min(input_dim, hidden_dim, embed_dim) < 1:
            raise ValueError("all layer widths must be >= 1")
        self.w1 = rng.standard_normal((input_dim, hidden_dim)) / np.sqrt(input_dim)
        self.b1 = np.zeros(hidden_dim)
        self.w2 = rng.standard_normal((hidden_dim, embed_dim)) / np.sqrt(hidden_dim)
        self.b2 = np.zeros(embed_dim)
        self._version = 0

    @property
    def dims(self):
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def set_params(self, params: dict) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            new = np.asarray(params[name], dtype=np.float64)
            if new.shape != getattr(self, name).shape:
                raise ValueError(f"shape mismatch for {name}: {new.shape}")
            setattr(self, name, new)
        self._version += 1

    def forward(self, features):
        """Embed a (n, input_dim) batch; returns (embeddings, cache)."""
        f = np.asarray(features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != self.w1.shape[0]:
            raise ValueError(
                f"features must be (n, {self.w1.shape[0]}), got {f.shape}"
            )
        hidden = np.tanh(f @ self.w1 + self.b1)
        embeddings = hidden @ self.w2 + self.b2
        return embeddings, ForwardCache(f, hidden, self._version)

    def backward(self, cache: ForwardCache, d_embeddings) -> dict:
        """Chain-rule gradients of the four parameters given dL/d(embeddings)."""
        if cache.version != self._version:
            raise ValueError("stale forward cache: parameters changed since forward")
        d_e = np.asarray(d_embeddings, dtype=np.float64)
        if d_e.shape != (cache.hidden.shape[0], self.w2.shape[1]):
            raise ValueError(f"d_embeddings has wrong shape {d_e.shape}")
        d_w2 = cache.hidden.T @ d_e
        d_b2 = d_e.sum(axis=0)
        d_hidden = d_e @ self.w2.T
        d_pre = d_hidden * (1.0 - cache.hidden**2)
        d_w1 = cache.features.T @ d_pre
        d_b1 = d_pre.sum(axis=0)
        return {"w1": d_w1, "b1": d_b1, "w2": d_w2, "b2": d_b2}

    def to_state(self) -> dict:
        return {name: arr.tolist() for name, arr in self.params().items()}

    @classmethod
    def from_state(cls, state: dict, rng=None) -> "Embedder":
        w1 = np.asarray(state["w1"], dtype=np.float64)
        w2 = np.asarray(state["w2"], dtype=np.float64)
        emb = cls.__new__(cls)
        emb.w1 = w1
        emb.b1 = np.asarray(state["b1"], dtype=np.float64)
        emb.w2 = w2
        emb.b2 = np.asarray(state["b2"], dtype=np.float64)
        emb._version = 0
        return emb


@dataclass
class AdamState:
    """Adam moment accumulators keyed like the parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    proxy_lr_multiplier: float = 100.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_state(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "proxy_lr_multiplier": self.proxy_lr_multiplier,
            "step": self.step,
            "m": {k: val.tolist() for k, val in self.m.items()},
            "v": {k: val.tolist() for k, val in self.v.items()},
        }

    @classmethod
    def from_state(cls, state: dict) -> "AdamState":
        return cls(
            lr=state["lr"],
            beta1=state["beta1"],
            beta2=state["beta2"],
            epsilon=state["epsilon"],
            proxy_lr_multiplier=state["proxy_lr_multiplier"],
            step=state["step"],
            m={k: np.asarray(val, dtype=np.float64) for k, val in state["m"].items()},
            v={k: np.asarray(val, dtype=np.float64) for k, val in state["v"].items()},
        )


def init_adam(params: dict, lr: float, proxy_lr_multiplier: float = 100.0,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                      proxy_lr_multiplier=proxy_lr_multiplier)
    for name, arr in params.items():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One Adam update; returns new parameter arrays, mutating only `state`.

    The "proxies" entry steps with lr * proxy_lr_multiplier; everything else
    with the base lr.
    """
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        lr = state.lr * (state.proxy_lr_multiplier if name == "proxies" else 1.0)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return out
