"""Calibrated proxy losses for deep metric learning.

Classes are represented by learnable proxies plus a per-class FIFO memory of
recent sample embeddings; losses score samples against that composite
center and pull proxies toward the stored embeddings. Includes a small
trainable embedder with manual backprop, synthetic sub-clustered data,
label-noise injection, retrieval metrics, and an experiment CLI.
"""

from .datalab import ClusterSpec, Dataset, gen_clusters, inject_noise, load_features, sample_batch
from .errors import ConfigError, DataError, NumericError
from .evaluator import EvalReport, export_embeddings, map_at_r, proxy_deviation, recall_at_k
from .global_center import GlobalCenter
from .losses import (
    BatchView,
    GradBundle,
    LossSpec,
    l_mse,
    loss_and_grad,
    proxy_anchor_value,
    proxy_nca_value,
    soft_triple_value,
    total_loss,
)
from .model import AdamState, Embedder, adam_step, init_adam
from .numerics import cosine_similarity, grad_check, l2_normalize, make_rng, softmax
from .similarity import ProxyBank, SimBreakdown, s_cp, s_em, s_mul

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BatchView",
    "ClusterSpec",
    "ConfigError",
    "DataError",
    "Dataset",
    "Embedder",
    "EvalReport",
    "GlobalCenter",
    "GradBundle",
    "LossSpec",
    "NumericError",
    "ProxyBank",
    "SimBreakdown",
    "adam_step",
    "cosine_similarity",
    "export_embeddings",
    "gen_clusters",
    "grad_check",
    "init_adam",
    "inject_noise",
    "l2_normalize",
    "l_mse",
    "load_features",
    "loss_and_grad",
    "make_rng",
    "map_at_r",
    "proxy_anchor_value",
    "proxy_deviation",
    "proxy_nca_value",
    "recall_at_k",
    "s_cp",
    "s_em",
    "s_mul",
    "sample_batch",
    "soft_triple_value",
    "softmax",
    "total_loss",
]
