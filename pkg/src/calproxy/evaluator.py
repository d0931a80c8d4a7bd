"""Retrieval metrics, the proxy-deviation diagnostic, and embedding export.

Ranking uses cosine similarity with self excluded and ties broken by
ascending index, so results are reproducible across platforms. Queries with
no same-class partner are excluded from the averages and counted instead of
being scored zero.
"""

import csv
from dataclasses import dataclass, field

import numpy as np


def _normalized_rows(embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two embedding rows")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("embeddings contain a zero row")
    return x / norms[:, None]


def _ranking(sims_row: np.ndarray, query: int) -> np.ndarray:
    """Indices of all other samples, best first; equal similarities keep
    ascending index order."""
    row = sims_row.copy()
    row[query] = -np.inf
    order = np.argsort(-row, kind="stable")
    return order[:-1]


def isolated_query_count(labels) -> int:
    """Number of samples whose class appears only once."""
    y = np.asarray(labels)
    _unique, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    return int((counts[inverse] == 1).sum())


def recall_at_k(embeddings, labels, ks) -> dict:
    """Fraction of queries with a same-class sample among their K nearest
    neighbors, per K. Partnerless queries are excluded."""
    x_hat = _normalized_rows(embeddings)
    y = np.asarray(labels)
    sims = x_hat @ x_hat.T
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks):
        raise ValueError("every K must be >= 1")
    hits = {k: 0 for k in ks}
    valid = 0
    for q in range(x_hat.shape[0]):
        order = _ranking(sims[q], q)
        if not np.any(y[order] == y[q]):
            continue
        valid += 1
        same = y[order] == y[q]
        for k in ks:
            if np.any(same[: min(k, order.size)]):
                hits[k] += 1
    if valid == 0:
        raise ValueError("no query has a same-class partner")
    return {k: hits[k] / valid for k in ks}


def map_at_r(embeddings, labels) -> float:
    """Mean average precision at R, where R is the query's same-class count.

    Only the first R retrieved items are scored: precision at rank i is
    added when the rank-i item is correct, and the per-query sum divides
    by R. Accumulation runs in rank order and queries average in index
    order, keeping the result exactly reproducible.
    """
    x_hat = _normalized_rows(embeddings)
    y = np.asarray(labels)
    sims = x_hat @ x_hat.T
    total = 0.0
    valid = 0
    for q in range(x_hat.shape[0]):
        order = _ranking(sims[q], q)
        same = y[order] == y[q]
        r = int(same.sum())
        if r == 0:
            continue
        correct = 0
        ap = 0.0
        for rank in range(1, r + 1):
            if same[rank - 1]:
                correct += 1
                ap += correct / rank
        total += ap / r
        valid += 1
    if valid == 0:
        raise ValueError("no query has a same-class partner")
    return total / valid


def proxy_deviation(embeddings_by_class: dict, bank) -> tuple:
    """Per-class distance between the mean sample embedding and the mean
    proxy. Returns (deviations: {class_id: float}, skipped_class_ids)."""
    deviations = {}
    skipped = []
    for c in range(bank.n_classes):
        group = embeddings_by_class.get(c)
        if group is None or len(group) == 0:
            skipped.append(c)
            continue
        sample_mean = np.asarray(group, dtype=np.float64).mean(axis=0)
        proxy_mean = bank.class_proxies(c).mean(axis=0)
        deviations[c] = float(np.linalg.norm(sample_mean - proxy_mean))
    return deviations, skipped


def export_embeddings(embeddings, labels, path) -> None:
    """Write `label,e0,...,e{d-1}` rows in input order with round-trip-exact
    float formatting."""
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        dim = x.shape[1] if x.size else 0
        writer.writerow(["label"] + [f"e{i}" for i in range(dim)])
        for label, row in zip(y, x):
            writer.writerow([int(label)] + [f"{v:.17g}" for v in row])


@dataclass
class EvalReport:
    """Retrieval metrics plus the proxy-deviation diagnostic for one
    evaluation point."""

    epoch: int
    recall_at: dict
    map_at_r: float
    mean_deviation: float | None = None
    per_class_deviation: dict = field(default_factory=dict)
    excluded_queries: int = 0
    skipped_classes: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "map_at_r": self.map_at_r,
            "mean_deviation": self.mean_deviation,
            "per_class_deviation": {str(k): v for k, v in self.per_class_deviation.items()},
            "excluded_queries": self.excluded_queries,
            "skipped_classes": self.skipped_classes,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            epoch=d["epoch"],
            recall_at={int(k): v for k, v in d["recall_at"].items()},
            map_at_r=d["map_at_r"],
            mean_deviation=d["mean_deviation"],
            per_class_deviation={int(k): v for k, v in d["per_class_deviation"].items()},
            excluded_queries=d["excluded_queries"],
            skipped_classes=list(d["skipped_classes"]),
            metadata=dict(d["metadata"]),
        )


def build_report(epoch, test_embeddings, test_labels, ks,
                 deviation_groups=None, bank=None, metadata=None) -> EvalReport:
    """Assemble an EvalReport; deviation is included when both a grouping of
    embeddings by class and a proxy bank are supplied."""
    recalls = recall_at_k(test_embeddings, test_labels, ks)
    mapr = map_at_r(test_embeddings, test_labels)
    mean_dev = None
    per_class = {}
    skipped = []
    if deviation_groups is not None and bank is not None:
        per_class, skipped = proxy_deviation(deviation_groups, bank)
        if per_class:
            mean_dev = float(np.mean(list(per_class.values())))
    return EvalReport(
        epoch=epoch,
        recall_at=recalls,
        map_at_r=mapr,
        mean_deviation=mean_dev,
        per_class_deviation=per_class,
        excluded_queries=isolated_query_count(test_labels),
        skipped_classes=skipped,
        metadata=metadata or {},
    )
