"""Full-ranking top-N evaluation (Recall@N, NDCG@N)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .dataset import InteractionDataset, SplitBundle
from .graph import NormalizedAdjacency, build_normalized_adjacency
from .model import ModelConfig, final_embeddings, item_similarity, user_similarity_scores


@dataclass
class MetricsReport:
    recall_at_n: float
    ndcg_at_n: float
    n: int
    users_evaluated: int
    phase: str = ""
    per_user: dict = field(default_factory=dict, repr=False)

    def to_dict(self, include_per_user: bool = False) -> dict:
        d = asdict(self)
        if not include_per_user:
            d.pop("per_user")
        else:
            d["per_user"] = {k: np.asarray(v).tolist() for k, v in self.per_user.items()}
        return d


def rank_topn(score_row, mask: Iterable[int], n: int) -> list[int]:
    """Top-``n`` unmasked items by descending score, ties to the lower item ID."""
    if n < 1:
        raise ValueError("n must be >= 1")
    scores = np.asarray(score_row, dtype=np.float64)
    masked = np.zeros(scores.size, dtype=bool)
    masked[np.fromiter(mask, dtype=np.int64)] = True
    candidates = np.flatnonzero(~masked)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:n]].tolist()


def recall_at_n(topn: Iterable[int], truth: Iterable[int]) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("recall is undefined for an empty ground truth")
    return len(truth.intersection(topn)) / len(truth)


def _idcg(count: int) -> float:
    return sum(1.0 / math.log2(r + 1) for r in range(1, count + 1))


def ndcg_at_n(topn: list[int], truth: Iterable[int], n: int) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("NDCG is undefined for an empty ground truth")
    dcg = sum(1.0 / math.log2(r + 1) for r, item in enumerate(topn[:n], start=1) if item in truth)
    return dcg / _idcg(min(len(truth), n))


def _topn_block(scores: np.ndarray, mask: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`rank_topn` for a block of users.

    Returns the top-``n`` item matrix and a validity matrix that is False
    where a user has fewer than ``n`` candidates.
    """
    keyed = -scores.astype(np.float64, copy=True)
    keyed[mask] = np.inf
    n_eff = min(n, scores.shape[1])
    order = np.argsort(keyed, axis=1, kind="stable")[:, :n_eff]
    valid = ~np.take_along_axis(mask, order, axis=1)
    return order, valid


def metrics_from_scores(scores: np.ndarray, users: np.ndarray, train: InteractionDataset,
                        truth: InteractionDataset, n: int):
    """Recall and NDCG rows for ``users`` given their score block."""
    mask = train.csr(np.float64)[users].toarray() > 0
    gt = truth.csr(np.float64)[users].toarray() > 0
    top, valid = _topn_block(scores, mask, n)
    hits = np.take_along_axis(gt, top, axis=1) & valid
    n_truth = gt.sum(axis=1)
    discounts = 1.0 / np.log2(np.arange(2, top.shape[1] + 2))
    idcg_table = np.concatenate([[0.0], np.cumsum(1.0 / np.log2(np.arange(2, n + 2)))])
    recall = hits.sum(axis=1) / n_truth
    ndcg = (hits * discounts).sum(axis=1) / idcg_table[np.minimum(n_truth, n)]
    return recall, ndcg


def _score_block(rows: np.ndarray, train: InteractionDataset, config: ModelConfig,
                 U: np.ndarray, I: np.ndarray, B: np.ndarray | None) -> np.ndarray:
    if config.mode == "mf":
        return U[rows] @ I.T
    if config.side == "user":
        return user_similarity_scores(train.csr(U.dtype), U, rows)
    return np.asarray(train.csr(B.dtype)[rows] @ B)


def evaluate(params: np.ndarray, split: SplitBundle, config: ModelConfig, phase: str = "valid",
             adj: NormalizedAdjacency | None = None, n: int = 10, chunk: int = 1024,
             per_user: bool = False) -> MetricsReport:
    """Rank every non-train item for each user with held-out items in ``phase``."""
    train = split.train
    if adj is None:
        adj = build_normalized_adjacency(train, dtype=params.dtype)
    U, I = final_embeddings(params, adj, config)
    B = item_similarity(I) if config.mode == "slim" and config.side == "item" else None
    return _evaluate_with(lambda rows: _score_block(rows, train, config, U, I, B),
                          train, split.phase(phase), phase, n, chunk, per_user)


def evaluate_similarity(B: np.ndarray, split: SplitBundle, phase: str = "test", n: int = 10,
                        chunk: int = 1024, per_user: bool = False) -> MetricsReport:
    """Evaluate a frozen item-similarity matrix via ``X @ B``."""
    train = split.train
    return _evaluate_with(lambda rows: np.asarray(train.csr(B.dtype)[rows] @ B),
                          train, split.phase(phase), phase, n, chunk, per_user)


def _evaluate_with(score_fn, train, truth, phase, n, chunk, per_user) -> MetricsReport:
    users = np.flatnonzero(truth.user_degrees() > 0)
    recalls, ndcgs = [], []
    for start in range(0, users.size, chunk):
        rows = users[start:start + chunk]
        r, g = metrics_from_scores(score_fn(rows), rows, train, truth, n)
        recalls.append(r)
        ndcgs.append(g)
    recall = np.concatenate(recalls) if recalls else np.empty(0)
    ndcg = np.concatenate(ndcgs) if ndcgs else np.empty(0)
    report = MetricsReport(
        recall_at_n=float(recall.mean()) if recall.size else 0.0,
        ndcg_at_n=float(ndcg.mean()) if ndcg.size else 0.0,
        n=n, users_evaluated=int(users.size), phase=phase)
    if per_user:
        report.per_user = {"user": users, "recall": recall, "ndcg": ndcg}
    return report
