"""P@K (hit rate) and MRR@K for single-label next-item prediction."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

DEFAULT_K = 20


@dataclass(frozen=True)
class EvalResult:
    p_at_k: float
    mrr_at_k: float
    n_cases: int
    k: int = DEFAULT_K

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "p_at_k": self.p_at_k, "mrr_at_k": self.mrr_at_k,
                           "n_cases": self.n_cases})

    def table(self) -> str:
        rows = [("metric", "value"), (f"P@{self.k}", f"{self.p_at_k:.4f}"),
                (f"MRR@{self.k}", f"{self.mrr_at_k:.4f}"), ("cases", str(self.n_cases))]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b:>10}" for a, b in rows)


def _label_ranks(rankings: Sequence[Sequence[int]], labels: Sequence[int]) -> np.ndarray:
    if len(rankings) == 0:
        raise InvalidArgumentError("no evaluation cases")
    if len(rankings) != len(labels):
        raise InvalidArgumentError("rankings and labels differ in length")
    ranks = np.empty(len(labels), dtype=np.int64)
    for i, (ranking, label) in enumerate(zip(rankings, labels)):
        ranking = list(ranking)
        ranks[i] = ranking.index(label) + 1 if label in ranking else np.iinfo(np.int64).max
    return ranks


def precision_at_k(rankings, labels, k: int = DEFAULT_K) -> float:
    """Fraction of cases whose label appears among the first ``k`` ranked items."""
    return hit_rate(_label_ranks(rankings, labels), k)


def mrr_at_k(rankings, labels, k: int = DEFAULT_K) -> float:
    return reciprocal_rank(_label_ranks(rankings, labels), k)


def hit_rate(ranks: np.ndarray, k: int = DEFAULT_K) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise InvalidArgumentError("no evaluation cases")
    return float(np.mean(ranks <= k))


def reciprocal_rank(ranks: np.ndarray, k: int = DEFAULT_K) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise InvalidArgumentError("no evaluation cases")
    contrib = np.where(ranks <= k, 1.0 / np.maximum(ranks, 1).astype(np.float64), 0.0)
    return float(np.mean(contrib))


def ranks_from_scores(scores: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    """1-based rank of each label; ties go to the lower item index."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(scores.shape[0])
    target = scores[rows, labels][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    better = (scores > target) | ((scores == target) & (idx < labels[:, None]))
    return better.sum(axis=1) + 1


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Item indices by descending score, ties by ascending index (per row)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def evaluate_ranks(ranks: np.ndarray, k: int = DEFAULT_K) -> EvalResult:
    return EvalResult(hit_rate(ranks, k), reciprocal_rank(ranks, k), int(np.asarray(ranks).size), k)


def random_mrr_expectation(n_items: int, k: int = DEFAULT_K) -> float:
    """Expected MRR@k when the label's rank is uniform over ``1..n_items``."""
    return float(sum(1.0 / r for r in range(1, min(k, n_items) + 1)) / n_items)


def random_precision_expectation(n_items: int, k: int = DEFAULT_K) -> float:
    return min(k, n_items) / n_items
