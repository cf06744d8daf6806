"""Ranking metrics over TREC runs and qrels.

Graded labels are binarized at >= 1 for both metrics. Queries with no
judged-relevant passage are excluded from the means, per the usual TREC
convention.
"""

from __future__ import annotations

from .errors import ConfigurationError
from .trec import RunFile


def _relevant_set(judgments: dict[str, int]) -> set[str]:
    return {pid for pid, grade in judgments.items() if grade >= 1}


def mrr_at_k(run: RunFile, qrels: dict[str, dict[str, int]], k: int) -> float:
    """Mean reciprocal rank of the first relevant passage within top k."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    per_query = run.by_query()
    if not per_query:
        raise ConfigurationError("empty run")
    total = 0.0
    n = 0
    for qid, ranking in per_query.items():
        relevant = _relevant_set(qrels.get(qid, {}))
        if not relevant:
            continue
        n += 1
        for pid, rank, _ in ranking:
            if rank > k:
                break
            if pid in relevant:
                total += 1.0 / rank
                break
    if n == 0:
        raise ConfigurationError("no query has a judged-relevant passage")
    return total / n


def map_at_k(run: RunFile, qrels: dict[str, dict[str, int]], k: int) -> float:
    """Mean average precision at cutoff k.

    Per query: sum of precision@i over relevant hits at ranks i <= k,
    divided by min(R, k) where R is the number of judged-relevant
    passages.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    per_query = run.by_query()
    if not per_query:
        raise ConfigurationError("empty run")
    total = 0.0
    n = 0
    for qid, ranking in per_query.items():
        relevant = _relevant_set(qrels.get(qid, {}))
        if not relevant:
            continue
        n += 1
        hits = 0
        precision_sum = 0.0
        for pid, rank, _ in ranking:
            if rank > k:
                break
            if pid in relevant:
                hits += 1
                precision_sum += hits / rank
        total += precision_sum / min(len(relevant), k)
    if n == 0:
        raise ConfigurationError("no query has a judged-relevant passage")
    return total / n
