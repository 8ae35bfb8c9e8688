"""Model quality scores: pairwise NPMI, top-k topic coherence, the default fitness
driving optimization, and correlation reporting against external labels.

Fitness functions are looked up by name through a registry so alternative
composites can be plugged in without touching the optimizer.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Callable

import numpy as np

from . import artm
from .corpus import CoocStats, Dataset

DEFAULT_NPMI_EPSILON = 1e-12


class UnknownTokenError(KeyError):
    pass


class DegenerateInputError(ValueError):
    pass


def _npmi_from_counts(n_ij: int, n_i: int, n_j: int, n_total: int, epsilon: float) -> float:
    p_ij = min((n_ij + epsilon) / n_total, 1.0)
    p_i = min((n_i + epsilon) / n_total, 1.0)
    p_j = min((n_j + epsilon) / n_total, 1.0)
    denom = -math.log(p_ij)
    if denom == 0.0:
        # the pair fills the whole observation space; association is undefined
        return 0.0
    return math.log(p_ij / (p_i * p_j)) / denom


def npmi_pair(w1: str, w2: str, cooc: CoocStats, epsilon: float = DEFAULT_NPMI_EPSILON) -> float:
    """Normalized PMI in [-1, 1] from windowed co-occurrence counts.

    Probabilities are n/N with ``epsilon`` added to each count, so a
    never-co-occurring pair tends to -1 and a perfectly co-occurring pair to +1
    as epsilon -> 0.
    """
    vocab = cooc.vocabulary
    for w in (w1, w2):
        if w not in vocab:
            raise UnknownTokenError(w)
    if cooc.n_positions == 0:
        return 0.0
    i, j = vocab.token_index(w1), vocab.token_index(w2)
    return _npmi_from_counts(
        cooc.pair_count(i, j), cooc.token_count(i), cooc.token_count(j), cooc.n_positions, epsilon
    )


def topic_coherence(
    model: artm.TopicModel,
    topic: int,
    k: int,
    cooc: CoocStats,
    epsilon: float = DEFAULT_NPMI_EPSILON,
) -> float:
    """Mean pairwise NPMI over the topic's top-k tokens.

    Pairs whose tokens never co-occur are scored through the epsilon guard, not
    skipped, so incoherent topics are penalized rather than ignored.
    """
    indices = artm.top_token_indices(model, topic, k)
    if len(indices) < 2 or cooc.n_positions == 0:
        return 0.0
    total = 0.0
    count = 0
    for i, j in combinations(indices.tolist(), 2):
        total += _npmi_from_counts(
            cooc.pair_count(i, j), cooc.token_count(i), cooc.token_count(j), cooc.n_positions, epsilon
        )
        count += 1
    return total / count


def mean_specific_coherence(model: artm.TopicModel, dataset: Dataset, k: int = 25) -> float:
    """Mean top-k coherence over specific (non-background) topics; the default fitness."""
    topics = range(model.num_background, model.num_topics)
    values = [topic_coherence(model, t, k, dataset.cooc) for t in topics]
    return float(np.mean(values))


def default_fitness(model: artm.TopicModel, dataset: Dataset, k: int = 25) -> float:
    return mean_specific_coherence(model, dataset, k=k)


def scorecard(model: artm.TopicModel, dataset: Dataset, k: int = 25) -> dict:
    """Per-topic coherence, roles and top tokens, plus the specific-topic aggregate."""
    topics = []
    for t in range(model.num_topics):
        topics.append(
            {
                "topic": t,
                "role": "background" if t < model.num_background else "specific",
                "coherence": topic_coherence(model, t, k, dataset.cooc),
                "top_tokens": artm.top_tokens(model, dataset.vocabulary, t, k),
            }
        )
    specific = [row["coherence"] for row in topics if row["role"] == "specific"]
    return {"k": k, "topics": topics, "mean_specific_coherence": float(np.mean(specific))}


# ---------------------------------------------------------------------------
# Correlation reporting
# ---------------------------------------------------------------------------


def _rankdata(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    xs = x[order]
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    return float(xc @ yc) / denom


def correlation_report(metric_values, human_labels) -> dict:
    """Pearson and Spearman correlation between per-topic metric values and labels."""
    x = np.asarray(metric_values, dtype=np.float64)
    y = np.asarray(human_labels, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("need two equal-length 1-d sequences of length >= 3")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("constant input has no defined correlation")
    return {
        "pearson": _pearson(x, y),
        "spearman": _pearson(_rankdata(x), _rankdata(y)),
    }


# ---------------------------------------------------------------------------
# Fitness registry
# ---------------------------------------------------------------------------

FitnessFn = Callable[[artm.TopicModel, Dataset], float]

_REGISTRY: dict[str, FitnessFn] = {}

DEFAULT_METRIC = "coherence_25"


def register_metric(name: str, fn: FitnessFn) -> None:
    _REGISTRY[name] = fn


def get_metric(name: str) -> FitnessFn:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; registered: {sorted(_REGISTRY)}") from None


def registered_metrics() -> list[str]:
    return sorted(_REGISTRY)


register_metric("coherence_25", lambda model, dataset: mean_specific_coherence(model, dataset, k=25))
register_metric("coherence_10", lambda model, dataset: mean_specific_coherence(model, dataset, k=10))
register_metric("log_likelihood", lambda model, dataset: artm.log_likelihood(model, dataset.corpus))
