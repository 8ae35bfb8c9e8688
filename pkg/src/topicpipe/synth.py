"""Synthetic desk-scale corpora sampled from a planted topic structure.

Each specific topic owns an exclusive word block whose first ``top_words``
entries are its ground-truth top set; a shared pool plays the role of
corpus-wide background vocabulary. Useful for recovery tests and fast
optimizer benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    Dataset,
    Document,
    build_vocabulary,
    compute_cooccurrence,
    compute_ppmi,
    vectorize,
)


@dataclass(frozen=True)
class PlantedConfig:
    num_docs: int = 200
    num_specific: int = 5
    exclusive_per_topic: int = 25
    top_words: int = 10
    shared_words: int = 50
    doc_len: int = 80
    doc_topic_alpha: float = 0.03
    shared_mass: float = 0.1
    top_mass: float = 0.75
    window_size: int = 10
    seed: int = 0

    @property
    def vocab_size(self) -> int:
        return self.num_specific * self.exclusive_per_topic + self.shared_words


def _topic_word_distributions(config: PlantedConfig) -> tuple[list[str], np.ndarray]:
    words = [
        f"t{t}w{w:02d}" for t in range(config.num_specific) for w in range(config.exclusive_per_topic)
    ]
    words += [f"shared{w:02d}" for w in range(config.shared_words)]
    V = len(words)
    dists = np.zeros((config.num_specific, V))
    for t in range(config.num_specific):
        base = t * config.exclusive_per_topic
        specific_mass = 1.0 - config.shared_mass
        tail = config.exclusive_per_topic - config.top_words
        top_mass = config.top_mass if tail else 1.0
        dists[t, base : base + config.top_words] = specific_mass * top_mass / config.top_words
        if tail:
            dists[t, base + config.top_words : base + config.exclusive_per_topic] = (
                specific_mass * (1.0 - config.top_mass) / tail
            )
        shared_base = config.num_specific * config.exclusive_per_topic
        dists[t, shared_base:] = config.shared_mass / config.shared_words
    return words, dists


def planted_top_sets(config: PlantedConfig) -> list[list[str]]:
    """Ground-truth top-word lists, one per specific topic."""
    return [
        [f"t{t}w{w:02d}" for w in range(config.top_words)] for t in range(config.num_specific)
    ]


def make_planted_documents(config: PlantedConfig) -> list[Document]:
    rng = np.random.default_rng(config.seed)
    words, dists = _topic_word_distributions(config)
    V = len(words)
    docs: list[list[str]] = []
    for d in range(config.num_docs):
        theta = rng.dirichlet(np.full(config.num_specific, config.doc_topic_alpha))
        topics = rng.choice(config.num_specific, size=config.doc_len, p=theta)
        tokens = []
        for t in topics:
            tokens.append(words[int(rng.choice(V, p=dists[t]))])
        docs.append(tokens)
    # coverage pad: every vocabulary word appears at least once, for any seed
    for i, word in enumerate(words):
        docs[i % config.num_docs].append(word)
    return [Document(id=f"doc{d:05d}", tokens=tuple(tokens)) for d, tokens in enumerate(docs)]


def make_planted_dataset(config: PlantedConfig | None = None) -> Dataset:
    config = config or PlantedConfig()
    docs = make_planted_documents(config)
    vocab = build_vocabulary(docs, min_df=1, max_df_ratio=1.0)
    corpus = vectorize(docs, vocab)
    cooc = compute_cooccurrence(docs, vocab, window_size=config.window_size)
    ppmi = compute_ppmi(cooc)
    meta = {
        "generator": {
            "num_docs": config.num_docs,
            "num_specific": config.num_specific,
            "exclusive_per_topic": config.exclusive_per_topic,
            "top_words": config.top_words,
            "shared_words": config.shared_words,
            "doc_len": config.doc_len,
            "doc_topic_alpha": config.doc_topic_alpha,
            "shared_mass": config.shared_mass,
            "top_mass": config.top_mass,
            "window_size": config.window_size,
            "seed": config.seed,
        },
        "drop_counts": {"empty_after_preprocess": 0, "no_vocab_tokens": 0},
    }
    return Dataset(corpus=corpus, cooc=cooc, ppmi=ppmi, meta=meta)
