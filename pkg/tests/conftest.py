from __future__ import annotations

import numpy as np
import pytest

from topicpipe.corpus import (
    Document,
    build_vocabulary,
    compute_cooccurrence,
    compute_ppmi,
    vectorize,
)
from topicpipe.synth import PlantedConfig, make_planted_dataset

# 20 small documents with deliberate repeats, stopword-free tokens, fixed order.
FIXTURE20_TOKENS = [
    ["alpha", "beta", "gamma", "alpha"],
    ["beta", "gamma", "delta"],
    ["alpha", "alpha", "alpha"],
    ["delta", "epsilon", "zeta", "eta"],
    ["zeta", "eta", "zeta"],
    ["alpha", "delta", "alpha", "delta"],
    ["gamma", "gamma", "beta"],
    ["epsilon", "epsilon", "epsilon", "epsilon"],
    ["eta", "alpha", "beta"],
    ["delta", "zeta"],
    ["alpha", "beta"],
    ["beta", "alpha", "gamma", "delta", "epsilon"],
    ["zeta", "zeta", "eta", "eta"],
    ["gamma", "delta", "gamma"],
    ["alpha", "epsilon", "alpha"],
    ["beta", "beta"],
    ["eta", "zeta", "epsilon"],
    ["delta", "delta", "delta", "alpha"],
    ["gamma", "alpha", "eta"],
    ["epsilon", "zeta", "beta", "gamma"],
]


@pytest.fixture(scope="session")
def fixture20_docs() -> list[Document]:
    return [Document(id=f"d{i:02d}", tokens=tuple(toks)) for i, toks in enumerate(FIXTURE20_TOKENS)]


@pytest.fixture(scope="session")
def fixture20(fixture20_docs):
    """(docs, vocabulary, corpus, cooc, ppmi) bundle over the 20-doc fixture."""
    vocab = build_vocabulary(fixture20_docs, min_df=1, max_df_ratio=1.0)
    corpus = vectorize(fixture20_docs, vocab)
    cooc = compute_cooccurrence(fixture20_docs, vocab, window_size=2)
    ppmi = compute_ppmi(cooc)
    return fixture20_docs, vocab, corpus, cooc, ppmi


@pytest.fixture(scope="session")
def small_planted():
    """Fast planted dataset shared by optimizer tests."""
    return make_planted_dataset(
        PlantedConfig(
            num_docs=80,
            num_specific=4,
            exclusive_per_topic=15,
            shared_words=30,
            doc_len=50,
            seed=7,
        )
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
