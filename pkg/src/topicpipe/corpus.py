"""Corpus construction: text preprocessing, vocabulary, sparse counts, co-occurrence and PPMI
statistics, batching, and the on-disk corpus directory format.

All artifacts produced here are immutable after construction and safe to share across
concurrent training runs.
"""

from __future__ import annotations

import html
import json
import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import stopwords

log = logging.getLogger(__name__)


class EmptyVocabularyError(ValueError):
    """No token survived the document-frequency thresholds."""


class EmptyCorpusError(ValueError):
    """Every document was excluded during vectorization."""


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

_TAG_RE = re.compile(r"<[^>]*>")
_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*", re.UNICODE)

# (suffix, replacement, minimum token length for the rule to apply)
_SUFFIX_RULES = (
    ("ies", "y", 5),
    ("sses", "ss", 6),
    ("ing", "", 6),
    ("ed", "", 5),
    ("ly", "", 5),
    ("es", "", 5),
    ("s", "", 3),
)


def suffix_strip(token: str) -> str:
    """Light suffix-stripping normalizer (not a lemmatizer; see PreprocessConfig.normalizer)."""
    for suffix, repl, min_len in _SUFFIX_RULES:
        if len(token) >= min_len and token.endswith(suffix):
            if suffix == "s" and token.endswith(("ss", "us", "is")):
                continue
            return token[: len(token) - len(suffix)] + repl
    return token


@dataclass(frozen=True)
class PreprocessConfig:
    strip_html: bool = True
    remove_digit_tokens: bool = True
    min_token_len: int = 2
    languages: tuple[str, ...] = ("english", "russian")
    extra_stopwords: frozenset = frozenset()
    stem: bool = True
    replacements: dict = field(default_factory=dict)
    # Final per-token hook; plug a real lemmatizer here for languages the light
    # stemmer does not cover. Returning "" drops the token.
    normalizer: Callable[[str], str] | None = None

    def stopword_set(self) -> frozenset:
        out: set[str] = set(self.extra_stopwords)
        for lang in self.languages:
            try:
                out |= getattr(stopwords, lang.upper())
            except AttributeError:
                raise ValueError(f"no built-in stopword list for language {lang!r}") from None
        return frozenset(out)

    def echo(self) -> dict:
        """JSON-safe summary for provenance files."""
        return {
            "strip_html": self.strip_html,
            "remove_digit_tokens": self.remove_digit_tokens,
            "min_token_len": self.min_token_len,
            "languages": list(self.languages),
            "extra_stopwords": sorted(self.extra_stopwords),
            "stem": self.stem,
            "replacements": dict(sorted(self.replacements.items())),
            "custom_normalizer": self.normalizer is not None,
        }


def preprocess_text(raw: str, config: PreprocessConfig | None = None) -> list[str]:
    """Turn raw text into a normalized token list.

    Steps, in order: HTML tag stripping, lowercasing, tokenization (punctuation
    discarded, digit-bearing tokens optionally dropped), stopword removal,
    minimum-length filter, then normalization (replacement dictionary, optional
    suffix stripping, optional custom hook). An empty result is valid.
    """
    config = config or PreprocessConfig()
    text = raw
    if config.strip_html:
        text = html.unescape(_TAG_RE.sub(" ", text))
    text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    if config.remove_digit_tokens:
        tokens = [t for t in tokens if not any(c.isdigit() for c in t)]
    stop = config.stopword_set()
    tokens = [t for t in tokens if t not in stop and len(t) >= config.min_token_len]
    out = []
    for tok in tokens:
        tok = config.replacements.get(tok, tok)
        if config.stem:
            tok = suffix_strip(tok)
        if config.normalizer is not None:
            tok = config.normalizer(tok)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Document:
    """A preprocessed document: unique id plus ordered normalized tokens."""

    id: str
    tokens: tuple[str, ...]


@dataclass
class PreprocessReport:
    input_docs: int = 0
    kept_docs: int = 0
    dropped_empty: int = 0


def preprocess_documents(
    raw_docs: Iterable[tuple[str, str]],
    config: PreprocessConfig | None = None,
) -> tuple[list[Document], PreprocessReport]:
    """Preprocess (id, text) pairs; documents emptied by preprocessing are dropped, not errors."""
    config = config or PreprocessConfig()
    report = PreprocessReport()
    docs: list[Document] = []
    seen: set[str] = set()
    for doc_id, text in raw_docs:
        if doc_id in seen:
            raise ValueError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        report.input_docs += 1
        tokens = preprocess_text(text, config)
        if not tokens:
            report.dropped_empty += 1
            log.debug("document %s empty after preprocessing; dropped", doc_id)
            continue
        docs.append(Document(id=doc_id, tokens=tuple(tokens)))
    report.kept_docs = len(docs)
    return docs, report


def read_raw_documents(path: str | Path, fmt: str = "lines", delimiter: str = "\t") -> list[tuple[str, str]]:
    """Read raw input: one document per line, or a two-column (id, text) delimited file."""
    path = Path(path)
    pairs: list[tuple[str, str]] = []
    with path.open("r", encoding="utf-8") as fh:
        if fmt == "lines":
            for i, line in enumerate(fh):
                line = line.rstrip("\n")
                if line.strip():
                    pairs.append((f"doc{i:06d}", line))
        elif fmt == "tsv":
            for i, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                doc_id, _, text = line.partition(delimiter)
                if not _:
                    raise ValueError(f"line {i + 1}: expected two {delimiter!r}-separated columns")
                pairs.append((doc_id, text))
        else:
            raise ValueError(f"unknown input format {fmt!r}")
    return pairs


# ---------------------------------------------------------------------------
# Vocabulary and sparse corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Token <-> dense index bijection with per-token document frequencies."""

    tokens: tuple[str, ...]
    df: tuple[int, ...]
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def token_index(self, token: str) -> int:
        return self.index[token]


def build_vocabulary(
    documents: Sequence[Document],
    min_df: int = 1,
    max_df_ratio: float = 1.0,
) -> Vocabulary:
    """Retain tokens with min_df <= df <= max_df_ratio * D.

    Indices are assigned in descending document frequency, ties broken
    lexicographically, so the mapping is deterministic.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    if not 0 < max_df_ratio <= 1:
        raise ValueError("max_df_ratio must be in (0, 1]")
    df: Counter = Counter()
    for doc in documents:
        df.update(set(doc.tokens))
    limit = max_df_ratio * len(documents)
    kept = [(t, c) for t, c in df.items() if min_df <= c <= limit]
    if not kept:
        raise EmptyVocabularyError(
            f"no token has document frequency in [{min_df}, {limit:g}] over {len(documents)} documents"
        )
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    tokens = tuple(t for t, _ in kept)
    return Vocabulary(
        tokens=tokens,
        df=tuple(c for _, c in kept),
        index={t: i for i, t in enumerate(tokens)},
    )


class Corpus:
    """Immutable bag-of-words corpus in CSR-like layout.

    ``indices[indptr[d]:indptr[d+1]]`` are the (sorted) vocabulary indices of
    document d, with parallel ``counts``.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        doc_ids: Sequence[str],
        indptr: np.ndarray,
        indices: np.ndarray,
        counts: np.ndarray,
    ):
        self.vocabulary = vocabulary
        self.doc_ids = tuple(doc_ids)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if len(self.indptr) != len(self.doc_ids) + 1:
            raise ValueError("indptr length must be num_docs + 1")
        if self.indices.size and self.indices.max() >= vocabulary.size:
            raise ValueError("token index out of vocabulary range")
        # row id of every stored entry, precomputed for the vectorized E-step
        self.rows = np.repeat(np.arange(self.num_docs, dtype=np.int64), np.diff(self.indptr))
        self.total_tokens = int(self.counts.sum())
        for arr in (self.indptr, self.indices, self.counts, self.rows):
            arr.flags.writeable = False

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    def doc_counts(self, d: int) -> dict:
        lo, hi = self.indptr[d], self.indptr[d + 1]
        return {int(i): int(c) for i, c in zip(self.indices[lo:hi], self.counts[lo:hi])}


def vectorize(documents: Sequence[Document], vocabulary: Vocabulary) -> Corpus:
    """Count retained tokens per document; documents with no in-vocabulary token are excluded."""
    doc_ids: list[str] = []
    indptr = [0]
    indices: list[int] = []
    counts: list[int] = []
    excluded = 0
    for doc in documents:
        c = Counter(vocabulary.index[t] for t in doc.tokens if t in vocabulary.index)
        if not c:
            excluded += 1
            log.info("document %s has no in-vocabulary tokens; excluded", doc.id)
            continue
        doc_ids.append(doc.id)
        for idx in sorted(c):
            indices.append(idx)
            counts.append(c[idx])
        indptr.append(len(indices))
    if not doc_ids:
        raise EmptyCorpusError(f"all {len(documents)} documents excluded during vectorization")
    if excluded:
        log.info("vectorize: excluded %d of %d documents", excluded, len(documents))
    return Corpus(
        vocabulary=vocabulary,
        doc_ids=doc_ids,
        indptr=np.array(indptr, dtype=np.int64),
        indices=np.array(indices, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# Co-occurrence statistics and PPMI
# ---------------------------------------------------------------------------


class CoocStats:
    """Windowed co-occurrence counts over pair observations.

    A pair observation is a token-position pair (i, j), i < j, with j - i <=
    window_size inside one document. ``n_positions`` (N) is the total number of
    pair observations; a token's single count is the number of observations it
    participates in, so n(wi, wj) <= min(n(wi), n(wj)) <= N by construction.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        window_size: int,
        pair_counts: dict,
        single_counts: np.ndarray,
        n_positions: int,
    ):
        self.vocabulary = vocabulary
        self.window_size = window_size
        self.pair_counts = pair_counts
        self.single_counts = np.asarray(single_counts, dtype=np.int64)
        self.single_counts.flags.writeable = False
        self.n_positions = int(n_positions)

    def pair_count(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.pair_counts.get((i, j), 0)

    def token_count(self, i: int) -> int:
        return int(self.single_counts[i])


def compute_cooccurrence(
    documents: Sequence[Document],
    vocabulary: Vocabulary,
    window_size: int = 10,
) -> CoocStats:
    """Slide a symmetric window over each document's in-vocabulary token sequence.

    Each unordered pair within distance <= window_size is counted once per
    position pair. Out-of-vocabulary tokens are dropped before windowing.
    """
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    pair_counts: dict = {}
    single = np.zeros(vocabulary.size, dtype=np.int64)
    n_positions = 0
    for doc in documents:
        idx = [vocabulary.index[t] for t in doc.tokens if t in vocabulary.index]
        L = len(idx)
        for i in range(L):
            a = idx[i]
            for j in range(i + 1, min(i + window_size + 1, L)):
                b = idx[j]
                key = (a, b) if a <= b else (b, a)
                pair_counts[key] = pair_counts.get(key, 0) + 1
                n_positions += 1
                single[a] += 1
                if b != a:
                    single[b] += 1
    return CoocStats(
        vocabulary=vocabulary,
        window_size=window_size,
        pair_counts=pair_counts,
        single_counts=single,
        n_positions=n_positions,
    )


DEFAULT_PPMI_EPSILON = 1e-12


def compute_ppmi(cooc: CoocStats, epsilon: float = DEFAULT_PPMI_EPSILON) -> dict:
    """PPMI(wi, wj) = max(0, ln[(n(wi,wj) * N + eps) / (n(wi) * n(wj) + eps)]); zeros omitted."""
    if cooc.n_positions == 0:
        raise ValueError("co-occurrence statistics are empty")
    out: dict = {}
    n = cooc.n_positions
    for (i, j), nij in cooc.pair_counts.items():
        value = np.log((nij * n + epsilon) / (int(cooc.single_counts[i]) * int(cooc.single_counts[j]) + epsilon))
        if value > 0:
            out[(i, j)] = float(value)
    return out


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    ordinal: int
    doc_indices: tuple[int, ...]


def batch_corpus(corpus: Corpus, batch_size: int) -> list[Batch]:
    """Contiguous partition of document indices in stored order; the final batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches = []
    for ordinal, start in enumerate(range(0, corpus.num_docs, batch_size)):
        stop = min(start + batch_size, corpus.num_docs)
        batches.append(Batch(ordinal=ordinal, doc_indices=tuple(range(start, stop))))
    return batches


# ---------------------------------------------------------------------------
# Corpus directory format
# ---------------------------------------------------------------------------

_CORPUS_MAGIC = b"TPC1"
_COOC_MAGIC = b"TPX1"
_PPMI_MAGIC = b"TPP1"


def _write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varints are unsigned")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    value = 0
    shift = 0
    while True:
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7


@dataclass
class Dataset:
    """Everything a fitness evaluation needs: corpus plus its co-occurrence artifacts."""

    corpus: Corpus
    cooc: CoocStats
    ppmi: dict
    meta: dict

    @property
    def vocabulary(self) -> Vocabulary:
        return self.corpus.vocabulary


def save_corpus_dir(dirpath: str | Path, dataset: Dataset) -> None:
    """Write vocab.tsv, corpus.bin, cooc.bin, ppmi.bin and meta.json; bit-exact across runs."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    corpus, cooc, ppmi = dataset.corpus, dataset.cooc, dataset.ppmi
    vocab = corpus.vocabulary

    with (dirpath / "vocab.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for i, (token, df) in enumerate(zip(vocab.tokens, vocab.df)):
            fh.write(f"{token}\t{i}\t{df}\n")

    buf = bytearray(_CORPUS_MAGIC)
    buf += struct.pack("<I", corpus.num_docs)
    for d in range(corpus.num_docs):
        lo, hi = corpus.indptr[d], corpus.indptr[d + 1]
        _write_varint(buf, hi - lo)
        for idx, cnt in zip(corpus.indices[lo:hi], corpus.counts[lo:hi]):
            _write_varint(buf, int(idx))
            _write_varint(buf, int(cnt))
    (dirpath / "corpus.bin").write_bytes(bytes(buf))

    buf = bytearray(_COOC_MAGIC)
    buf += struct.pack("<IQI", cooc.window_size, cooc.n_positions, vocab.size)
    buf += cooc.single_counts.astype("<u8").tobytes()
    pairs = sorted(cooc.pair_counts.items())
    buf += struct.pack("<Q", len(pairs))
    for (i, j), c in pairs:
        buf += struct.pack("<IIQ", i, j, c)
    (dirpath / "cooc.bin").write_bytes(bytes(buf))

    buf = bytearray(_PPMI_MAGIC)
    entries = sorted(ppmi.items())
    buf += struct.pack("<Q", len(entries))
    for (i, j), v in entries:
        buf += struct.pack("<IId", i, j, v)
    (dirpath / "ppmi.bin").write_bytes(bytes(buf))

    meta = dict(dataset.meta)
    meta["doc_ids"] = list(corpus.doc_ids)
    (dirpath / "meta.json").write_text(
        json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=True) + "\n",
        encoding="utf-8",
    )


def load_corpus_dir(dirpath: str | Path) -> Dataset:
    dirpath = Path(dirpath)
    meta = json.loads((dirpath / "meta.json").read_text(encoding="utf-8"))
    doc_ids = meta["doc_ids"]

    tokens: list[str] = []
    dfs: list[int] = []
    for line in (dirpath / "vocab.tsv").read_text(encoding="utf-8").splitlines():
        token, idx, df = line.split("\t")
        if int(idx) != len(tokens):
            raise ValueError("vocab.tsv indices must be dense and ordered")
        tokens.append(token)
        dfs.append(int(df))
    vocab = Vocabulary(tokens=tuple(tokens), df=tuple(dfs), index={t: i for i, t in enumerate(tokens)})

    data = (dirpath / "corpus.bin").read_bytes()
    if data[:4] != _CORPUS_MAGIC:
        raise ValueError("corpus.bin: bad magic")
    (num_docs,) = struct.unpack_from("<I", data, 4)
    pos = 8
    indptr = [0]
    indices: list[int] = []
    counts: list[int] = []
    for _ in range(num_docs):
        nnz, pos = _read_varint(data, pos)
        for _ in range(nnz):
            idx, pos = _read_varint(data, pos)
            cnt, pos = _read_varint(data, pos)
            indices.append(idx)
            counts.append(cnt)
        indptr.append(len(indices))
    corpus = Corpus(
        vocabulary=vocab,
        doc_ids=doc_ids,
        indptr=np.array(indptr, dtype=np.int64),
        indices=np.array(indices, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64),
    )

    data = (dirpath / "cooc.bin").read_bytes()
    if data[:4] != _COOC_MAGIC:
        raise ValueError("cooc.bin: bad magic")
    window, n_positions, vsize = struct.unpack_from("<IQI", data, 4)
    pos = 4 + 16
    single = np.frombuffer(data, dtype="<u8", count=vsize, offset=pos).astype(np.int64)
    pos += 8 * vsize
    (n_pairs,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    pair_counts: dict = {}
    for _ in range(n_pairs):
        i, j, c = struct.unpack_from("<IIQ", data, pos)
        pos += 16
        pair_counts[(i, j)] = c
    cooc = CoocStats(
        vocabulary=vocab,
        window_size=window,
        pair_counts=pair_counts,
        single_counts=single,
        n_positions=n_positions,
    )

    data = (dirpath / "ppmi.bin").read_bytes()
    if data[:4] != _PPMI_MAGIC:
        raise ValueError("ppmi.bin: bad magic")
    (n_entries,) = struct.unpack_from("<Q", data, 4)
    pos = 12
    ppmi: dict = {}
    for _ in range(n_entries):
        i, j, v = struct.unpack_from("<IId", data, pos)
        pos += 16
        ppmi[(i, j)] = v
    return Dataset(corpus=corpus, cooc=cooc, ppmi=ppmi, meta=meta)


def build_dataset(
    raw_docs: Iterable[tuple[str, str]],
    config: PreprocessConfig | None = None,
    min_df: int = 1,
    max_df_ratio: float = 1.0,
    window_size: int = 10,
    ppmi_epsilon: float = DEFAULT_PPMI_EPSILON,
) -> Dataset:
    """Full preprocessing path from raw (id, text) pairs to a Dataset."""
    config = config or PreprocessConfig()
    docs, report = preprocess_documents(raw_docs, config)
    if not docs:
        raise EmptyCorpusError("no documents survived preprocessing")
    vocab = build_vocabulary(docs, min_df=min_df, max_df_ratio=max_df_ratio)
    corpus = vectorize(docs, vocab)
    cooc = compute_cooccurrence(docs, vocab, window_size=window_size)
    ppmi = compute_ppmi(cooc, epsilon=ppmi_epsilon)
    meta = {
        "config": config.echo(),
        "min_df": min_df,
        "max_df_ratio": max_df_ratio,
        "window_size": window_size,
        "ppmi_epsilon": ppmi_epsilon,
        "drop_counts": {
            "empty_after_preprocess": report.dropped_empty,
            "no_vocab_tokens": report.kept_docs - corpus.num_docs,
        },
    }
    return Dataset(corpus=corpus, cooc=cooc, ppmi=ppmi, meta=meta)
