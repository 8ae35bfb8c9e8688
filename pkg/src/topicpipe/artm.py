"""Regularized EM training for topic models.

The E-step computes topic responsibilities for every (document, word) count;
the M-step folds regularizer gradients into the expected counts, truncates at
zero and renormalizes. Word-topic (phi, V x T) and topic-document (theta,
T x D) matrices are column-stochastic throughout. The first ``num_background``
topics absorb corpus-wide common words; the rest are "specific" topics.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .corpus import Corpus, Vocabulary

if TYPE_CHECKING:  # pragma: no cover
    from .pipeline import Stage


class InvalidDimensionsError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class RegKind(str, Enum):
    SMOOTHING = "smoothing"
    SPARSING = "sparsing"
    DECORRELATION = "decorrelation"


class TopicTarget(str, Enum):
    BACKGROUND = "background"
    SPECIFIC = "specific"


@dataclass(frozen=True)
class RegularizerSpec:
    """One additive regularizer: kind, targeted topic block and (a, b) strengths.

    ``a`` acts on phi, ``b`` on theta. Smoothing requires a, b >= 0; sparsing
    a, b <= 0. Decorrelation requires a >= 0 and ignores b (stored but inert).
    """

    kind: RegKind
    target: TopicTarget
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind is RegKind.SMOOTHING and (self.a < 0 or self.b < 0):
            raise ValueError("smoothing strengths must be >= 0")
        if self.kind is RegKind.SPARSING and (self.a > 0 or self.b > 0):
            raise ValueError("sparsing strengths must be <= 0")
        if self.kind is RegKind.DECORRELATION and self.a < 0:
            raise ValueError("decorrelation strength must be >= 0")


@dataclass
class TopicModel:
    """Column-stochastic phi (V x T) and theta (T x D) with topic roles and init seed."""

    phi: np.ndarray
    theta: np.ndarray
    num_background: int
    seed: int

    @property
    def num_words(self) -> int:
        return self.phi.shape[0]

    @property
    def num_topics(self) -> int:
        return self.phi.shape[1]

    @property
    def num_docs(self) -> int:
        return self.theta.shape[1]

    def topic_indices(self, target: TopicTarget) -> np.ndarray:
        if target is TopicTarget.BACKGROUND:
            return np.arange(0, self.num_background)
        return np.arange(self.num_background, self.num_topics)


@dataclass
class EMCounters:
    """Expected word-topic and topic-document counts from one E-step."""

    n_wt: np.ndarray
    n_td: np.ndarray


@dataclass
class MStepEvents:
    """Counts of columns that truncated to all-zero and were reset to uniform."""

    phi_resets: int = 0
    theta_resets: int = 0


def init_model(
    num_words: int,
    num_topics: int,
    num_background: int,
    seed: int,
    num_docs: int,
) -> TopicModel:
    """Draw phi/theta columns from a symmetric Dirichlet; deterministic per seed."""
    if num_words < 2 or num_topics < 1 or not 0 <= num_background < num_topics:
        raise InvalidDimensionsError(
            f"need num_words >= 2, num_topics >= 1, 0 <= num_background < num_topics; "
            f"got V={num_words}, T={num_topics}, B={num_background}"
        )
    if num_docs < 1:
        raise InvalidDimensionsError("num_docs must be >= 1")
    rng = np.random.default_rng(seed)
    phi = np.maximum(rng.gamma(1.0, size=(num_words, num_topics)), 1e-12)
    theta = np.maximum(rng.gamma(1.0, size=(num_topics, num_docs)), 1e-12)
    phi /= phi.sum(axis=0)
    theta /= theta.sum(axis=0)
    return TopicModel(phi=phi, theta=theta, num_background=num_background, seed=seed)


def e_step(model: TopicModel, corpus: Corpus) -> EMCounters:
    """Accumulate expected counts n_wt, n_td from p(t|d,w) responsibilities.

    For a (d, w) whose mixture probability is exactly zero, responsibilities
    fall back to the uniform distribution over topics.
    """
    V, T = model.phi.shape
    D = model.theta.shape[1]
    if V != corpus.vocabulary.size or D != corpus.num_docs:
        raise DimensionMismatchError(
            f"model is {V}x{T}/{D} docs; corpus has {corpus.vocabulary.size} words, {corpus.num_docs} docs"
        )
    idx, rows = corpus.indices, corpus.rows
    weights = corpus.counts.astype(np.float64)
    p = model.phi[idx, :] * model.theta[:, rows].T  # (nnz, T)
    z = p.sum(axis=1)
    dead = z == 0.0
    if dead.any():
        p[dead] = 1.0
        z[dead] = float(T)
    weighted = p * (weights / z)[:, None]
    n_wt = np.empty((V, T))
    n_td = np.empty((T, D))
    for t in range(T):
        n_wt[:, t] = np.bincount(idx, weights=weighted[:, t], minlength=V)
        n_td[t, :] = np.bincount(rows, weights=weighted[:, t], minlength=D)
    return EMCounters(n_wt=n_wt, n_td=n_td)


def regularizer_gradient(spec: RegularizerSpec, model: TopicModel) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the regularizer w.r.t. phi and theta, full-shape, zero off-target.

    Smoothing/sparsing push every targeted cell by the constant strength
    (uniform prior direction). Decorrelation's phi gradient at topic t is
    -a * sum of the other targeted topics' columns; its theta gradient is zero.
    """
    dphi = np.zeros_like(model.phi)
    dtheta = np.zeros_like(model.theta)
    targets = model.topic_indices(spec.target)
    if targets.size == 0:
        return dphi, dtheta
    if spec.kind in (RegKind.SMOOTHING, RegKind.SPARSING):
        dphi[:, targets] = spec.a
        dtheta[targets, :] = spec.b
    else:
        block_sum = model.phi[:, targets].sum(axis=1, keepdims=True)
        dphi[:, targets] = -spec.a * (block_sum - model.phi[:, targets])
    return dphi, dtheta


def _normalize_columns(raw: np.ndarray) -> tuple[np.ndarray, int]:
    sums = raw.sum(axis=0)
    dead = sums == 0.0
    resets = int(dead.sum())
    if resets:
        raw[:, dead] = 1.0
        sums[dead] = float(raw.shape[0])
    return raw / sums, resets


def m_step(
    counters: EMCounters,
    model: TopicModel,
    active_specs: Sequence[RegularizerSpec] = (),
    events: MStepEvents | None = None,
) -> TopicModel:
    """phi <- norm[max(0, n_wt + phi * dR/dphi)], likewise theta.

    Columns that truncate entirely to zero are reset to uniform; resets are
    counted in ``events`` when given, so aggressive sparsing degrades loudly
    instead of producing NaNs.
    """
    dphi_total = np.zeros_like(model.phi)
    dtheta_total = np.zeros_like(model.theta)
    for spec in active_specs:
        dphi, dtheta = regularizer_gradient(spec, model)
        dphi_total += dphi
        dtheta_total += dtheta
    phi_raw = np.maximum(0.0, counters.n_wt + model.phi * dphi_total)
    theta_raw = np.maximum(0.0, counters.n_td + model.theta * dtheta_total)
    phi, phi_resets = _normalize_columns(phi_raw)
    theta, theta_resets = _normalize_columns(theta_raw)
    if events is not None:
        events.phi_resets += phi_resets
        events.theta_resets += theta_resets
    return TopicModel(phi=phi, theta=theta, num_background=model.num_background, seed=model.seed)


DEFAULT_BACKGROUND_TAU = 0.01


def train_stage(
    model: TopicModel,
    corpus: Corpus,
    stage: "Stage",
    background_tau: float = DEFAULT_BACKGROUND_TAU,
    events: MStepEvents | None = None,
    callback: Callable[[TopicModel, int], None] | None = None,
) -> TopicModel:
    """Run ``stage.n_iters`` full (E, M) passes with the stage's regularizer active.

    A weak background smoothing floor (``background_tau``) stays active in every
    stage so background topics keep absorbing common words; pass 0 to disable.
    """
    specs = [stage.spec()]
    if background_tau > 0 and model.num_background > 0:
        specs.append(
            RegularizerSpec(
                kind=RegKind.SMOOTHING,
                target=TopicTarget.BACKGROUND,
                a=background_tau,
                b=background_tau,
            )
        )
    for i in range(stage.n_iters):
        counters = e_step(model, corpus)
        model = m_step(counters, model, specs, events=events)
        if callback is not None:
            callback(model, i)
    return model


def log_likelihood(model: TopicModel, corpus: Corpus) -> float:
    """Sum over counts of n_dw * ln p(w|d); ln(0) guarded by a 1e-300 floor."""
    p = (model.phi[corpus.indices, :] * model.theta[:, corpus.rows].T).sum(axis=1)
    return float(corpus.counts @ np.log(np.maximum(p, 1e-300)))


def sparsity(matrix: np.ndarray) -> float:
    """Fraction of exactly-zero entries."""
    return float(np.count_nonzero(matrix == 0.0)) / matrix.size


def top_token_indices(model: TopicModel, topic: int, k: int) -> np.ndarray:
    """Indices of the k highest-phi tokens for a topic; ties break toward lower index."""
    col = model.phi[:, topic]
    order = np.lexsort((np.arange(col.size), -col))
    return order[: min(k, col.size)]


def top_tokens(model: TopicModel, vocabulary: Vocabulary, topic: int, k: int) -> list[str]:
    return [vocabulary.tokens[i] for i in top_token_indices(model, topic, k)]


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"TPM1"


def save_model(path: str | Path, model: TopicModel) -> None:
    """Little-endian binary: magic, V, T, B, D (u32 each), seed (i64), phi then theta row-major f64."""
    V, T = model.phi.shape
    D = model.theta.shape[1]
    with Path(path).open("wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<IIIIq", V, T, model.num_background, D, model.seed))
        fh.write(np.ascontiguousarray(model.phi, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.theta, dtype="<f8").tobytes())


def load_model(path: str | Path) -> TopicModel:
    data = Path(path).read_bytes()
    if data[:4] != _MODEL_MAGIC:
        raise ValueError("not a topic model file")
    V, T, B, D, seed = struct.unpack_from("<IIIIq", data, 4)
    offset = 4 + struct.calcsize("<IIIIq")
    phi = np.frombuffer(data, dtype="<f8", count=V * T, offset=offset).reshape(V, T).copy()
    offset += 8 * V * T
    theta = np.frombuffer(data, dtype="<f8", count=T * D, offset=offset).reshape(T, D).copy()
    return TopicModel(phi=phi, theta=theta, num_background=B, seed=seed)


def export_top_words(model: TopicModel, vocabulary: Vocabulary, k: int) -> str:
    """Text export, one ``topic<TAB>token<TAB>phi`` line per top token."""
    lines = []
    for t in range(model.num_topics):
        for i in top_token_indices(model, t, k):
            lines.append(f"{t}\t{vocabulary.tokens[i]}\t{model.phi[i, t]:.10g}")
    return "\n".join(lines) + "\n"
