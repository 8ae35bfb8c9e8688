"""Surrogate fitness models: predict pipeline fitness from the 90-slot vectorization so a
fraction of expensive training runs can be skipped.

Both regressors are implemented natively (no ML dependency) and are
deterministic under a fixed seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .pipeline import SURROGATE_VECTOR_LENGTH, to_surrogate_vector

if TYPE_CHECKING:  # pragma: no cover
    from .evaluation import Evaluator
    from .evolution import Individual

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


class SurrogateDataset:
    """Append-only (vector, fitness) pairs; only true-evaluated fitness may enter."""

    def __init__(self):
        self._vectors: list[np.ndarray] = []
        self._fitness: list[float] = []

    def __len__(self) -> int:
        return len(self._fitness)

    def append(self, vector: np.ndarray, fitness: float) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (SURROGATE_VECTOR_LENGTH,):
            raise ValueError(f"vector must have length {SURROGATE_VECTOR_LENGTH}")
        self._vectors.append(vector)
        self._fitness.append(float(fitness))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._vectors), np.array(self._fitness)

    def dump_csv(self, path: str | Path) -> None:
        header = ",".join([f"f{i}" for i in range(SURROGATE_VECTOR_LENGTH)] + ["fitness"])
        lines = [header]
        for vec, fit in zip(self._vectors, self._fitness):
            lines.append(",".join(f"{v:.10g}" for v in vec) + f",{fit:.10g}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 100
    max_depth: int | None = 12
    min_leaf: int = 2
    feature_fraction: float = 1 / 3
    bootstrap: bool = True


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value: float):
        self.feature = -1
        self.threshold = 0.0
        self.left: _TreeNode | None = None
        self.right: _TreeNode | None = None
        self.value = value


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float] | None:
    """Best (sse, threshold) for one feature via prefix sums over sorted values."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(ys)
    c1 = np.cumsum(ys)
    c2 = np.cumsum(ys * ys)
    best: tuple[float, float] | None = None
    for p in range(min_leaf, n - min_leaf + 1):
        if xs[p - 1] == xs[p]:
            continue
        sse_left = c2[p - 1] - c1[p - 1] ** 2 / p
        nr = n - p
        sse_right = (c2[-1] - c2[p - 1]) - (c1[-1] - c1[p - 1]) ** 2 / nr
        sse = sse_left + sse_right
        if best is None or sse < best[0]:
            best = (float(sse), float((xs[p - 1] + xs[p]) / 2.0))
    return best


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator,
    params: RFParams,
    depth: int,
) -> _TreeNode:
    node = _TreeNode(value=float(y.mean()))
    n = len(y)
    if n < 2 * params.min_leaf:
        return node
    if params.max_depth is not None and depth >= params.max_depth:
        return node
    if np.all(y == y[0]):
        return node
    n_features = X.shape[1]
    k = max(1, int(round(params.feature_fraction * n_features)))
    candidates = rng.choice(n_features, size=min(k, n_features), replace=False)
    parent_sse = float(((y - y.mean()) ** 2).sum())
    best_feature = -1
    best_sse = parent_sse
    best_threshold = 0.0
    for f in sorted(candidates):
        found = _best_split(X[:, f], y, params.min_leaf)
        if found is not None and found[0] < best_sse:
            best_sse, best_threshold = found
            best_feature = f
    if best_feature < 0:
        return node
    mask = X[:, best_feature] <= best_threshold
    node.feature = best_feature
    node.threshold = best_threshold
    node.left = _build_tree(X[mask], y[mask], rng, params, depth + 1)
    node.right = _build_tree(X[~mask], y[~mask], rng, params, depth + 1)
    return node


def _tree_predict(node: _TreeNode, x: np.ndarray) -> float:
    while node.feature >= 0:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


class RandomForestSurrogate:
    """Bagged variance-reduction regression trees; uncertainty is the across-tree std."""

    def __init__(self, params: RFParams | None = None, seed: int = 0):
        self.params = params or RFParams()
        self.seed = seed
        self._trees: list[_TreeNode] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForestSurrogate":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        self._trees = []
        for _ in range(self.params.n_trees):
            if self.params.bootstrap:
                rows = rng.integers(0, len(y), size=len(y))
            else:
                rows = np.arange(len(y))
            self._trees.append(_build_tree(X[rows], y[rows], rng, self.params, depth=0))
        return self

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        preds = np.array([[_tree_predict(t, x) for t in self._trees] for x in X])
        return preds.mean(axis=1), preds.std(axis=1)


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPParams:
    # None means "fit by log-marginal-likelihood grid search"
    length_scale: float | None = None
    noise: float | None = None
    length_scale_factors: tuple[float, ...] = (0.1, 0.316, 1.0, 3.16, 10.0)
    noise_grid: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
    jitter: float = 1e-10


class GaussianProcessSurrogate:
    """Zero-mean GP with a squared-exponential kernel over standardized inputs/outputs."""

    def __init__(self, params: GPParams | None = None, seed: int = 0):
        self.params = params or GPParams()
        self.seed = seed
        self.length_scale_: float | None = None
        self.noise_: float | None = None

    def _kernel(self, A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * length_scale**2))

    def _standardize(self, X: np.ndarray, y: np.ndarray) -> None:
        self._x_mean = X.mean(axis=0)
        self._x_std = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        self._y_mean = float(y.mean())
        y_std = float(y.std())
        self._y_std = y_std if y_std > 0 else 1.0

    def _lml(self, K: np.ndarray, y: np.ndarray) -> float:
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return -np.inf
        alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
        return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(y) * np.log(2 * np.pi))

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GaussianProcessSurrogate":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        self._standardize(X, y)
        Xs = (X - self._x_mean) / self._x_std
        ys = (y - self._y_mean) / self._y_std
        dim_scale = math.sqrt(X.shape[1])
        ls_grid = (
            [self.params.length_scale]
            if self.params.length_scale is not None
            else [f * dim_scale for f in self.params.length_scale_factors]
        )
        noise_grid = [self.params.noise] if self.params.noise is not None else list(self.params.noise_grid)
        best = (-np.inf, ls_grid[0], noise_grid[0])
        eye = np.eye(len(ys))
        for ls in ls_grid:
            K_base = self._kernel(Xs, Xs, ls)
            for noise in noise_grid:
                lml = self._lml(K_base + (noise**2 + self.params.jitter) * eye, ys)
                if lml > best[0]:
                    best = (lml, ls, noise)
        _, self.length_scale_, self.noise_ = best
        K = self._kernel(Xs, Xs, self.length_scale_) + (self.noise_**2 + self.params.jitter) * eye
        self._L = np.linalg.cholesky(K)
        self._alpha = np.linalg.solve(self._L.T, np.linalg.solve(self._L, ys))
        self._Xs = Xs
        return self

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Xs = (X - self._x_mean) / self._x_std
        k_star = self._kernel(Xs, self._Xs, self.length_scale_)
        mean = k_star @ self._alpha
        v = np.linalg.solve(self._L, k_star.T)
        var = np.maximum(1.0 - (v**2).sum(axis=0), 0.0)
        return mean * self._y_std + self._y_mean, np.sqrt(var) * self._y_std


# ---------------------------------------------------------------------------
# Config, fitting and the generation-evaluation strategy
# ---------------------------------------------------------------------------

SURROGATE_KINDS = ("random_forest", "gaussian_process")


@dataclass(frozen=True)
class SurrogateConfig:
    kind: str = "random_forest"
    warmup_true_evals: int = 10
    promote_fraction: float = 0.3
    retrain_every: int = 1
    seed: int = 0
    rf: RFParams = field(default_factory=RFParams)
    gp: GPParams = field(default_factory=GPParams)

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"surrogate kind must be one of {SURROGATE_KINDS}")
        if not 0 < self.promote_fraction <= 1:
            raise ValueError("promote_fraction must be in (0, 1]")
        if self.warmup_true_evals < 10:
            raise ValueError("warmup_true_evals must be >= 10")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")


def make_model(config: SurrogateConfig):
    if config.kind == "random_forest":
        return RandomForestSurrogate(params=config.rf, seed=config.seed)
    return GaussianProcessSurrogate(params=config.gp, seed=config.seed)


def fit(dataset: SurrogateDataset, config: SurrogateConfig):
    """Train a surrogate on the accumulated (vector, fitness) rows."""
    if len(dataset) < config.warmup_true_evals:
        raise InsufficientDataError(
            f"{len(dataset)} rows < warmup requirement {config.warmup_true_evals}"
        )
    X, y = dataset.arrays()
    return make_model(config).fit(X, y)


def predict(model, vector: np.ndarray) -> tuple[float, float]:
    """(mean fitness, uncertainty) for one vectorized pipeline."""
    mean, std = model.predict(np.atleast_2d(vector))
    return float(mean[0]), float(std[0])


@dataclass
class SurrogateState:
    """Mutable bookkeeping carried across GA generations."""

    config: SurrogateConfig
    dataset: SurrogateDataset = field(default_factory=SurrogateDataset)
    model: object | None = None
    generation: int = 0
    last_fit_generation: int = -1


@dataclass
class GenerationEvalStats:
    # true_evals counts attempted training runs (= execute calls), including failures;
    # surrogate_evals counts individuals whose assigned fitness is a prediction.
    true_evals: int = 0
    surrogate_evals: int = 0
    failed_evals: int = 0


def surrogate_evaluate_generation(
    individuals: Sequence["Individual"],
    state: SurrogateState,
    evaluator: "Evaluator",
    max_true: int | None = None,
) -> GenerationEvalStats:
    """Assign fitness to every unevaluated individual.

    During warmup everything is truly evaluated. Afterwards all candidates are
    predicted and only the top ceil(q*N) by predicted mean (ties broken toward
    lower uncertainty) are verified with real training runs; the rest keep
    their predictions. True results are appended to the dataset and the model
    is refit every ``retrain_every`` generations.
    """
    from .evaluation import EvalRequest

    stats = GenerationEvalStats()
    config = state.config
    pending = [ind for ind in individuals if ind.fitness is None]
    predictions: dict[int, tuple[float, float]] = {}
    if len(state.dataset) < config.warmup_true_evals or state.model is None:
        chosen = list(range(len(pending)))
        rest: list[int] = []
    else:
        vectors = np.array([to_surrogate_vector(ind.as_pipeline()) for ind in pending])
        mean, std = state.model.predict(vectors)
        predictions = {i: (float(mean[i]), float(std[i])) for i in range(len(pending))}
        promote = math.ceil(config.promote_fraction * len(pending))
        order = np.lexsort((np.arange(len(pending)), std, -mean))
        chosen = [int(i) for i in order[:promote]]
        rest = [int(i) for i in order[promote:]]
    if max_true is not None and len(chosen) > max_true:
        overflow = chosen[max_true:]
        chosen = chosen[:max_true]
        rest = overflow + rest
    requests = [EvalRequest(pipeline=pending[i].as_pipeline(), seed=pending[i].eval_seed) for i in chosen]
    outcomes = evaluator.evaluate_batch(requests)
    stats.true_evals = len(requests)
    for i, outcome in zip(chosen, outcomes):
        ind = pending[i]
        if outcome.error is None:
            ind.fitness = outcome.fitness
            ind.fitness_source = "true_eval"
            state.dataset.append(to_surrogate_vector(ind.as_pipeline()), outcome.fitness)
        else:
            stats.failed_evals += 1
            ind.error = outcome.error
            if i in predictions:
                log.warning("true evaluation failed (%s); falling back to prediction", outcome.error)
                ind.fitness, _ = predictions[i]
                ind.fitness_source = "surrogate_pred"
                stats.surrogate_evals += 1
            else:
                log.warning("true evaluation failed (%s); assigning -inf", outcome.error)
                ind.fitness = -math.inf
                ind.fitness_source = "true_eval"
    for i in rest:
        ind = pending[i]
        ind.fitness = predictions[i][0]
        ind.fitness_source = "surrogate_pred"
        stats.surrogate_evals += 1
    state.generation += 1
    if len(state.dataset) >= config.warmup_true_evals and (
        state.model is None or state.generation - state.last_fit_generation >= config.retrain_every
    ):
        state.model = fit(state.dataset, config)
        state.last_fit_generation = state.generation
    return stats
