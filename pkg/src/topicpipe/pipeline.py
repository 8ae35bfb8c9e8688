"""Training-strategy representations: the variable-length stage pipeline genome, the
fixed-length baseline genome, validation, random generation, surrogate vectorization
and execution against a corpus.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import artm
from .artm import RegKind, RegularizerSpec, TopicTarget
from .corpus import Dataset

MAX_STAGES_PER_KIND = 10
MAX_STAGES_TOTAL = 3 * MAX_STAGES_PER_KIND
N_ITERS_BOUNDS = (1, 50)

# (a_lo, a_hi, b_lo, b_hi) per regularizer kind. Decorrelation's b is recorded
# and carried through genome and vector but never acts on training.
PARAM_BOUNDS = {
    RegKind.SMOOTHING: (0.0, 10.0, 0.0, 10.0),
    RegKind.SPARSING: (-10.0, 0.0, -10.0, 0.0),
    RegKind.DECORRELATION: (0.0, 1e5, 0.0, 10.0),
}

# Kind each stage targets is forced: smoothing acts on background topics,
# sparsing and decorrelation on specific topics.
KIND_TARGET = {
    RegKind.SMOOTHING: TopicTarget.BACKGROUND,
    RegKind.SPARSING: TopicTarget.SPECIFIC,
    RegKind.DECORRELATION: TopicTarget.SPECIFIC,
}

# Block order of the surrogate vector layout.
KIND_BLOCK_ORDER = (RegKind.SMOOTHING, RegKind.SPARSING, RegKind.DECORRELATION)

SURROGATE_VECTOR_LENGTH = len(KIND_BLOCK_ORDER) * MAX_STAGES_PER_KIND * 3


class EmptyPipelineError(ValueError):
    pass


class PipelineValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Stage:
    """One training cycle: a regularizer kind with strengths (a, b) run for n_iters EM passes."""

    kind: RegKind
    n_iters: int
    a: float
    b: float

    @property
    def target(self) -> TopicTarget:
        return KIND_TARGET[self.kind]

    def spec(self) -> RegularizerSpec:
        if self.kind is RegKind.DECORRELATION:
            return RegularizerSpec(kind=self.kind, target=self.target, a=self.a, b=0.0)
        return RegularizerSpec(kind=self.kind, target=self.target, a=self.a, b=self.b)


@dataclass(frozen=True)
class GraphPipeline:
    stages: tuple[Stage, ...]

    def __len__(self) -> int:
        return len(self.stages)

    def kind_counts(self) -> dict:
        counts = {kind: 0 for kind in RegKind}
        for stage in self.stages:
            counts[stage.kind] += 1
        return counts


def validate(pipeline: GraphPipeline) -> list[str]:
    """Return violation messages (empty list means valid); each names the stage and field."""
    violations = []
    n = len(pipeline.stages)
    if n < 1:
        violations.append("pipeline: empty stage list")
    if n > MAX_STAGES_TOTAL:
        violations.append(f"pipeline: {n} stages exceeds total cap {MAX_STAGES_TOTAL}")
    for idx, stage in enumerate(pipeline.stages):
        lo, hi = N_ITERS_BOUNDS
        if not isinstance(stage.n_iters, int) or stage.n_iters < lo:
            violations.append(f"stage {idx}: n_iters below {lo}")
        elif stage.n_iters > hi:
            violations.append(f"stage {idx}: n_iters above {hi}")
        a_lo, a_hi, b_lo, b_hi = PARAM_BOUNDS[stage.kind]
        if not a_lo <= stage.a <= a_hi:
            violations.append(f"stage {idx}: a outside [{a_lo:g}, {a_hi:g}] for {stage.kind.value}")
        if not b_lo <= stage.b <= b_hi:
            violations.append(f"stage {idx}: b outside [{b_lo:g}, {b_hi:g}] for {stage.kind.value}")
    for kind, count in GraphPipeline(stages=tuple(pipeline.stages)).kind_counts().items():
        if count > MAX_STAGES_PER_KIND:
            violations.append(f"pipeline: {count} {kind.value} stages exceeds per-kind cap {MAX_STAGES_PER_KIND}")
    return violations


def is_valid(pipeline: GraphPipeline) -> bool:
    return not validate(pipeline)


def _random_param(rng: np.random.Generator, lo: float, hi: float, log_scale: bool) -> float:
    if log_scale:
        # decorrelation strength spans decades; sample it log-uniformly
        log_lo = np.log(max(lo, 1e-2))
        return float(np.exp(rng.uniform(log_lo, np.log(hi))))
    return float(rng.uniform(lo, hi))


def random_stage(
    rng: np.random.Generator,
    kind: RegKind | None = None,
    n_iters_range: tuple[int, int] = N_ITERS_BOUNDS,
) -> Stage:
    if kind is None:
        kind = KIND_BLOCK_ORDER[rng.integers(0, len(KIND_BLOCK_ORDER))]
    a_lo, a_hi, b_lo, b_hi = PARAM_BOUNDS[kind]
    log_a = kind is RegKind.DECORRELATION
    return Stage(
        kind=kind,
        n_iters=int(rng.integers(n_iters_range[0], n_iters_range[1] + 1)),
        a=_random_param(rng, a_lo, a_hi, log_a),
        b=_random_param(rng, b_lo, b_hi, False),
    )


def random_pipeline(
    rng: np.random.Generator,
    length_range: tuple[int, int] = (1, 6),
    n_iters_range: tuple[int, int] = N_ITERS_BOUNDS,
) -> GraphPipeline:
    """Uniform length in range, uniform kinds, params uniform (log-uniform for decorrelation a)."""
    lo, hi = length_range
    if not 1 <= lo <= hi <= MAX_STAGES_TOTAL:
        raise ValueError(f"length_range must sit inside [1, {MAX_STAGES_TOTAL}]")
    length = int(rng.integers(lo, hi + 1))
    stages = []
    counts = {kind: 0 for kind in RegKind}
    for _ in range(length):
        stage = random_stage(rng, n_iters_range=n_iters_range)
        # respect the per-kind cap during generation so output is always valid
        while counts[stage.kind] >= MAX_STAGES_PER_KIND:
            stage = random_stage(rng, n_iters_range=n_iters_range)
        counts[stage.kind] += 1
        stages.append(stage)
    return GraphPipeline(stages=tuple(stages))


# ---------------------------------------------------------------------------
# Fixed-length baseline genome
# ---------------------------------------------------------------------------

FIXED_KIND_SEQUENCE = (
    RegKind.SMOOTHING,
    RegKind.DECORRELATION,
    RegKind.DECORRELATION,
    RegKind.SPARSING,
)
FIXED_GENOME_LENGTH = len(FIXED_KIND_SEQUENCE) * 3


@dataclass(frozen=True)
class FixedGenome:
    """12 real slots: 4 stages x (n_iters, a, b) in a fixed kind order.

    A slot triple whose rounded n_iters is 0 contributes no stage.
    """

    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != FIXED_GENOME_LENGTH:
            raise ValueError(f"fixed genome needs {FIXED_GENOME_LENGTH} values")


def fixed_genome_bounds() -> list[tuple[float, float]]:
    """Box bounds per slot, for sampling and Bayesian optimization."""
    bounds = []
    for kind in FIXED_KIND_SEQUENCE:
        a_lo, a_hi, b_lo, b_hi = PARAM_BOUNDS[kind]
        bounds.append((0.0, float(N_ITERS_BOUNDS[1])))
        bounds.append((a_lo, a_hi))
        bounds.append((b_lo, b_hi))
    return bounds


def random_fixed_genome(rng: np.random.Generator, n_iters_range: tuple[int, int] = N_ITERS_BOUNDS) -> FixedGenome:
    values = []
    for kind in FIXED_KIND_SEQUENCE:
        a_lo, a_hi, b_lo, b_hi = PARAM_BOUNDS[kind]
        values.append(float(rng.integers(n_iters_range[0], n_iters_range[1] + 1)))
        values.append(_random_param(rng, a_lo, a_hi, kind is RegKind.DECORRELATION))
        values.append(_random_param(rng, b_lo, b_hi, False))
    return FixedGenome(values=tuple(values))


def fixed_to_pipeline(genome: FixedGenome) -> GraphPipeline:
    """Expand the 12-slot genome into a pipeline; slots with rounded n_iters = 0 are skipped."""
    stages = []
    for pos, kind in enumerate(FIXED_KIND_SEQUENCE):
        n, a, b = genome.values[3 * pos : 3 * pos + 3]
        n_iters = int(round(n))
        if n_iters < 1:
            continue
        stages.append(Stage(kind=kind, n_iters=min(n_iters, N_ITERS_BOUNDS[1]), a=a, b=b))
    if not stages:
        raise EmptyPipelineError("every slot rounded to zero iterations")
    return GraphPipeline(stages=tuple(stages))


# ---------------------------------------------------------------------------
# Surrogate vectorization
# ---------------------------------------------------------------------------


def to_surrogate_vector(pipeline: GraphPipeline) -> np.ndarray:
    """Flatten a pipeline into the fixed 90-slot layout.

    Layout is [smoothing | sparsing | decorrelation] blocks of 10 stage slots,
    each slot holding (n_iters, a, b). Stages of a kind fill that kind's slots
    in pipeline order; unused slots stay zero. Interleaving order across kinds
    is deliberately erased.
    """
    violations = validate(pipeline)
    if violations:
        raise PipelineValidationError(violations)
    vec = np.zeros(SURROGATE_VECTOR_LENGTH)
    next_slot = {kind: 0 for kind in KIND_BLOCK_ORDER}
    block_index = {kind: i for i, kind in enumerate(KIND_BLOCK_ORDER)}
    for stage in pipeline.stages:
        slot = next_slot[stage.kind]
        next_slot[stage.kind] += 1
        base = block_index[stage.kind] * MAX_STAGES_PER_KIND * 3 + slot * 3
        vec[base] = stage.n_iters
        vec[base + 1] = stage.a
        vec[base + 2] = stage.b
    return vec


# ---------------------------------------------------------------------------
# Serialization (also the distributed wire payload)
# ---------------------------------------------------------------------------


def pipeline_to_dict(pipeline: GraphPipeline) -> dict:
    return {
        "stages": [
            {"kind": s.kind.value, "n_iters": s.n_iters, "a": s.a, "b": s.b} for s in pipeline.stages
        ]
    }


def pipeline_from_dict(data: dict) -> GraphPipeline:
    stages = tuple(
        Stage(kind=RegKind(s["kind"]), n_iters=int(s["n_iters"]), a=float(s["a"]), b=float(s["b"]))
        for s in data["stages"]
    )
    return GraphPipeline(stages=stages)


def pipeline_to_json(pipeline: GraphPipeline) -> str:
    return json.dumps(pipeline_to_dict(pipeline), sort_keys=True)


def pipeline_from_json(text: str) -> GraphPipeline:
    return pipeline_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


class StageExecutionError(RuntimeError):
    """Training failed inside one stage; carries the stage index for context."""

    def __init__(self, stage_index: int, stage: Stage, cause: BaseException):
        super().__init__(f"stage {stage_index} ({stage.kind.value}, {stage.n_iters} iters) failed: {cause}")
        self.stage_index = stage_index


@dataclass
class ExecutionResult:
    model: artm.TopicModel
    fitness: float
    elapsed_s: float
    stage_elapsed_s: list[float]
    em_events: artm.MStepEvents


FitnessFn = Callable[[artm.TopicModel, Dataset], float]


def execute(
    pipeline: GraphPipeline,
    dataset: Dataset,
    num_topics: int,
    num_background: int,
    seed: int,
    fitness_fn: FitnessFn,
    background_tau: float = artm.DEFAULT_BACKGROUND_TAU,
) -> ExecutionResult:
    """Initialize a model, run the stages in order, then score it. Deterministic per seed."""
    violations = validate(pipeline)
    if violations:
        raise PipelineValidationError(violations)
    corpus = dataset.corpus
    model = artm.init_model(
        num_words=corpus.vocabulary.size,
        num_topics=num_topics,
        num_background=num_background,
        seed=seed,
        num_docs=corpus.num_docs,
    )
    events = artm.MStepEvents()
    start = time.perf_counter()
    stage_elapsed = []
    for idx, stage in enumerate(pipeline.stages):
        t0 = time.perf_counter()
        try:
            model = artm.train_stage(model, corpus, stage, background_tau=background_tau, events=events)
        except Exception as exc:
            raise StageExecutionError(idx, stage, exc) from exc
        stage_elapsed.append(time.perf_counter() - t0)
    fitness = fitness_fn(model, dataset)
    return ExecutionResult(
        model=model,
        fitness=float(fitness),
        elapsed_s=time.perf_counter() - start,
        stage_elapsed_s=stage_elapsed,
        em_events=events,
    )
