"""Search over training strategies: a genetic algorithm with stage-level mutations and
head/tail crossover for variable-length pipelines, the same GA over the fixed-length
baseline genome, and Bayesian optimization (fixed-length only).
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import surrogate as surrogate_mod
from .corpus import Dataset
from .evaluation import EvalOutcome, EvalRequest, Evaluator, LocalEvaluator
from .metrics import DEFAULT_METRIC
from .pipeline import (
    FIXED_GENOME_LENGTH,
    FIXED_KIND_SEQUENCE,
    MAX_STAGES_PER_KIND,
    MAX_STAGES_TOTAL,
    N_ITERS_BOUNDS,
    PARAM_BOUNDS,
    EmptyPipelineError,
    FixedGenome,
    GraphPipeline,
    RegKind,
    Stage,
    fixed_genome_bounds,
    fixed_to_pipeline,
    random_fixed_genome,
    random_pipeline,
    random_stage,
)
from .surrogate import GPParams, GaussianProcessSurrogate, SurrogateConfig, SurrogateState

log = logging.getLogger(__name__)

GRAPH = "graph"
FIXED = "fixed"
REPRESENTATIONS = (GRAPH, FIXED)

TRUE_EVAL = "true_eval"
SURROGATE_PRED = "surrogate_pred"


class RepresentationUnsupportedError(ValueError):
    pass


@dataclass
class Individual:
    """A genome paired with its evaluated (or predicted) fitness and provenance."""

    genome: GraphPipeline | FixedGenome
    fitness: float | None = None
    fitness_source: str | None = None
    eval_seed: int | None = None
    error: str | None = None

    def as_pipeline(self) -> GraphPipeline:
        if isinstance(self.genome, FixedGenome):
            return fixed_to_pipeline(self.genome)
        return self.genome


def eval_seed_for(run_seed: int, generation: int, index: int) -> int:
    """Schedule-independent per-individual seed, stable across processes and runs."""
    digest = hashlib.blake2b(
        struct.pack("<qqq", run_seed, generation, index), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % (2**31)


# ---------------------------------------------------------------------------
# Graph-pipeline operators
# ---------------------------------------------------------------------------


@dataclass
class OperatorStats:
    identity_events: int = 0
    repair_events: int = 0


def mutate_add_stage(
    pipeline: GraphPipeline,
    rng: np.random.Generator,
    n_iters_range: tuple[int, int] = N_ITERS_BOUNDS,
    stats: OperatorStats | None = None,
) -> GraphPipeline:
    """Insert one random valid stage at a uniform position; identity when the caps block it."""
    counts = pipeline.kind_counts()
    allowed = [k for k in RegKind if counts[k] < MAX_STAGES_PER_KIND]
    if len(pipeline) >= MAX_STAGES_TOTAL or not allowed:
        if stats:
            stats.identity_events += 1
        return pipeline
    kind = allowed[int(rng.integers(0, len(allowed)))]
    stage = random_stage(rng, kind=kind, n_iters_range=n_iters_range)
    pos = int(rng.integers(0, len(pipeline) + 1))
    stages = pipeline.stages[:pos] + (stage,) + pipeline.stages[pos:]
    return GraphPipeline(stages=stages)


def mutate_remove_stage(
    pipeline: GraphPipeline,
    rng: np.random.Generator,
    stats: OperatorStats | None = None,
) -> GraphPipeline:
    """Delete a uniformly chosen stage; identity on single-stage pipelines."""
    if len(pipeline) < 2:
        if stats:
            stats.identity_events += 1
        return pipeline
    pos = int(rng.integers(0, len(pipeline)))
    return GraphPipeline(stages=pipeline.stages[:pos] + pipeline.stages[pos + 1 :])


def mutate_swap_stages(
    pipeline: GraphPipeline,
    rng: np.random.Generator,
    stats: OperatorStats | None = None,
) -> GraphPipeline:
    """Swap two distinct uniformly chosen stages; the stage multiset is preserved."""
    if len(pipeline) < 2:
        if stats:
            stats.identity_events += 1
        return pipeline
    i, j = rng.choice(len(pipeline), size=2, replace=False)
    stages = list(pipeline.stages)
    stages[i], stages[j] = stages[j], stages[i]
    return GraphPipeline(stages=tuple(stages))


def _clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def mutate_stage_params(
    pipeline: GraphPipeline,
    rng: np.random.Generator,
    sigma: float = 0.1,
    stats: OperatorStats | None = None,
) -> GraphPipeline:
    """Gaussian-perturb (n_iters, a, b) of one uniform stage, clamped to its kind bounds.

    ``sigma`` scales relative to each parameter's bound width; the kind never changes.
    """
    pos = int(rng.integers(0, len(pipeline)))
    stage = pipeline.stages[pos]
    a_lo, a_hi, b_lo, b_hi = PARAM_BOUNDS[stage.kind]
    n_lo, n_hi = N_ITERS_BOUNDS
    noise = rng.normal(size=3)
    n_iters = int(round(stage.n_iters + noise[0] * sigma * (n_hi - n_lo)))
    new = Stage(
        kind=stage.kind,
        n_iters=int(_clamp(n_iters, n_lo, n_hi)),
        a=_clamp(stage.a + noise[1] * sigma * (a_hi - a_lo), a_lo, a_hi),
        b=_clamp(stage.b + noise[2] * sigma * (b_hi - b_lo), b_lo, b_hi),
    )
    if new == stage and stats:
        stats.identity_events += 1
    stages = list(pipeline.stages)
    stages[pos] = new
    return GraphPipeline(stages=tuple(stages))


def _repair_caps(stages: tuple[Stage, ...], stats: OperatorStats | None) -> tuple[Stage, ...]:
    counts: dict = {kind: 0 for kind in RegKind}
    for s in stages:
        counts[s.kind] += 1
    if all(c <= MAX_STAGES_PER_KIND for c in counts.values()):
        return stages
    kept = []
    for s in reversed(stages):
        if counts[s.kind] > MAX_STAGES_PER_KIND:
            counts[s.kind] -= 1  # drop trailing stages of the over-cap kind
            continue
        kept.append(s)
    if stats:
        stats.repair_events += 1
    return tuple(reversed(kept))


def crossover(
    p1: GraphPipeline,
    p2: GraphPipeline,
    rng: np.random.Generator,
    stats: OperatorStats | None = None,
) -> tuple[GraphPipeline, GraphPipeline]:
    """Head/tail crossover: cut each parent at a uniform point and swap the tails.

    Children breaching the per-kind cap are repaired by truncating trailing
    stages of the over-cap kind; a child that comes out empty is replaced by
    its head-side parent (both events are flagged in ``stats``).
    """
    x1 = int(rng.integers(0, len(p1) + 1))
    x2 = int(rng.integers(0, len(p2) + 1))
    c1_stages = p1.stages[:x1] + p2.stages[x2:]
    c2_stages = p2.stages[:x2] + p1.stages[x1:]
    if not c1_stages and not c2_stages:
        if stats:
            stats.identity_events += 1
        return p1, p2
    if not c1_stages:
        if stats:
            stats.identity_events += 1
        child1 = p1
    else:
        child1 = GraphPipeline(stages=_repair_caps(c1_stages, stats))
    if not c2_stages:
        if stats:
            stats.identity_events += 1
        child2 = p2
    else:
        child2 = GraphPipeline(stages=_repair_caps(c2_stages, stats))
    return child1, child2


# ---------------------------------------------------------------------------
# Fixed-genome operators
# ---------------------------------------------------------------------------


def crossover_fixed(
    g1: FixedGenome, g2: FixedGenome, rng: np.random.Generator
) -> tuple[FixedGenome, FixedGenome]:
    point = int(rng.integers(1, FIXED_GENOME_LENGTH))
    c1 = g1.values[:point] + g2.values[point:]
    c2 = g2.values[:point] + g1.values[point:]
    return FixedGenome(values=c1), FixedGenome(values=c2)


def mutate_fixed_params(genome: FixedGenome, rng: np.random.Generator, sigma: float = 0.1) -> FixedGenome:
    """Perturb one stage position's (n_iters, a, b) slots, clamped to the genome box."""
    pos = int(rng.integers(0, len(FIXED_KIND_SEQUENCE)))
    bounds = fixed_genome_bounds()
    noise = rng.normal(size=3)
    values = list(genome.values)
    for k in range(3):
        slot = 3 * pos + k
        lo, hi = bounds[slot]
        values[slot] = _clamp(values[slot] + noise[k] * sigma * (hi - lo), lo, hi)
    return FixedGenome(values=tuple(values))


# ---------------------------------------------------------------------------
# Genetic algorithm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MutationProbs:
    add: float = 0.2
    remove: float = 0.2
    swap: float = 0.2
    params: float = 0.7


@dataclass
class GAConfig:
    population_size: int = 10
    generations: int = 25
    crossover_prob: float = 0.9
    mutation: MutationProbs = field(default_factory=MutationProbs)
    params_sigma: float = 0.1
    tournament_size: int = 3
    elitism: int = 1
    early_stop_patience: int = 5
    early_stop_min_delta: float = 1e-4
    seed: int = 0
    init_length_range: tuple[int, int] = (1, 6)
    n_iters_range: tuple[int, int] = N_ITERS_BOUNDS
    max_true_evals: int | None = None
    num_topics: int = 10
    num_background: int = 2
    metric: str = DEFAULT_METRIC
    background_tau: float = 0.01
    surrogate: SurrogateConfig | None = None

    def validate(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        for name in ("crossover_prob",):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("add", "remove", "swap", "params"):
            if not 0 <= getattr(self.mutation, name) <= 1:
                raise ValueError(f"mutation.{name} must be in [0, 1]")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if self.surrogate is not None:
            floor = max(10, self.population_size)
            if self.surrogate.warmup_true_evals < floor:
                raise ValueError(f"surrogate warmup_true_evals must be >= {floor}")


@dataclass
class GenerationRecord:
    generation: int
    best: float
    mean: float
    true_evals: int
    surrogate_evals: int
    elapsed_s: float


def _initial_population(config: GAConfig, representation: str, rng: np.random.Generator) -> list[Individual]:
    population = []
    for _ in range(config.population_size):
        if representation == GRAPH:
            genome: GraphPipeline | FixedGenome = random_pipeline(
                rng, length_range=config.init_length_range, n_iters_range=config.n_iters_range
            )
        else:
            genome = random_fixed_genome(rng, n_iters_range=config.n_iters_range)
        population.append(Individual(genome=genome))
    return population


def _tournament(pool: list[Individual], rng: np.random.Generator, size: int) -> Individual:
    picks = rng.integers(0, len(pool), size=size)
    best = pool[picks[0]]
    for i in picks[1:]:
        if pool[i].fitness > best.fitness:
            best = pool[i]
    return best


def _mutate_genome(
    genome: GraphPipeline | FixedGenome,
    config: GAConfig,
    rng: np.random.Generator,
    stats: OperatorStats,
) -> GraphPipeline | FixedGenome:
    probs = config.mutation
    if isinstance(genome, FixedGenome):
        if rng.random() < probs.params:
            genome = mutate_fixed_params(genome, rng, sigma=config.params_sigma)
        return genome
    if rng.random() < probs.add:
        genome = mutate_add_stage(genome, rng, n_iters_range=config.n_iters_range, stats=stats)
    if rng.random() < probs.remove:
        genome = mutate_remove_stage(genome, rng, stats=stats)
    if rng.random() < probs.swap:
        genome = mutate_swap_stages(genome, rng, stats=stats)
    if rng.random() < probs.params:
        genome = mutate_stage_params(genome, rng, sigma=config.params_sigma, stats=stats)
    return genome


def _breed(
    evaluated: list[Individual],
    config: GAConfig,
    representation: str,
    rng: np.random.Generator,
    stats: OperatorStats,
) -> list[Individual]:
    ranked = sorted(
        range(len(evaluated)), key=lambda i: (-evaluated[i].fitness, i)
    )
    next_pop: list[Individual] = []
    # elites must be true-evaluated so the best verified strategy is never lost
    for i in ranked:
        if len(next_pop) >= config.elitism:
            break
        if evaluated[i].fitness_source == TRUE_EVAL and math.isfinite(evaluated[i].fitness):
            next_pop.append(evaluated[i])
    while len(next_pop) < config.population_size:
        parent1 = _tournament(evaluated, rng, config.tournament_size)
        parent2 = _tournament(evaluated, rng, config.tournament_size)
        if rng.random() < config.crossover_prob:
            if representation == GRAPH:
                child1, child2 = crossover(parent1.genome, parent2.genome, rng, stats=stats)
            else:
                child1, child2 = crossover_fixed(parent1.genome, parent2.genome, rng)
        else:
            child1, child2 = parent1.genome, parent2.genome
        for genome in (child1, child2):
            if len(next_pop) >= config.population_size:
                break
            next_pop.append(Individual(genome=_mutate_genome(genome, config, rng, stats)))
    return next_pop


def _plain_evaluate(
    pending: list[Individual], evaluator: Evaluator
) -> surrogate_mod.GenerationEvalStats:
    stats = surrogate_mod.GenerationEvalStats()
    requests = [EvalRequest(pipeline=ind.as_pipeline(), seed=ind.eval_seed) for ind in pending]
    outcomes = evaluator.evaluate_batch(requests)
    stats.true_evals = len(requests)
    for ind, outcome in zip(pending, outcomes):
        if outcome.error is None:
            ind.fitness = outcome.fitness
            ind.fitness_source = TRUE_EVAL
        else:
            log.warning("evaluation failed (%s); assigning -inf", outcome.error)
            ind.fitness = -math.inf
            ind.fitness_source = TRUE_EVAL
            ind.error = outcome.error
            stats.failed_evals += 1
    return stats


def run_ga(
    dataset: Dataset | None,
    config: GAConfig,
    representation: str = GRAPH,
    evaluator: Evaluator | None = None,
    surrogate_state: SurrogateState | None = None,
) -> tuple[Individual, list[GenerationRecord]]:
    """Generational GA with tournament selection, elitism and optional surrogate assistance.

    Returns the best true-evaluated individual and the per-generation history.
    Deterministic for a fixed config seed; evaluation seeds are schedule
    independent, so parallel backends reproduce the same fitness values.
    Pass a caller-owned ``surrogate_state`` to inspect or dump the accumulated
    training data afterwards.
    """
    config.validate()
    if representation not in REPRESENTATIONS:
        raise RepresentationUnsupportedError(f"representation must be one of {REPRESENTATIONS}")
    if evaluator is None:
        if dataset is None:
            raise ValueError("either a dataset or an evaluator is required")
        evaluator = LocalEvaluator(
            dataset,
            num_topics=config.num_topics,
            num_background=config.num_background,
            metric=config.metric,
            background_tau=config.background_tau,
        )
    rng = np.random.default_rng(config.seed)
    op_stats = OperatorStats()
    if surrogate_state is None and config.surrogate is not None:
        surrogate_state = SurrogateState(config=config.surrogate)
    if surrogate_state is not None and config.surrogate is None:
        raise ValueError("surrogate_state given but config.surrogate is unset")
    population = _initial_population(config, representation, rng)
    history: list[GenerationRecord] = []
    best_ever: Individual | None = None
    true_total = 0
    last_improvement_gen = 0
    best_at_improvement = -math.inf

    for gen in range(config.generations + 1):
        start = time.perf_counter()
        for i, ind in enumerate(population):
            if ind.fitness is None:
                ind.eval_seed = eval_seed_for(config.seed, gen, i)
                if isinstance(ind.genome, FixedGenome):
                    try:
                        ind.as_pipeline()
                    except EmptyPipelineError:
                        ind.fitness = -math.inf
                        ind.fitness_source = TRUE_EVAL
                        ind.error = "empty pipeline"
        pending = [ind for ind in population if ind.fitness is None]
        allowed = None
        if config.max_true_evals is not None:
            allowed = config.max_true_evals - true_total
            if allowed <= 0:
                break
        if surrogate_state is not None:
            stats = surrogate_mod.surrogate_evaluate_generation(
                pending, surrogate_state, evaluator, max_true=allowed
            )
        else:
            if allowed is not None:
                pending = pending[:allowed]
            stats = _plain_evaluate(pending, evaluator)
        true_total += stats.true_evals
        evaluated = [ind for ind in population if ind.fitness is not None]
        finite = [ind.fitness for ind in evaluated if math.isfinite(ind.fitness)]
        true_finite = [
            ind
            for ind in evaluated
            if ind.fitness_source == TRUE_EVAL and math.isfinite(ind.fitness)
        ]
        for ind in true_finite:
            if best_ever is None or ind.fitness > best_ever.fitness:
                best_ever = ind
        gen_best = max((ind.fitness for ind in true_finite), default=-math.inf)
        history.append(
            GenerationRecord(
                generation=gen,
                best=gen_best,
                mean=float(np.mean(finite)) if finite else -math.inf,
                true_evals=stats.true_evals,
                surrogate_evals=stats.surrogate_evals,
                elapsed_s=time.perf_counter() - start,
            )
        )
        if best_ever is not None and best_ever.fitness > best_at_improvement + config.early_stop_min_delta:
            best_at_improvement = best_ever.fitness
            last_improvement_gen = gen
        elif gen - last_improvement_gen >= config.early_stop_patience:
            log.info("early stop at generation %d (no improvement for %d generations)", gen, config.early_stop_patience)
            break
        if gen == config.generations:
            break
        if config.max_true_evals is not None and true_total >= config.max_true_evals:
            break
        population = _breed(evaluated, config, representation, rng, op_stats)

    if best_ever is None:
        raise RuntimeError("no successful evaluation; every individual failed")
    return best_ever, history


def run_random_search(
    dataset: Dataset | None,
    config: GAConfig,
    representation: str = GRAPH,
    evaluator: Evaluator | None = None,
) -> tuple[Individual, list[GenerationRecord]]:
    """Budget-matched random-search baseline: draw and evaluate max_true_evals genomes."""
    if config.max_true_evals is None:
        raise ValueError("random search needs max_true_evals")
    budget_config = replace(config, generations=0, population_size=config.max_true_evals, surrogate=None)
    return run_ga(dataset, budget_config, representation=representation, evaluator=evaluator)


# ---------------------------------------------------------------------------
# Bayesian optimization (fixed-size genome only)
# ---------------------------------------------------------------------------


@dataclass
class BOConfig:
    budget: int = 50
    n_init: int = 10
    candidates: int = 1024
    local_candidates: int = 256
    xi: float = 0.01
    seed: int = 0
    num_topics: int = 10
    num_background: int = 2
    metric: str = DEFAULT_METRIC
    background_tau: float = 0.01
    gp: GPParams = field(default_factory=GPParams)

    def validate(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.n_init < 1:
            raise ValueError("n_init must be >= 1")


_ERF = np.vectorize(math.erf)


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + _ERF(z / math.sqrt(2.0)))


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z**2) / math.sqrt(2.0 * math.pi)


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float, xi: float) -> np.ndarray:
    improve = mean - best - xi
    ei = np.zeros_like(mean)
    positive = std > 0
    z = improve[positive] / std[positive]
    ei[positive] = improve[positive] * _norm_cdf(z) + std[positive] * _norm_pdf(z)
    ei[~positive] = np.maximum(improve[~positive], 0.0)
    return ei


def latin_hypercube(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Space-filling sample of the unit cube: one point per stratum per dimension."""
    sample = np.empty((n, dim))
    for d in range(dim):
        sample[:, d] = (rng.permutation(n) + rng.random(n)) / n
    return sample


def _unit_to_genome(u: np.ndarray) -> FixedGenome:
    bounds = fixed_genome_bounds()
    values = []
    for slot, (lo, hi) in enumerate(bounds):
        kind = FIXED_KIND_SEQUENCE[slot // 3]
        if slot % 3 == 1 and kind is RegKind.DECORRELATION:
            # log-warp the decorrelation strength: it spans decades
            values.append(float(np.expm1(u[slot] * np.log1p(hi))))
        else:
            values.append(float(lo + u[slot] * (hi - lo)))
    return FixedGenome(values=tuple(values))


def run_bo(
    dataset: Dataset | None,
    config: BOConfig,
    representation: str = FIXED,
    evaluator: Evaluator | None = None,
    objective=None,
) -> tuple[Individual, list[GenerationRecord]]:
    """GP + expected-improvement optimization over the 12-slot genome box.

    ``objective`` (FixedGenome -> float) bypasses corpus evaluation for synthetic
    benchmarks. When all observations are equal the GP is degenerate and the
    next proposal falls back to a uniform random point (flagged in the log).
    """
    config.validate()
    if representation != FIXED:
        raise RepresentationUnsupportedError(
            f"Bayesian optimization supports only the {FIXED!r} representation, got {representation!r}"
        )
    if objective is None:
        if evaluator is None:
            if dataset is None:
                raise ValueError("need a dataset, an evaluator, or an objective")
            evaluator = LocalEvaluator(
                dataset,
                num_topics=config.num_topics,
                num_background=config.num_background,
                metric=config.metric,
                background_tau=config.background_tau,
            )
        train_seed = eval_seed_for(config.seed, 0, 0)

        def objective(genome: FixedGenome) -> float:
            try:
                gp = fixed_to_pipeline(genome)
            except EmptyPipelineError:
                return -math.inf
            outcome = evaluator.evaluate_batch([EvalRequest(pipeline=gp, seed=train_seed)])[0]
            if outcome.error is not None:
                log.warning("objective evaluation failed: %s", outcome.error)
                return -math.inf
            return outcome.fitness

    rng = np.random.default_rng(config.seed)
    dim = FIXED_GENOME_LENGTH
    n_init = min(config.n_init, config.budget)
    X = [row for row in latin_hypercube(rng, n_init, dim)]
    y = [float(objective(_unit_to_genome(x))) for x in X]
    history = [
        GenerationRecord(
            generation=0,
            best=max(y),
            mean=float(np.mean(y)),
            true_evals=n_init,
            surrogate_evals=0,
            elapsed_s=0.0,
        )
    ]
    degenerate_fallbacks = 0
    iteration = 0
    while len(y) < config.budget:
        iteration += 1
        start = time.perf_counter()
        finite = [v for v in y if math.isfinite(v)]
        if not finite or max(finite) - min(finite) < 1e-12:
            degenerate_fallbacks += 1
            log.warning("degenerate observations; proposing a uniform random point")
            proposal = rng.random(dim)
        else:
            y_fit = np.array([v if math.isfinite(v) else min(finite) for v in y])
            gp = GaussianProcessSurrogate(params=config.gp, seed=config.seed).fit(np.array(X), y_fit)
            best_idx = int(np.argmax(y_fit))
            cands = rng.random((config.candidates, dim))
            local = np.clip(
                np.array(X[best_idx]) + 0.05 * rng.normal(size=(config.local_candidates, dim)), 0.0, 1.0
            )
            cands = np.vstack([cands, local])
            mean, std = gp.predict(cands)
            ei = expected_improvement(mean, std, best=float(y_fit.max()), xi=config.xi)
            proposal = cands[int(np.argmax(ei))]
        X.append(proposal)
        y.append(float(objective(_unit_to_genome(proposal))))
        running_best = max(v for v in y if math.isfinite(v))
        history.append(
            GenerationRecord(
                generation=iteration,
                best=running_best,
                mean=y[-1] if math.isfinite(y[-1]) else running_best,
                true_evals=1,
                surrogate_evals=0,
                elapsed_s=time.perf_counter() - start,
            )
        )
    best_idx = int(np.argmax([v if math.isfinite(v) else -math.inf for v in y]))
    best = Individual(
        genome=_unit_to_genome(np.asarray(X[best_idx])),
        fitness=y[best_idx],
        fitness_source=TRUE_EVAL,
        eval_seed=eval_seed_for(config.seed, 0, 0),
    )
    if degenerate_fallbacks:
        log.info("BO used %d random fallbacks due to degenerate observations", degenerate_fallbacks)
    return best, history
