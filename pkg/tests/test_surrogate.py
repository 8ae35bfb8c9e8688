from __future__ import annotations

import math

import numpy as np
import pytest

from topicpipe.evaluation import EvalOutcome
from topicpipe.evolution import GAConfig, Individual, run_ga
from topicpipe.pipeline import random_pipeline, to_surrogate_vector
from topicpipe.surrogate import (
    GaussianProcessSurrogate,
    GPParams,
    InsufficientDataError,
    RandomForestSurrogate,
    RFParams,
    SurrogateConfig,
    SurrogateDataset,
    SurrogateState,
    fit,
    predict,
    surrogate_evaluate_generation,
)

# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------


def test_dataset_append_and_len(rng):
    ds = SurrogateDataset()
    assert len(ds) == 0
    ds.append(np.zeros(90), 0.5)
    assert len(ds) == 1
    with pytest.raises(ValueError):
        ds.append(np.zeros(12), 0.1)


def test_dataset_csv_dump(tmp_path, rng):
    ds = SurrogateDataset()
    for i in range(3):
        ds.append(to_surrogate_vector(random_pipeline(rng)), float(i))
    path = tmp_path / "surrogate_data.csv"
    ds.dump_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0].split(",")[:2] == ["f0", "f1"]
    assert lines[0].split(",")[-1] == "fitness"
    assert len(lines) == 4
    assert len(lines[1].split(",")) == 91


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------


def test_rf_constant_targets():
    X = np.random.default_rng(0).random((12, 4))
    y = np.full(12, 3.25)
    rf = RandomForestSurrogate(RFParams(n_trees=10), seed=1).fit(X, y)
    mean, std = rf.predict(X)
    assert np.allclose(mean, 3.25)
    assert np.allclose(std, 0.0)


def test_rf_single_tree_interpolates_training_points():
    # distinct inputs, full features, unlimited depth, no bagging: the tree
    # keeps splitting until every leaf holds one sample
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    y = np.array([5.0, -1.0, 2.0, 7.0, 0.0])
    params = RFParams(n_trees=1, max_depth=None, min_leaf=1, feature_fraction=1.0, bootstrap=False)
    rf = RandomForestSurrogate(params, seed=0).fit(X, y)
    mean, std = rf.predict(X)
    assert np.allclose(mean, y)
    assert np.allclose(std, 0.0)


def test_rf_mean_within_tree_range():
    rng = np.random.default_rng(3)
    X = rng.random((30, 5))
    y = rng.random(30)
    rf = RandomForestSurrogate(RFParams(n_trees=15, max_depth=4), seed=2).fit(X, y)
    from topicpipe.surrogate import _tree_predict

    for x in rng.random((10, 5)):
        per_tree = [_tree_predict(t, x) for t in rf._trees]
        mean, _ = rf.predict(x[None, :])
        assert min(per_tree) - 1e-12 <= mean[0] <= max(per_tree) + 1e-12


def test_rf_deterministic_per_seed():
    rng = np.random.default_rng(4)
    X = rng.random((25, 6))
    y = rng.random(25)
    q = rng.random((5, 6))
    a = RandomForestSurrogate(RFParams(n_trees=20), seed=9).fit(X, y).predict(q)
    b = RandomForestSurrogate(RFParams(n_trees=20), seed=9).fit(X, y).predict(q)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


# ---------------------------------------------------------------------------
# gaussian process
# ---------------------------------------------------------------------------


def test_gp_near_zero_noise_interpolates():
    X = np.array([[0.0, 0.0], [1.0, 0.5], [0.3, 0.9]])
    y = np.array([1.0, -2.0, 0.5])
    gp = GaussianProcessSurrogate(GPParams(length_scale=1.0, noise=1e-8)).fit(X, y)
    mean, std = gp.predict(X)
    assert np.all(np.abs(mean - y) < 1e-6)
    assert np.all(std < 1e-3)


def test_gp_matches_closed_form_solve():
    X = np.array([[0.0], [1.0], [2.0]])
    y = np.array([0.0, 1.0, 4.0])
    ls, noise, jitter = 1.5, 1e-4, 1e-10
    gp = GaussianProcessSurrogate(GPParams(length_scale=ls, noise=noise, jitter=jitter)).fit(X, y)
    # independent closed-form computation with the same standardization convention
    xm, xs = X.mean(axis=0), X.std(axis=0)
    ym, ys = y.mean(), y.std()
    Xs = (X - xm) / xs
    ysn = (y - ym) / ys
    d2 = ((Xs[:, None, :] - Xs[None, :, :]) ** 2).sum(axis=2)
    K = np.exp(-d2 / (2 * ls**2)) + (noise**2 + jitter) * np.eye(3)
    alpha = np.linalg.solve(K, ysn)
    q = np.array([[0.5], [1.7]])
    qs = (q - xm) / xs
    k_star = np.exp(-(((qs[:, None, :] - Xs[None, :, :]) ** 2).sum(axis=2)) / (2 * ls**2))
    expected_mean = k_star @ alpha * ys + ym
    mean, _ = gp.predict(q)
    assert np.allclose(mean, expected_mean, atol=1e-9)


def test_gp_far_from_data_uncertainty_is_prior_scale():
    X = np.random.default_rng(1).random((8, 3))
    y = np.random.default_rng(2).random(8)
    gp = GaussianProcessSurrogate(GPParams(length_scale=0.5, noise=1e-6)).fit(X, y)
    far = np.full((1, 3), 100.0)
    _, std = gp.predict(far)
    assert math.isclose(std[0], float(y.std()), rel_tol=0.05)


def test_gp_grid_search_picks_reasonable_fit():
    rng = np.random.default_rng(5)
    X = rng.random((20, 2))
    y = np.sin(3 * X[:, 0]) + 0.1 * X[:, 1]
    gp = GaussianProcessSurrogate().fit(X, y)
    mean, _ = gp.predict(X)
    assert float(np.abs(mean - y).mean()) < 0.2
    assert gp.length_scale_ is not None and gp.noise_ is not None


def test_gp_constant_targets():
    X = np.random.default_rng(6).random((10, 2))
    y = np.full(10, 2.0)
    gp = GaussianProcessSurrogate().fit(X, y)
    mean, _ = gp.predict(np.random.default_rng(7).random((4, 2)))
    assert np.allclose(mean, 2.0, atol=1e-6)


# ---------------------------------------------------------------------------
# fit / predict wrappers
# ---------------------------------------------------------------------------


def test_fit_requires_warmup_rows(rng):
    config = SurrogateConfig(warmup_true_evals=10)
    ds = SurrogateDataset()
    for i in range(9):
        ds.append(to_surrogate_vector(random_pipeline(rng)), float(i))
    with pytest.raises(InsufficientDataError):
        fit(ds, config)
    ds.append(to_surrogate_vector(random_pipeline(rng)), 9.0)
    model = fit(ds, config)
    mean, std = predict(model, to_surrogate_vector(random_pipeline(rng)))
    assert math.isfinite(mean) and std >= 0


def test_surrogate_config_validation():
    with pytest.raises(ValueError):
        SurrogateConfig(kind="neural")
    with pytest.raises(ValueError):
        SurrogateConfig(promote_fraction=0.0)
    with pytest.raises(ValueError):
        SurrogateConfig(warmup_true_evals=5)


# ---------------------------------------------------------------------------
# generation evaluation strategy
# ---------------------------------------------------------------------------


class StubEvaluator:
    """Deterministic fitness from the pipeline shape; counts calls; can fail on demand."""

    def __init__(self, fail=False):
        self.calls = 0
        self.fail = fail

    def evaluate_batch(self, requests):
        self.calls += len(requests)
        out = []
        for r in requests:
            if self.fail:
                out.append(EvalOutcome(fitness=None, error="boom"))
            else:
                value = math.sin(sum(s.n_iters + s.a for s in r.pipeline.stages))
                out.append(EvalOutcome(fitness=value))
        return out


def _individuals(rng, n, gen=0):
    inds = []
    for i in range(n):
        ind = Individual(genome=random_pipeline(rng, length_range=(1, 4)))
        ind.eval_seed = 100 * gen + i
        inds.append(ind)
    return inds


def test_warmup_all_true(rng):
    state = SurrogateState(config=SurrogateConfig(warmup_true_evals=10, promote_fraction=0.3))
    evaluator = StubEvaluator()
    inds = _individuals(rng, 10)
    stats = surrogate_evaluate_generation(inds, state, evaluator)
    assert stats.true_evals == 10
    assert stats.surrogate_evals == 0
    assert evaluator.calls == 10
    assert len(state.dataset) == 10
    assert state.model is not None  # warmup complete, model fit
    assert all(i.fitness_source == "true_eval" for i in inds)


def test_promote_fraction_ceiling(rng):
    state = SurrogateState(config=SurrogateConfig(warmup_true_evals=10, promote_fraction=0.3))
    evaluator = StubEvaluator()
    surrogate_evaluate_generation(_individuals(rng, 10), state, evaluator)
    inds = _individuals(rng, 10, gen=1)
    stats = surrogate_evaluate_generation(inds, state, evaluator)
    assert stats.true_evals == 3  # ceil(0.3 * 10)
    assert stats.surrogate_evals == 7
    assert evaluator.calls == 13
    assert len(state.dataset) == 13  # only true rows enter
    sources = sorted(i.fitness_source for i in inds)
    assert sources.count("true_eval") == 3
    assert sources.count("surrogate_pred") == 7


def test_failures_fall_back_to_predictions(rng):
    state = SurrogateState(config=SurrogateConfig(warmup_true_evals=10, promote_fraction=0.5))
    surrogate_evaluate_generation(_individuals(rng, 10), state, StubEvaluator())
    inds = _individuals(rng, 6, gen=1)
    stats = surrogate_evaluate_generation(inds, state, StubEvaluator(fail=True))
    assert stats.failed_evals == 3
    assert all(i.fitness is not None for i in inds)
    assert all(i.fitness_source == "surrogate_pred" for i in inds)
    assert len(state.dataset) == 10  # failed evals never enter the dataset


def test_retrain_every_schedule(rng):
    config = SurrogateConfig(warmup_true_evals=10, promote_fraction=0.2, retrain_every=3)
    state = SurrogateState(config=config)
    evaluator = StubEvaluator()
    surrogate_evaluate_generation(_individuals(rng, 10), state, evaluator)
    first_model = state.model
    surrogate_evaluate_generation(_individuals(rng, 10, gen=1), state, evaluator)
    assert state.model is first_model  # not yet due
    surrogate_evaluate_generation(_individuals(rng, 10, gen=2), state, evaluator)
    surrogate_evaluate_generation(_individuals(rng, 10, gen=3), state, evaluator)
    assert state.model is not first_model


def test_max_true_cap(rng):
    state = SurrogateState(config=SurrogateConfig(warmup_true_evals=10, promote_fraction=1.0))
    evaluator = StubEvaluator()
    surrogate_evaluate_generation(_individuals(rng, 10), state, evaluator)
    inds = _individuals(rng, 10, gen=1)
    stats = surrogate_evaluate_generation(inds, state, evaluator, max_true=4)
    assert stats.true_evals == 4
    assert stats.surrogate_evals == 6


def test_q_one_matches_disabled_surrogate(small_planted):
    base = GAConfig(
        population_size=10,
        generations=3,
        num_topics=5,
        num_background=1,
        seed=77,
        n_iters_range=(1, 6),
        init_length_range=(1, 3),
        early_stop_patience=50,
    )
    _, plain_history = run_ga(small_planted, base)
    from dataclasses import replace

    with_q1 = replace(base, surrogate=SurrogateConfig(warmup_true_evals=10, promote_fraction=1.0))
    _, q1_history = run_ga(small_planted, with_q1)
    assert [(r.generation, r.best, r.mean, r.true_evals, r.surrogate_evals) for r in plain_history] == [
        (r.generation, r.best, r.mean, r.true_evals, r.surrogate_evals) for r in q1_history
    ]


def test_final_best_is_true_evaluated(small_planted):
    config = GAConfig(
        population_size=10,
        generations=4,
        num_topics=5,
        num_background=1,
        seed=5,
        n_iters_range=(1, 6),
        init_length_range=(1, 3),
        early_stop_patience=50,
        surrogate=SurrogateConfig(warmup_true_evals=10, promote_fraction=0.3, rf=RFParams(n_trees=20)),
    )
    state = SurrogateState(config=config.surrogate)
    best, history = run_ga(small_planted, config, surrogate_state=state)
    assert best.fitness_source == "true_eval"
    assert sum(r.surrogate_evals for r in history) > 0
    assert len(state.dataset) == sum(r.true_evals for r in history)
