from __future__ import annotations

import math

import numpy as np
import pytest

from topicpipe import artm
from topicpipe.artm import (
    DimensionMismatchError,
    EMCounters,
    InvalidDimensionsError,
    MStepEvents,
    RegKind,
    RegularizerSpec,
    TopicModel,
    TopicTarget,
    e_step,
    init_model,
    load_model,
    log_likelihood,
    m_step,
    regularizer_gradient,
    save_model,
    sparsity,
    top_token_indices,
    top_tokens,
    train_stage,
)
from topicpipe.corpus import Document, build_vocabulary, vectorize
from topicpipe.pipeline import Stage


def _corpus(*token_lists):
    docs = [Document(id=f"d{i}", tokens=tuple(t)) for i, t in enumerate(token_lists)]
    vocab = build_vocabulary(docs, min_df=1, max_df_ratio=1.0)
    return vectorize(docs, vocab)


@pytest.fixture(scope="module")
def corpus34():
    # 3 docs, 4 words
    return _corpus(
        ["w0", "w1", "w0"],
        ["w1", "w2", "w3", "w2"],
        ["w0", "w3"],
    )


# ---------------------------------------------------------------------------
# init_model
# ---------------------------------------------------------------------------


def test_init_deterministic():
    a = init_model(5, 3, 1, seed=42, num_docs=4)
    b = init_model(5, 3, 1, seed=42, num_docs=4)
    assert np.array_equal(a.phi, b.phi)
    assert np.array_equal(a.theta, b.theta)
    c = init_model(5, 3, 1, seed=43, num_docs=4)
    assert not np.array_equal(a.phi, c.phi)


def test_init_column_sums():
    model = init_model(7, 4, 2, seed=0, num_docs=9)
    assert np.allclose(model.phi.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(model.theta.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(model.phi >= 0)


def test_init_two_point_distribution():
    model = init_model(2, 1, 0, seed=5, num_docs=1)
    assert model.phi.shape == (2, 1)
    assert math.isclose(model.phi[:, 0].sum(), 1.0, abs_tol=1e-12)


@pytest.mark.parametrize(
    "V,T,B,D",
    [(1, 1, 0, 1), (5, 0, 0, 1), (5, 3, 3, 1), (5, 3, -1, 1), (5, 3, 1, 0)],
)
def test_init_invalid_dimensions(V, T, B, D):
    with pytest.raises(InvalidDimensionsError):
        init_model(V, T, B, seed=0, num_docs=D)


# ---------------------------------------------------------------------------
# e_step
# ---------------------------------------------------------------------------


def test_e_step_single_topic_equals_counts(corpus34):
    model = init_model(corpus34.vocabulary.size, 1, 0, seed=1, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            assert math.isclose(counters.n_td[0, d], sum(corpus34.doc_counts(d).values()))
    totals = np.zeros(corpus34.vocabulary.size)
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            totals[w] += c
    assert np.allclose(counters.n_wt[:, 0], totals, atol=1e-12)


def test_e_step_conservation(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=2, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    assert math.isclose(counters.n_wt.sum(), corpus34.total_tokens, rel_tol=1e-12)
    assert math.isclose(counters.n_td.sum(), corpus34.total_tokens, rel_tol=1e-12)


def test_e_step_matches_per_token_oracle(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=3, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    V, T = model.phi.shape
    n_wt = np.zeros((V, T))
    n_td = np.zeros((T, corpus34.num_docs))
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            p = np.array([model.phi[w, t] * model.theta[t, d] for t in range(T)])
            z = p.sum()
            resp = p / z if z > 0 else np.full(T, 1.0 / T)
            for t in range(T):
                n_wt[w, t] += c * resp[t]
                n_td[t, d] += c * resp[t]
    assert np.allclose(counters.n_wt, n_wt, atol=1e-12)
    assert np.allclose(counters.n_td, n_td, atol=1e-12)


def test_e_step_uniform_on_zero_denominator(corpus34):
    model = init_model(corpus34.vocabulary.size, 2, 0, seed=4, num_docs=corpus34.num_docs)
    model.phi[:, :] = 0.0  # force a dead mixture for every entry
    counters = e_step(model, corpus34)
    # uniform responsibilities split every count evenly over the 2 topics
    assert np.allclose(counters.n_wt[:, 0], counters.n_wt[:, 1], atol=1e-12)


def test_e_step_dimension_mismatch(corpus34):
    model = init_model(corpus34.vocabulary.size + 1, 2, 0, seed=0, num_docs=corpus34.num_docs)
    with pytest.raises(DimensionMismatchError):
        e_step(model, corpus34)


# ---------------------------------------------------------------------------
# regularizer gradients
# ---------------------------------------------------------------------------


def _reg_value(spec: RegularizerSpec, model: TopicModel) -> float:
    """Independent implementation of the regularizer objectives."""
    targets = model.topic_indices(spec.target)
    if spec.kind in (RegKind.SMOOTHING, RegKind.SPARSING):
        return spec.a * model.phi[:, targets].sum() + spec.b * model.theta[targets, :].sum()
    total = 0.0
    for t in targets:
        for s in targets:
            if s != t:
                total += float(model.phi[:, t] @ model.phi[:, s])
    return -spec.a / 2.0 * total


def test_smoothing_gradient_constant():
    model = init_model(5, 3, 1, seed=0, num_docs=2)
    spec = RegularizerSpec(RegKind.SMOOTHING, TopicTarget.BACKGROUND, a=0.1, b=0.2)
    dphi, dtheta = regularizer_gradient(spec, model)
    assert np.all(dphi[:, :1] == 0.1)
    assert np.all(dphi[:, 1:] == 0.0)
    assert np.all(dtheta[:1, :] == 0.2)
    assert np.all(dtheta[1:, :] == 0.0)


def test_decorrelation_gradient_identical_columns():
    model = init_model(5, 2, 0, seed=0, num_docs=2)
    model.phi[:, 1] = model.phi[:, 0]
    spec = RegularizerSpec(RegKind.DECORRELATION, TopicTarget.SPECIFIC, a=2.0)
    dphi, dtheta = regularizer_gradient(spec, model)
    assert np.allclose(dphi[:, 0], -2.0 * model.phi[:, 1], atol=1e-12)
    assert np.allclose(dphi[:, 1], -2.0 * model.phi[:, 0], atol=1e-12)
    assert np.all(dtheta == 0.0)


@pytest.mark.parametrize(
    "spec",
    [
        RegularizerSpec(RegKind.SMOOTHING, TopicTarget.BACKGROUND, a=0.7, b=0.3),
        RegularizerSpec(RegKind.SPARSING, TopicTarget.SPECIFIC, a=-0.5, b=-0.25),
        RegularizerSpec(RegKind.DECORRELATION, TopicTarget.SPECIFIC, a=1.8),
    ],
)
def test_gradients_match_finite_differences(spec):
    h = 1e-6
    for trial in range(20):
        model = init_model(5, 3, 1, seed=100 + trial, num_docs=2)
        dphi, dtheta = regularizer_gradient(spec, model)
        for w, t in [(0, 0), (2, 1), (4, 2), (1, 2)]:
            up = TopicModel(model.phi.copy(), model.theta.copy(), 1, 0)
            dn = TopicModel(model.phi.copy(), model.theta.copy(), 1, 0)
            up.phi[w, t] += h
            dn.phi[w, t] -= h
            fd = (_reg_value(spec, up) - _reg_value(spec, dn)) / (2 * h)
            assert abs(fd - dphi[w, t]) < 1e-6
        for t, d in [(0, 0), (1, 1), (2, 0)]:
            up = TopicModel(model.phi.copy(), model.theta.copy(), 1, 0)
            dn = TopicModel(model.phi.copy(), model.theta.copy(), 1, 0)
            up.theta[t, d] += h
            dn.theta[t, d] -= h
            fd = (_reg_value(spec, up) - _reg_value(spec, dn)) / (2 * h)
            assert abs(fd - dtheta[t, d]) < 1e-6


def test_spec_sign_validation():
    with pytest.raises(ValueError):
        RegularizerSpec(RegKind.SMOOTHING, TopicTarget.BACKGROUND, a=-1.0, b=0.0)
    with pytest.raises(ValueError):
        RegularizerSpec(RegKind.SPARSING, TopicTarget.SPECIFIC, a=0.5, b=0.0)
    with pytest.raises(ValueError):
        RegularizerSpec(RegKind.DECORRELATION, TopicTarget.SPECIFIC, a=-0.1)


# ---------------------------------------------------------------------------
# m_step
# ---------------------------------------------------------------------------


def test_m_step_single_topic_closed_form(corpus34):
    model = init_model(corpus34.vocabulary.size, 1, 0, seed=7, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    updated = m_step(counters, model)
    counts = np.zeros(corpus34.vocabulary.size)
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            counts[w] += c
    assert np.allclose(updated.phi[:, 0], counts / corpus34.total_tokens, atol=1e-12)


def test_m_step_extreme_sparsing_resets_columns(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=8, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    spec = RegularizerSpec(RegKind.SPARSING, TopicTarget.SPECIFIC, a=-1e6, b=-1e6)
    events = MStepEvents()
    updated = m_step(counters, model, [spec], events=events)
    assert events.phi_resets == 2  # both specific topics truncate fully
    # theta columns survive through their untargeted background entry
    assert events.theta_resets == 0
    assert np.allclose(updated.phi.sum(axis=0), 1.0, atol=1e-9)
    assert np.allclose(updated.phi[:, 1], 1.0 / corpus34.vocabulary.size)

    # with no background topic every theta column truncates and resets too
    model = init_model(corpus34.vocabulary.size, 3, 0, seed=8, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    events = MStepEvents()
    updated = m_step(counters, model, [spec], events=events)
    assert events.phi_resets == 3
    assert events.theta_resets == corpus34.num_docs
    assert np.allclose(updated.theta[:, 0], 1.0 / 3.0)


def test_m_step_sparsing_dominance(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 0, seed=9, num_docs=corpus34.num_docs)
    counters = e_step(model, corpus34)
    plain = m_step(counters, model)
    spec = RegularizerSpec(RegKind.SPARSING, TopicTarget.SPECIFIC, a=-0.4, b=-0.4)
    sparsed = m_step(counters, model, [spec])
    assert sparsity(sparsed.phi) >= sparsity(plain.phi)
    assert sparsity(sparsed.theta) >= sparsity(plain.theta)


def test_m_step_column_stochastic(corpus34):
    model = init_model(corpus34.vocabulary.size, 4, 2, seed=10, num_docs=corpus34.num_docs)
    specs = [
        RegularizerSpec(RegKind.SMOOTHING, TopicTarget.BACKGROUND, a=0.5, b=0.5),
        RegularizerSpec(RegKind.DECORRELATION, TopicTarget.SPECIFIC, a=10.0),
    ]
    for _ in range(5):
        counters = e_step(model, corpus34)
        model = m_step(counters, model, specs)
        assert np.all(np.abs(model.phi.sum(axis=0) - 1.0) <= 1e-9)
        assert np.all(np.abs(model.theta.sum(axis=0) - 1.0) <= 1e-9)


# ---------------------------------------------------------------------------
# train_stage and likelihood
# ---------------------------------------------------------------------------


def test_train_stage_zero_iters_is_identity(corpus34):
    model = init_model(corpus34.vocabulary.size, 2, 0, seed=11, num_docs=corpus34.num_docs)
    stage = Stage(kind=RegKind.SMOOTHING, n_iters=1, a=0.1, b=0.1)
    unchanged = train_stage(model, corpus34, Stage(kind=RegKind.SMOOTHING, n_iters=0, a=0.1, b=0.1))
    assert unchanged is model
    trained = train_stage(model, corpus34, stage)
    assert not np.array_equal(trained.phi, model.phi)


def test_em_monotonic_log_likelihood(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 0, seed=12, num_docs=corpus34.num_docs)
    previous = log_likelihood(model, corpus34)
    for _ in range(20):
        counters = e_step(model, corpus34)
        model = m_step(counters, model)
        current = log_likelihood(model, corpus34)
        assert current >= previous - abs(previous) * 1e-9
        previous = current


def test_train_stage_counts_passes(corpus34, monkeypatch):
    calls = {"n": 0}
    original = artm.e_step

    def counting(model, corpus):
        calls["n"] += 1
        return original(model, corpus)

    monkeypatch.setattr(artm, "e_step", counting)
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=13, num_docs=corpus34.num_docs)
    train_stage(model, corpus34, Stage(kind=RegKind.SMOOTHING, n_iters=6, a=1.0, b=1.0))
    assert calls["n"] == 6


def test_log_likelihood_single_topic_closed_form(corpus34):
    V = corpus34.vocabulary.size
    counts = np.zeros(V)
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            counts[w] += c
    phi = (counts / counts.sum()).reshape(V, 1)
    theta = np.ones((1, corpus34.num_docs))
    model = TopicModel(phi=phi, theta=theta, num_background=0, seed=0)
    expected = sum(
        c * math.log(counts[w] / counts.sum())
        for d in range(corpus34.num_docs)
        for w, c in corpus34.doc_counts(d).items()
    )
    assert math.isclose(log_likelihood(model, corpus34), expected, rel_tol=1e-12)


def test_log_likelihood_matches_bruteforce(corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=14, num_docs=corpus34.num_docs)
    expected = 0.0
    for d in range(corpus34.num_docs):
        for w, c in corpus34.doc_counts(d).items():
            p = sum(model.phi[w, t] * model.theta[t, d] for t in range(3))
            expected += c * math.log(max(p, 1e-300))
    assert math.isclose(log_likelihood(model, corpus34), expected, rel_tol=1e-9)
    assert math.isfinite(log_likelihood(model, corpus34))


# ---------------------------------------------------------------------------
# sparsity / top tokens
# ---------------------------------------------------------------------------


def test_sparsity_values():
    matrix = np.array([[0.0, 1.0], [2.0, 0.0]])
    assert sparsity(matrix) == 0.5
    assert sparsity(np.ones((3, 3))) == 0.0


def test_top_tokens_delta_column(corpus34):
    V = corpus34.vocabulary.size
    phi = np.zeros((V, 1))
    phi[2, 0] = 1.0
    model = TopicModel(phi=phi, theta=np.ones((1, 1)), num_background=0, seed=0)
    assert top_tokens(model, corpus34.vocabulary, 0, 1) == [corpus34.vocabulary.tokens[2]]


def test_top_tokens_full_sort_and_truncation(corpus34):
    model = init_model(corpus34.vocabulary.size, 2, 0, seed=15, num_docs=corpus34.num_docs)
    V = corpus34.vocabulary.size
    got = top_token_indices(model, 0, V)
    expected = sorted(range(V), key=lambda i: (-model.phi[i, 0], i))
    assert list(got) == expected
    assert len(top_token_indices(model, 0, V + 10)) == V


def test_top_tokens_tie_break_by_index():
    phi = np.array([[0.25], [0.25], [0.25], [0.25]])
    model = TopicModel(phi=phi, theta=np.ones((1, 1)), num_background=0, seed=0)
    assert list(top_token_indices(model, 0, 2)) == [0, 1]


# ---------------------------------------------------------------------------
# serialization & determinism
# ---------------------------------------------------------------------------


def test_model_save_load_roundtrip(tmp_path, corpus34):
    model = init_model(corpus34.vocabulary.size, 3, 1, seed=16, num_docs=corpus34.num_docs)
    path = tmp_path / "model.bin"
    save_model(path, model)
    loaded = load_model(path)
    assert np.array_equal(loaded.phi, model.phi)
    assert np.array_equal(loaded.theta, model.theta)
    assert loaded.num_background == 1
    assert loaded.seed == 16


def test_export_top_words_format(corpus34):
    model = init_model(corpus34.vocabulary.size, 2, 0, seed=17, num_docs=corpus34.num_docs)
    text = artm.export_top_words(model, corpus34.vocabulary, k=2)
    lines = text.strip().split("\n")
    assert len(lines) == 4
    topic, token, value = lines[0].split("\t")
    assert topic == "0"
    assert token in corpus34.vocabulary.tokens
    float(value)


def test_training_bit_identical(corpus34):
    stage = Stage(kind=RegKind.DECORRELATION, n_iters=5, a=50.0, b=0.0)
    runs = []
    for _ in range(2):
        model = init_model(corpus34.vocabulary.size, 3, 1, seed=18, num_docs=corpus34.num_docs)
        runs.append(train_stage(model, corpus34, stage))
    assert np.array_equal(runs[0].phi, runs[1].phi)
    assert np.array_equal(runs[0].theta, runs[1].theta)
