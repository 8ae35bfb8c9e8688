from __future__ import annotations

import json

import pytest

from topicpipe.judge import (
    DEFAULT_JUDGE_PROMPT,
    JudgeClient,
    JudgeUnavailableError,
    LlmJudgeConfig,
    StubJudgeServer,
    StubScript,
    UnparseableReplyError,
    llm_score_topic,
    parse_score,
)

WORDS = ["cat", "dog", "hamster", "parrot"]


def _config(url: str, **kwargs) -> LlmJudgeConfig:
    kwargs.setdefault("backoff_base_s", 0.0)  # no real sleeping in tests
    return LlmJudgeConfig(endpoint_url=url, **kwargs)


def test_parse_score_variants():
    assert parse_score("4") == 4
    assert parse_score("Score: 3.") == 3
    assert parse_score("I would rate this 2 out of 4") == 2
    assert parse_score("great topic") is None
    assert parse_score("10") is None  # out of range
    assert parse_score("") is None


def test_clean_reply():
    with StubJudgeServer(StubScript(entries=["4"])) as stub:
        assert llm_score_topic(WORDS, _config(stub.url)) == 4


def test_chatty_reply_first_integer():
    with StubJudgeServer(StubScript(entries=["Score: 3."])) as stub:
        assert llm_score_topic(WORDS, _config(stub.url)) == 3


def test_retry_then_success_is_recorded():
    with StubJudgeServer(StubScript(entries=["great topic", "2"])) as stub:
        client = JudgeClient(_config(stub.url))
        assert client.score_topic(WORDS) == 2
        assert len(client.retry_log) == 1
        assert "unparseable" in client.retry_log[0].reason
        assert len(stub.requests) == 2


def test_out_of_range_score_retries():
    with StubJudgeServer(StubScript(entries=["10", "1"])) as stub:
        client = JudgeClient(_config(stub.url))
        assert client.score_topic(WORDS) == 1
        assert len(client.retry_log) == 1


def test_exhausted_unparseable():
    with StubJudgeServer(StubScript(entries=["nope", "nope", "nope"])) as stub:
        client = JudgeClient(_config(stub.url, max_retries=2))
        with pytest.raises(UnparseableReplyError):
            client.score_topic(WORDS)
        assert len(client.retry_log) == 2
        assert len(stub.requests) == 3


def test_transport_errors_exhausted():
    with StubJudgeServer(StubScript(entries=[500, 500, 500])) as stub:
        client = JudgeClient(_config(stub.url, max_retries=2))
        with pytest.raises(JudgeUnavailableError):
            client.score_topic(WORDS)
        assert len(client.retry_log) == 2


def test_transport_error_then_recovery():
    with StubJudgeServer(StubScript(entries=[500, "3"])) as stub:
        client = JudgeClient(_config(stub.url))
        assert client.score_topic(WORDS) == 3
        assert "transport" in client.retry_log[0].reason


def test_prompt_sent_byte_exactly():
    with StubJudgeServer(StubScript(entries=["4"])) as stub:
        llm_score_topic(WORDS, _config(stub.url))
        body = stub.requests[0]
        assert body["model"] == "gpt-4o"
        system, user = body["messages"]
        assert system["role"] == "system"
        assert system["content"] == DEFAULT_JUDGE_PROMPT
        assert system["content"].encode("utf-8") == DEFAULT_JUDGE_PROMPT.encode("utf-8")
        assert user == {"role": "user", "content": "cat dog hamster parrot"}


def test_bearer_token_from_environment(monkeypatch):
    monkeypatch.setenv("AUTOTM_LLM_TOKEN", "secret-token")
    captured = {}
    with StubJudgeServer(StubScript(entries=["2"])) as stub:
        import requests

        session = requests.Session()
        original = session.post

        def spy(url, **kwargs):
            captured.update(kwargs.get("headers") or {})
            return original(url, **kwargs)

        session.post = spy
        client = JudgeClient(_config(stub.url), session=session)
        assert client.score_topic(WORDS) == 2
    assert captured.get("Authorization") == "Bearer secret-token"


def test_custom_prompt_template_with_placeholder():
    with StubJudgeServer(StubScript(entries=["1"])) as stub:
        cfg = _config(stub.url, prompt_template="Rate these: {words}")
        llm_score_topic(["a", "b"], cfg)
        assert stub.requests[0]["messages"][0]["content"] == "Rate these: a b"


def test_empty_words_rejected():
    with pytest.raises(ValueError):
        llm_score_topic([], _config("http://127.0.0.1:1/unused"))


def test_cache_avoids_second_request(tmp_path):
    cache = tmp_path / "judge_cache.json"
    with StubJudgeServer(StubScript(entries=["3", "1"])) as stub:
        cfg = _config(stub.url, cache_path=str(cache))
        assert llm_score_topic(WORDS, cfg) == 3
        assert llm_score_topic(WORDS, cfg) == 3  # served from cache, not the "1" reply
        assert len(stub.requests) == 1
    data = json.loads(cache.read_text())
    assert list(data.values()) == [3]


def test_score_always_in_range():
    with StubJudgeServer(StubScript(entries=["0", "5", "4"])) as stub:
        client = JudgeClient(_config(stub.url))
        score = client.score_topic(WORDS)
        assert 1 <= score <= 4
