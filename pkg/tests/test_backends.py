from __future__ import annotations

import json

import numpy as np
import pytest

from mdqa.backends import (
    BackendConfig,
    BackendConfigError,
    BackendError,
    CallLedger,
    HashedBowEmbedder,
    HttpChatBackend,
    HttpEmbedBackend,
    token_slot,
)
from mdqa.synth import SIGNAL_TOKENS


# ---------------------------------------------------------------------------
# Hashed bag-of-words embedder
# ---------------------------------------------------------------------------


def test_embed_deterministic():
    a = HashedBowEmbedder().embed(["total revenue 2021", "net income"])
    b = HashedBowEmbedder().embed(["total revenue 2021", "net income"])
    assert np.array_equal(a, b)


def test_embed_unit_norm():
    vecs = HashedBowEmbedder().embed(["some words here", "x"])
    norms = np.linalg.norm(vecs.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)


def test_embed_empty_text_gives_zero_vector():
    vec = HashedBowEmbedder().embed([""])[0]
    assert np.all(vec == 0)


def test_embed_counts_texts_and_ledger():
    ledger = CallLedger()
    embedder = HashedBowEmbedder(ledger=ledger)
    embedder.embed(["a b", "c"])
    embedder.embed(["d"])
    assert embedder.compute_count == 3
    assert ledger.embed_total == 3


def test_embed_requires_input():
    with pytest.raises(BackendError):
        HashedBowEmbedder().embed([])


def test_rank_critical_tokens_have_distinct_slots():
    # Tokens that carry ranking signal (years, names, tickers, metric words,
    # and the words that appear on synthetic pages) must not collide with one
    # another at dim 512, otherwise the constructed retrieval separations are
    # meaningless. Tokens that only ever appear in queries may share slots
    # with these; that shifts query norms uniformly without reordering pages.
    hard = (
        "2015 2016 2017 2018 2019 2020 2021 2022 2023 "
        "total revenue revenues employees employee dividends dividend paid "
        "net income short long term debt return returned investors capital "
        "argonix boltara cindrel dovetra eldrin fornax gravix holmere irydia "
        "jantara kelvor lumantis mirvane nortella ovestra pyrellia quandor "
        "ravonix argx blta cndr dvtr eldn frnx grvx hlmr iryd jntr klvr lmnt "
        "mrvn nrtl ovst pyrl qndr rvnx coca cola abbott netflix honeywell "
        "caterpillar pfizer pepsico boeing ko abt nflx hon cat pfe pep ba "
        "s pay report business fiscal statements millions overview annual "
        "operations quarterly interim period us dollars what is the of in"
    ).split()
    slots = {}
    for token in hard:
        slots.setdefault(token_slot(token), []).append(token)
    collisions = [tokens for tokens in slots.values() if len(tokens) > 1]
    assert collisions == [], f"rank-critical token collisions: {collisions}"
    assert set(hard) <= set(SIGNAL_TOKENS)


# ---------------------------------------------------------------------------
# Call ledger
# ---------------------------------------------------------------------------


def test_ledger_scopes_and_totals():
    ledger = CallLedger()
    with ledger.scope("vanilla_rag", "q1"):
        ledger.record_chat()
        ledger.record_embed(2)
    with ledger.scope("codegen_pager", "q1"):
        ledger.record_chat()
        ledger.record_chat()
    ledger.record_chat()  # unscoped
    assert ledger.chat_total == 4
    assert ledger.embed_total == 2
    by_scope = ledger.chat_by_scope()
    assert by_scope[("vanilla_rag", "q1")] == 1
    assert by_scope[("codegen_pager", "q1")] == 2
    assert by_scope[("-", "-")] == 1
    snap = ledger.snapshot()
    assert snap["chat_total"] == sum(snap["chat_by_scope"].values())


# ---------------------------------------------------------------------------
# HTTP chat backend
# ---------------------------------------------------------------------------


def _chat_payload(text):
    return {"choices": [{"message": {"content": text}}]}


class _Transport:
    def __init__(self, script):
        # script: list of (status, payload) consumed per request
        self.script = list(script)
        self.requests = []

    def __call__(self, url, body, headers, timeout):
        self.requests.append((url, body, headers))
        status, payload = self.script.pop(0)
        return status, payload


def _http_config(tmp_path, **overrides):
    base = dict(
        kind="http_openai_compatible",
        endpoint="https://llm.example/v1",
        model="test-model",
        auth_env="MDQA_TEST_KEY",
        cache_dir=tmp_path / "cache",
        backoff_base=0.0,
    )
    base.update(overrides)
    return BackendConfig(**base)


def test_chat_cache_avoids_second_network_call(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport([(200, _chat_payload("hello"))])
    ledger = CallLedger()
    backend = HttpChatBackend(_http_config(tmp_path), ledger=ledger, transport=transport)
    messages = [{"role": "user", "content": "hi"}]
    assert backend.chat(messages) == "hello"
    assert backend.chat(messages) == "hello"
    assert len(transport.requests) == 1
    assert ledger.chat_total == 2  # logical calls
    assert ledger.network_chat_total == 1


def test_chat_retries_on_rate_limit(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport([(429, {"error": "slow down"}), (200, _chat_payload("ok"))])
    sleeps = []
    backend = HttpChatBackend(
        _http_config(tmp_path), transport=transport, sleeper=sleeps.append
    )
    assert backend.chat([{"role": "user", "content": "x"}]) == "ok"
    assert len(transport.requests) == 2
    assert len(sleeps) == 1


def test_chat_exhausted_retries(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport([(503, {}), (503, {}), (503, {})])
    backend = HttpChatBackend(
        _http_config(tmp_path, max_retries=3), transport=transport, sleeper=lambda s: None
    )
    with pytest.raises(BackendError, match="failed after 3 attempts"):
        backend.chat([{"role": "user", "content": "x"}])


def test_chat_non_retryable_stops_immediately(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport([(401, {"error": "bad key"})])
    backend = HttpChatBackend(
        _http_config(tmp_path), transport=transport, sleeper=lambda s: None
    )
    with pytest.raises(BackendError, match="401"):
        backend.chat([{"role": "user", "content": "x"}])
    assert len(transport.requests) == 1


def test_missing_auth_fails_before_any_network(tmp_path, monkeypatch):
    monkeypatch.delenv("MDQA_NO_SUCH_KEY", raising=False)
    transport = _Transport([])
    backend = HttpChatBackend(
        _http_config(tmp_path, auth_env="MDQA_NO_SUCH_KEY"), transport=transport
    )
    with pytest.raises(BackendConfigError, match="MDQA_NO_SUCH_KEY"):
        backend.chat([{"role": "user", "content": "x"}])
    assert transport.requests == []


def test_http_config_requires_endpoint_and_model(tmp_path):
    with pytest.raises(BackendConfigError):
        HttpChatBackend(BackendConfig(kind="http_openai_compatible"))


def test_wire_log_written_and_auth_not_logged(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "super-secret")
    transport = _Transport([(200, _chat_payload("hello"))])
    wire_dir = tmp_path / "wire"
    backend = HttpChatBackend(
        _http_config(tmp_path), transport=transport, wire_log_dir=wire_dir
    )
    backend.chat([{"role": "user", "content": "hi"}])
    logs = sorted(wire_dir.glob("*.json"))
    assert len(logs) == 1
    body = logs[0].read_text()
    assert "hello" in body
    assert "super-secret" not in body


# ---------------------------------------------------------------------------
# HTTP embeddings
# ---------------------------------------------------------------------------


def _embed_payload(vectors):
    return {"data": [{"embedding": v} for v in vectors]}


def test_embed_batch_uses_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport(
        [
            (200, _embed_payload([[1.0, 0.0]])),
            (200, _embed_payload([[0.0, 1.0], [0.5, 0.5]])),
        ]
    )
    ledger = CallLedger()
    backend = HttpEmbedBackend(_http_config(tmp_path), ledger=ledger, transport=transport)
    first = backend.embed(["a"])
    assert first.shape == (1, 2)
    # Batch of three with one already cached: exactly two uncached
    # computations go out.
    second = backend.embed(["a", "b", "c"])
    assert second.shape == (3, 2)
    sent = transport.requests[1][1]["input"]
    assert sent == ["b", "c"]
    assert ledger.embed_total == 3  # computations, not requests


def test_embed_dimension_drift_rejected(tmp_path, monkeypatch):
    monkeypatch.setenv("MDQA_TEST_KEY", "k")
    transport = _Transport(
        [
            (200, _embed_payload([[1.0, 0.0]])),
            (200, _embed_payload([[1.0, 0.0, 0.0]])),
        ]
    )
    backend = HttpEmbedBackend(_http_config(tmp_path), transport=transport)
    backend.embed(["a"])
    with pytest.raises(BackendError, match="dimension"):
        backend.embed(["b"])
