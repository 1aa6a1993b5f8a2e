"""Lexicon scorer math and the Perspective-style client against a local stub."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srd import scoring
from srd.scoring import (
    Lexicon,
    PerspectiveClient,
    QuotaExhaustedError,
    RemoteScorerConfig,
    ToxicityScore,
    lexicon_score,
    score_corpus,
)

LEX = Lexicon({"stupid": 0.6, "hate": 0.8})


def perspective_body(value: float) -> dict:
    return {"attributeScores": {"TOXICITY": {"summaryScore": {"value": value}}}}


# -------------------- lexicon scorer --------------------


def test_single_match_noisy_or():
    assert lexicon_score("you are stupid", LEX).value == pytest.approx(0.6)


def test_two_factor_noisy_or():
    assert lexicon_score("stupid hate", LEX).value == pytest.approx(0.92)


def test_no_match_scores_zero():
    assert lexicon_score("kind words", LEX).value == 0.0


def test_punctuation_and_case_still_match():
    assert lexicon_score("STUPID!", LEX).value == pytest.approx(0.6)


def test_repeated_occurrences_compound():
    assert lexicon_score("stupid stupid", LEX).value == pytest.approx(1 - 0.4 * 0.4)


def test_lexicon_rejects_bad_weights():
    with pytest.raises(ValueError):
        Lexicon({"word": 0.0})
    with pytest.raises(ValueError):
        Lexicon({"word": 1.2})
    with pytest.raises(ValueError):
        Lexicon({"two words": 0.5})


def test_default_lexicon_ships_sixty_words():
    lexicon = Lexicon.default()
    assert len(lexicon) == 60
    assert all(0 < w <= 1 for w in lexicon.weights.values())


@given(st.lists(st.sampled_from(["stupid", "hate", "calm", "walk"]), max_size=10))
@settings(max_examples=300)
def test_lexicon_score_order_invariant_and_monotone(words):
    text = " ".join(words)
    base = lexicon_score(text, LEX).value
    shuffled = " ".join(sorted(words))
    assert lexicon_score(shuffled, LEX).value == pytest.approx(base)
    # appending a matched occurrence never decreases the score
    assert lexicon_score(text + " hate", LEX).value >= base
    assert 0.0 <= base < 1.0 or base == pytest.approx(1.0)


def test_lexicon_score_strictly_below_one_without_unit_weights():
    rng = random.Random(7)
    for _ in range(200):
        words = [rng.choice(["stupid", "hate"]) for _ in range(rng.randrange(1, 12))]
        value = lexicon_score(" ".join(words), LEX).value
        assert value < 1.0


def test_score_range_is_validated():
    with pytest.raises(ValueError):
        ToxicityScore(value=1.5, source="injected")


# -------------------- remote client --------------------


def remote(stub_server, **kwargs) -> PerspectiveClient:
    defaults = dict(api_root=stub_server.url, rate_per_second=1000.0,
                    max_retries=2, backoff_base=0.01, timeout=5.0)
    defaults.update(kwargs)
    return PerspectiveClient(RemoteScorerConfig(**defaults), api_key="k")


def test_remote_score_field_extraction(stub_server):
    stub_server.queue(perspective_body(0.37))
    score = remote(stub_server).score("some text")
    assert score.value == pytest.approx(0.37)
    assert score.source == "remote_api"
    body = stub_server.requests[0]
    assert body["comment"]["text"] == "some text"
    assert "TOXICITY" in body["requestedAttributes"]
    assert body["languages"] == ["en"]


def test_remote_retries_through_throttling(stub_server):
    stub_server.queue((429, {}), (429, {}), perspective_body(0.5))
    assert remote(stub_server).score("text").value == pytest.approx(0.5)
    assert len(stub_server.requests) == 3


def test_remote_quota_exhausted_after_retries(stub_server):
    stub_server.queue((429, {}), (429, {}), (429, {}))
    with pytest.raises(QuotaExhaustedError):
        remote(stub_server).score("text")


def test_remote_empty_text_rejected(stub_server):
    with pytest.raises(ValueError):
        remote(stub_server).score("")


def test_remote_size_limit_enforced(stub_server):
    client = remote(stub_server, size_limit=10)
    with pytest.raises(ValueError):
        client.score("x" * 11)


def test_remote_hard_error_is_not_retried(stub_server):
    stub_server.queue((403, {"error": "forbidden"}))
    with pytest.raises(scoring.ScoringError):
        remote(stub_server).score("text")
    assert len(stub_server.requests) == 1


# -------------------- token bucket --------------------


def test_token_bucket_makes_burst_wait():
    import time

    bucket = scoring.TokenBucket(rate=50.0, capacity=1.0)
    bucket.acquire()
    start = time.monotonic()
    bucket.acquire()  # must wait ~1/50 s for a refill
    assert time.monotonic() - start >= 0.01


# -------------------- score_corpus --------------------


def test_score_corpus_preserves_order_and_cardinality():
    items = [("a", "calm text"), ("b", "stupid"), ("c", "hate")]
    outcomes = score_corpus(items, lambda t: lexicon_score(t, LEX))
    assert [o.id for o in outcomes] == ["a", "b", "c"]
    assert [o.score for o in outcomes] == pytest.approx([0.0, 0.6, 0.8])


def test_score_corpus_embeds_failures():
    def flaky(text):
        if text == "boom":
            raise scoring.ScoringError("backend exploded")
        return lexicon_score(text, LEX)

    outcomes = score_corpus([("a", "fine"), ("b", "boom"), ("c", "fine")], flaky)
    assert [o.score is None for o in outcomes] == [False, True, False]
    assert outcomes[1].error == "backend exploded"


def test_score_corpus_empty_is_empty():
    assert score_corpus([], lambda t: lexicon_score(t, LEX)) == []
