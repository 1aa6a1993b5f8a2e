"""Toxicity scoring behind one interface.

A deterministic local lexicon scorer serves offline tests and fixtures; a
Perspective-compatible HTTP client serves live measurement. Both produce
scores in [0, 1], higher meaning more toxic.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .signals import normalize_word

logger = logging.getLogger("srd.scoring")

PERSPECTIVE_KEY_ENV = "SRD_PERSPECTIVE_KEY"


class ScoringError(Exception):
    """Base class for scoring failures."""


class QuotaExhaustedError(ScoringError):
    """The remote API kept throttling past the configured retries."""


@dataclass
class ToxicityScore:
    value: float
    source: str  # lexicon | remote_api | injected

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"score out of range: {self.value}")


class Lexicon:
    """Word -> weight mapping with weights in (0, 1]; words normalized."""

    def __init__(self, weights: dict[str, float]) -> None:
        normalized: dict[str, float] = {}
        for raw, weight in weights.items():
            word = normalize_word(raw)
            if word is None:
                raise ValueError(f"lexicon word not normalizable: {raw!r}")
            if not 0.0 < weight <= 1.0:
                raise ValueError(f"lexicon weight out of (0, 1]: {raw!r} -> {weight}")
            normalized[word] = float(weight)
        self.weights = normalized

    def __len__(self) -> int:
        return len(self.weights)

    @classmethod
    def from_json(cls, path: str | Path) -> "Lexicon":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f))

    @classmethod
    def default(cls) -> "Lexicon":
        path = Path(__file__).parent / "data" / "lexicon_default.json"
        return cls.from_json(path)


def lexicon_score(text: str, lexicon: Lexicon) -> ToxicityScore:
    """Noisy-or combination over matched occurrences: 1 - prod(1 - w_i)."""
    survival = 1.0
    for token in text.split():
        word = normalize_word(token)
        if word is None:
            continue
        weight = lexicon.weights.get(word)
        if weight is not None:
            survival *= 1.0 - weight
    return ToxicityScore(value=1.0 - survival, source="lexicon")


class TokenBucket:
    """Blocking token bucket: ``rate`` tokens/second up to ``capacity``."""

    def __init__(self, rate: float, capacity: Optional[float] = None) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else rate
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self, tokens: float = 1.0) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if tokens <= self._tokens:
                    self._tokens -= tokens
                    return
                wait = (tokens - self._tokens) / self.rate
            time.sleep(wait)


@dataclass
class RemoteScorerConfig:
    api_root: str
    rate_per_second: float = 1.0
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 10.0
    size_limit: int = 20480


class PerspectiveClient:
    """Client for a Perspective-style ``comments:analyze`` endpoint.

    API key comes from the SRD_PERSPECTIVE_KEY environment variable unless
    given explicitly. Requests honor a shared token bucket; HTTP 429 triggers
    exponential backoff before a retry.
    """

    def __init__(self, cfg: RemoteScorerConfig, api_key: Optional[str] = None) -> None:
        self.cfg = cfg
        self._api_key = api_key if api_key is not None else os.environ.get(PERSPECTIVE_KEY_ENV)
        self._bucket = TokenBucket(cfg.rate_per_second)
        self._session = requests.Session()

    def score(self, text: str) -> ToxicityScore:
        if not text:
            raise ValueError("text must be non-empty")
        if len(text.encode("utf-8")) > self.cfg.size_limit:
            raise ValueError(f"text exceeds the {self.cfg.size_limit}-byte API limit")
        url = self.cfg.api_root.rstrip("/") + "/comments:analyze"
        params = {"key": self._api_key} if self._api_key else None
        body = {
            "comment": {"text": text},
            "requestedAttributes": {"TOXICITY": {}},
            "languages": ["en"],
        }
        throttled = False
        last_error: Optional[str] = None
        for attempt in range(1 + self.cfg.max_retries):
            if attempt:
                time.sleep(self.cfg.backoff_base * (2 ** (attempt - 1)))
            self._bucket.acquire()
            try:
                resp = self._session.post(url, params=params, json=body, timeout=self.cfg.timeout)
            except requests.RequestException as exc:
                last_error = str(exc)
                throttled = False
                continue
            if resp.status_code == 429:
                throttled = True
                last_error = "HTTP 429"
                continue
            if resp.status_code // 100 != 2:
                raise ScoringError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            try:
                value = resp.json()["attributeScores"]["TOXICITY"]["summaryScore"]["value"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ScoringError(f"malformed response from {url}: {exc}") from exc
            return ToxicityScore(value=min(1.0, max(0.0, float(value))), source="remote_api")
        if throttled:
            raise QuotaExhaustedError(f"still throttled after {1 + self.cfg.max_retries} attempts")
        raise ScoringError(f"remote scoring failed after retries: {last_error}")


@dataclass
class ScoreOutcome:
    id: str
    score: Optional[float]
    error: Optional[str] = None


def score_corpus(
    items: Sequence[tuple[str, str]],
    scorer: Callable[[str], ToxicityScore],
) -> list[ScoreOutcome]:
    """Score ``(id, text)`` items in order; per-item failures become missing
    entries with the reason recorded."""
    outcomes = []
    for item_id, text in items:
        try:
            outcomes.append(ScoreOutcome(id=item_id, score=scorer(text).value))
        except Exception as exc:  # per-item failures must not stop the corpus
            logger.warning("scoring failed for %s: %s", item_id, exc)
            outcomes.append(ScoreOutcome(id=item_id, score=None, error=str(exc)))
    return outcomes
