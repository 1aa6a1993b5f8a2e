"""Uniform interface to a generative model plus a deterministic scripted mock.

Two implementations are provided:

* :class:`HttpBackend` -- an OpenAI-style chat-completions client. It may fetch
  multi-word chunks per request but exposes strict word-at-a-time semantics
  through an internal per-prompt buffer.
* :class:`MockBackend` -- replays scripts loaded from a JSON file keyed by
  prompt id. Consuming past the end of a script is an error, never silent
  repetition, so fixture runs are byte-reproducible.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import requests

from . import prompts

logger = logging.getLogger("srd.backend")

API_KEY_ENV = "SRD_API_KEY"

# Marker the rewrite parser looks for in model responses.
REWRITE_MARKER = "Rewritten Text:"

# Literal end-of-sequence entry allowed in mock generation scripts.
EOS_TOKEN = "[EOS]"


class BackendError(Exception):
    """Base class for backend failures."""


class BackendUnavailableError(BackendError):
    """Transport kept failing after the configured retries."""


class CapabilityMissingError(BackendError):
    """The backend cannot serve the requested operation (e.g. no logprobs)."""


class EmptyRewriteError(BackendError):
    """The model produced no usable rewrite after retries."""


class ScriptError(BackendError):
    """A mock script was missing or consumed past its end."""


class Verdict(enum.Enum):
    TOXIC = "toxic"
    BENIGN = "benign"


@dataclass
class BackendConfig:
    """Connection and sampling settings shared by all backend operations."""

    endpoint_url: str = "http://localhost:8000"
    model_name: str = "local-model"
    generation_temperature: float = 1.0
    judgment_temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 30.0
    parallelism_limit: int = 4
    max_tokens: int = 128

    def __post_init__(self) -> None:
        if self.generation_temperature < 0 or self.judgment_temperature < 0:
            raise ValueError("temperatures must be >= 0")
        if self.parallelism_limit < 1:
            raise ValueError("parallelism_limit must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def parse_verdict(response: str) -> Optional[Verdict]:
    """Map a model response to a verdict by its leading token.

    Accepts Yes/No answers from the semantic-check protocol and 1/0 answers
    from the detection protocol; anything else is unparseable (None).
    """
    lead = response.strip().lower()
    if lead.startswith("yes") or lead.startswith("1"):
        return Verdict.TOXIC
    if lead.startswith("no") or lead.startswith("0"):
        return Verdict.BENIGN
    return None


def parse_rewrite(response: str) -> str:
    """Extract the rewritten text from a rewrite response.

    Takes the text after the final ``Rewritten Text:`` marker with surrounding
    quotes stripped; when the marker is absent the whole trimmed response is
    the rewrite.
    """
    idx = response.rfind(REWRITE_MARKER)
    if idx < 0:
        return response.strip()
    tail = response[idx + len(REWRITE_MARKER):].strip()
    if len(tail) >= 2 and tail[0] == '"' and tail[-1] == '"':
        tail = tail[1:-1].strip()
    return tail


class Backend:
    """Shared parsing/retry behavior; transports implement the ``_*`` hooks."""

    def __init__(self, cfg: BackendConfig) -> None:
        self.cfg = cfg

    # -------------------- transport hooks --------------------

    def _generate_word(self, prompt: str, prefix: Sequence[str], prompt_id: Optional[str]) -> Optional[str]:
        raise NotImplementedError

    def _judgment_response(self, messages: list[dict], prompt_id: Optional[str]) -> str:
        raise NotImplementedError

    def _extraction_response(self, text: str, prompt_id: Optional[str]) -> str:
        raise NotImplementedError

    def _rewrite_response(self, prompt: str, toxic_text: str, prompt_id: Optional[str]) -> str:
        raise NotImplementedError

    def token_logprobs(self, text: str, prompt_id: Optional[str] = None) -> list[float]:
        raise NotImplementedError

    # -------------------- public operations --------------------

    def next_word(
        self,
        prompt: str,
        prefix: Sequence[str] = (),
        prompt_id: Optional[str] = None,
    ) -> Optional[str]:
        """Next whitespace-delimited word of the continuation, or None at EOS."""
        if not prompt:
            raise ValueError("prompt must be non-empty")
        word = self._generate_word(prompt, prefix, prompt_id)
        if word is None:
            return None
        if not word or any(ch.isspace() for ch in word):
            raise BackendError(f"backend produced an invalid word: {word!r}")
        return word

    def judge_toxic(
        self,
        text: str,
        prompt_id: Optional[str] = None,
        *,
        protocol: str = "semantic",
    ) -> Verdict:
        """Binary toxicity judgment over ``text``.

        ``protocol`` selects the prompt: "semantic" asks for Yes/No, "detection"
        asks for 1/0. Unparseable responses are retried up to max_retries and
        then classified toxic (conservative) with a logged warning.
        """
        if not text:
            raise ValueError("text must be non-empty")
        builder = prompts.semantic_check_messages if protocol == "semantic" else prompts.detection_messages
        for _ in range(1 + self.cfg.max_retries):
            response = self._judgment_response(builder(text), prompt_id)
            verdict = parse_verdict(response)
            if verdict is not None:
                return verdict
        logger.warning("unparseable judgment after retries; classifying as toxic: %.60r", text)
        return Verdict.TOXIC

    def extract_signals(self, text: str, prompt_id: Optional[str] = None) -> str:
        """Raw response to the numbered-list flagging prompt (parsing is the caller's)."""
        if not text:
            raise ValueError("text must be non-empty")
        return self._extraction_response(text, prompt_id)

    def rewrite(self, prompt: str, toxic_text: str, prompt_id: Optional[str] = None) -> str:
        """Non-toxic rewrite of ``toxic_text``; empty output after retries is an error."""
        if not toxic_text:
            raise ValueError("toxic_text must be non-empty")
        for _ in range(1 + self.cfg.max_retries):
            response = self._rewrite_response(prompt, toxic_text, prompt_id)
            rewritten = parse_rewrite(response)
            if rewritten:
                return rewritten
        raise EmptyRewriteError(f"model returned no rewrite for: {toxic_text!r}")


# -------------------- scripted mock --------------------


@dataclass
class MockScript:
    """Per-prompt scripted behavior for one prompt id."""

    generation: deque
    judgments: deque
    rewrites: deque
    extractions: deque
    logprobs: deque
    eos_delivered: bool = False

    @classmethod
    def from_dict(cls, entry: dict) -> "MockScript":
        return cls(
            generation=deque(entry.get("generation", [])),
            judgments=deque(entry.get("judgments", [])),
            rewrites=deque(entry.get("rewrites", [])),
            extractions=deque(entry.get("extractions", [])),
            logprobs=deque(entry.get("logprobs", [])),
        )


class MockBackend(Backend):
    """Deterministic scripted backend.

    The script maps prompt id -> {generation[], judgments[], rewrites[],
    extractions[], logprobs[]}. Each queue is consumed in order by the
    corresponding operation; an exhausted generation script yields EOS exactly
    once, anything consumed beyond that raises :class:`ScriptError`. Every call
    and response is recorded in a per-prompt transcript.
    """

    def __init__(self, script: dict, cfg: Optional[BackendConfig] = None) -> None:
        super().__init__(cfg or BackendConfig(model_name="mock"))
        self._scripts = {pid: MockScript.from_dict(entry) for pid, entry in script.items()}
        self._transcripts: dict[str, list[str]] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, cfg: Optional[BackendConfig] = None) -> "MockBackend":
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f), cfg)

    def _script(self, prompt_id: Optional[str], prompt: str) -> tuple[str, MockScript]:
        key = prompt_id if prompt_id is not None else prompt
        script = self._scripts.get(key)
        if script is None:
            raise ScriptError(f"no mock script for prompt id {key!r}")
        return key, script

    def _record(self, key: str, op: str, detail: str) -> None:
        with self._lock:
            self._transcripts.setdefault(key, []).append(f"{op} {detail}")

    def transcript(self) -> str:
        """Canonical transcript of all calls, one line each, ordered by prompt id."""
        with self._lock:
            lines = []
            for key in sorted(self._transcripts):
                for entry in self._transcripts[key]:
                    lines.append(f"{key}\t{entry}")
        return "\n".join(lines) + ("\n" if lines else "")

    def generation_calls(self, prompt_id: str) -> int:
        with self._lock:
            return sum(1 for e in self._transcripts.get(prompt_id, []) if e.startswith("next_word"))

    # -------------------- hooks --------------------

    def _generate_word(self, prompt, prefix, prompt_id):
        key, script = self._script(prompt_id, prompt)
        if not script.generation:
            if script.eos_delivered:
                raise ScriptError(f"generation script for {key!r} consumed past EOS")
            script.eos_delivered = True
            self._record(key, "next_word", "-> EOS")
            return None
        word = script.generation.popleft()
        if word == EOS_TOKEN:
            script.eos_delivered = True
            self._record(key, "next_word", "-> EOS")
            return None
        self._record(key, "next_word", f"-> {word}")
        return word

    def _pop(self, key: str, script_queue: deque, name: str) -> str:
        if not script_queue:
            raise ScriptError(f"{name} script for {key!r} exhausted")
        return script_queue.popleft()

    def _judgment_response(self, messages, prompt_id):
        if prompt_id is None:
            raise ScriptError("mock judgments require a prompt_id")
        key, script = self._script(prompt_id, "")
        response = self._pop(key, script.judgments, "judgments")
        self._record(key, "judge", f"-> {response}")
        return response

    def _extraction_response(self, text, prompt_id):
        if prompt_id is None:
            raise ScriptError("mock extractions require a prompt_id")
        key, script = self._script(prompt_id, "")
        response = self._pop(key, script.extractions, "extractions")
        self._record(key, "extract", f"-> {json.dumps(response)}")
        return response

    def _rewrite_response(self, prompt, toxic_text, prompt_id):
        key, script = self._script(prompt_id, prompt)
        response = self._pop(key, script.rewrites, "rewrites")
        self._record(key, "rewrite", f"-> {response}")
        return response

    def token_logprobs(self, text, prompt_id=None):
        if not text:
            raise ValueError("text must be non-empty")
        if prompt_id is None:
            raise ScriptError("mock logprobs require a prompt_id")
        key, script = self._script(prompt_id, "")
        if not script.logprobs:
            raise CapabilityMissingError(f"no scripted logprobs for {key!r}")
        values = script.logprobs.popleft()
        if not values:
            raise BackendError(f"scripted logprob sequence for {key!r} is empty")
        self._record(key, "logprobs", f"-> {len(values)} values")
        return [float(v) for v in values]


# -------------------- HTTP chat-completions client --------------------


class HttpBackend(Backend):
    """Client for an OpenAI-compatible ``/v1/chat/completions`` endpoint.

    Bearer token comes from the SRD_API_KEY environment variable. Concurrent
    callers are throttled to ``cfg.parallelism_limit`` in-flight requests.
    """

    RETRY_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(self, cfg: BackendConfig, api_key: Optional[str] = None) -> None:
        super().__init__(cfg)
        self._session = requests.Session()
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._gate = threading.BoundedSemaphore(cfg.parallelism_limit)
        self._buffers: dict[str, dict] = {}
        self._buffer_lock = threading.Lock()
        self._backoff = 0.5

    # -------------------- transport --------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _post_chat(self, messages: list[dict], temperature: float, want_logprobs: bool = False) -> dict:
        body = {
            "model": self.cfg.model_name,
            "messages": messages,
            "max_tokens": self.cfg.max_tokens,
            "temperature": temperature,
        }
        if want_logprobs:
            body["logprobs"] = True
        url = self.cfg.endpoint_url.rstrip("/") + "/v1/chat/completions"
        last_error: Optional[str] = None
        for attempt in range(1 + self.cfg.max_retries):
            if attempt:
                time.sleep(self._backoff * attempt)
            try:
                with self._gate:
                    resp = self._session.post(
                        url, headers=self._headers(), json=body, timeout=self.cfg.timeout
                    )
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if resp.status_code in self.RETRY_STATUS:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code // 100 != 2:
                raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"non-JSON response from {url}: {exc}") from exc
        raise BackendUnavailableError(f"backend unavailable after {1 + self.cfg.max_retries} attempts: {last_error}")

    @staticmethod
    def _choice(data: dict) -> dict:
        choices = data.get("choices") or []
        if not choices:
            return {}
        return choices[0]

    def _completion_text(self, data: dict) -> str:
        message = self._choice(data).get("message") or {}
        content = message.get("content")
        return content if isinstance(content, str) else ""

    # -------------------- word buffering --------------------

    def _generate_word(self, prompt, prefix, prompt_id):
        key = prompt_id if prompt_id is not None else prompt
        prefix_key = tuple(prefix)
        with self._buffer_lock:
            entry = self._buffers.get(key)
        if entry is not None and entry["prefix"] == prefix_key:
            if entry["words"]:
                word = entry["words"].popleft()
                entry["prefix"] = prefix_key + (word,)
                return word
            if entry["eos"]:
                return None
        data = self._post_chat(
            prompts.continuation_messages(prompt, list(prefix)),
            self.cfg.generation_temperature,
        )
        text = self._completion_text(data)
        words = text.split()
        if not words:
            return None
        finished = self._choice(data).get("finish_reason") == "stop"
        entry = {"prefix": prefix_key, "words": deque(words), "eos": finished}
        word = entry["words"].popleft()
        entry["prefix"] = prefix_key + (word,)
        with self._buffer_lock:
            self._buffers[key] = entry
        return word

    # -------------------- remaining hooks --------------------

    def _judgment_response(self, messages, prompt_id):
        return self._completion_text(self._post_chat(messages, self.cfg.judgment_temperature))

    def _extraction_response(self, text, prompt_id):
        data = self._post_chat(prompts.signal_extraction_messages(text), self.cfg.judgment_temperature)
        return self._completion_text(data)

    def _rewrite_response(self, prompt, toxic_text, prompt_id):
        data = self._post_chat(prompts.rewrite_messages(prompt, toxic_text), self.cfg.generation_temperature)
        return self._completion_text(data)

    def token_logprobs(self, text, prompt_id=None):
        if not text:
            raise ValueError("text must be non-empty")
        data = self._post_chat(
            [{"role": "user", "content": text}],
            self.cfg.judgment_temperature,
            want_logprobs=True,
        )
        logprobs = self._choice(data).get("logprobs")
        if not logprobs or "content" not in logprobs:
            raise CapabilityMissingError("backend response carries no token logprobs")
        values = [item.get("logprob") for item in logprobs["content"]]
        if not values or any(v is None for v in values):
            raise BackendError("malformed logprobs in backend response")
        return [float(v) for v in values]
