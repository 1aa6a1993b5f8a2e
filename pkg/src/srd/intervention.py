"""Word-level intervention loop over streaming generation.

Each prompt runs a loop of: fetch the next word, check it against the signal
list, and on a hit ask the model whether the text so far is toxic. Toxic text
is snapshotted, rewritten, and generation continues from the rewrite, with the
(snapshot, rewrite) pair recorded for preference training. Every decision is
captured in an ordered audit trace.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

from .backend import Backend, BackendUnavailableError, EmptyRewriteError, Verdict
from .dataset import ContrastivePair, PairInvariantError, PairSink
from .signals import SignalList, normalize_word

logger = logging.getLogger("srd.intervention")

EVENT_KINDS = (
    "word_emitted",
    "signal_hit",
    "semantic_benign",
    "semantic_toxic",
    "rewrite_applied",
    "rewrite_failed",
    "eos",
    "max_words_reached",
)


@dataclass
class InterventionConfig:
    max_words: int = 64
    rewrite_recheck: bool = True
    max_rewrite_attempts: int = 2

    def __post_init__(self) -> None:
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")
        if self.max_rewrite_attempts < 1:
            raise ValueError("max_rewrite_attempts must be >= 1")


@dataclass
class TraceEvent:
    kind: str
    payload: str
    word_index: int

    def to_record(self, prompt_id: str) -> dict:
        return {
            "prompt_id": prompt_id,
            "kind": self.kind,
            "word_index": self.word_index,
            "payload": self.payload,
        }


@dataclass
class GenerationState:
    prompt: str
    prompt_id: str = "p00000"
    words: list[str] = field(default_factory=list)
    cursor: int = 0
    pending_pairs: list[ContrastivePair] = field(default_factory=list)
    trace: list[TraceEvent] = field(default_factory=list)
    terminated: bool = False

    def emit(self, kind: str, payload: str, word_index: int) -> None:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown trace event kind: {kind!r}")
        self.trace.append(TraceEvent(kind=kind, payload=payload, word_index=word_index))

    def text(self) -> str:
        return " ".join(self.words)


def _rewrite_episode(
    state: GenerationState,
    snapshot: str,
    cfg: InterventionConfig,
    backend: Backend,
) -> Optional[str]:
    """Run rewrite attempts for one toxic episode; returns the kept rewrite.

    With rechecking enabled, a rewrite still judged toxic is retried up to
    max_rewrite_attempts; the last rewrite is kept either way, with a
    rewrite_failed event marking exhaustion. Returns None when no usable
    rewrite (non-empty, different from the snapshot) was produced at all.
    """
    rewritten: Optional[str] = None
    for _ in range(cfg.max_rewrite_attempts):
        try:
            candidate = backend.rewrite(state.prompt, snapshot, prompt_id=state.prompt_id)
        except EmptyRewriteError as exc:
            logger.warning("rewrite failed for %s: %s", state.prompt_id, exc)
            break
        if candidate == snapshot:
            logger.warning("rewrite identical to snapshot for %s", state.prompt_id)
            continue
        rewritten = candidate
        state.emit("rewrite_applied", candidate, len(candidate.split()))
        if not cfg.rewrite_recheck:
            return rewritten
        if backend.judge_toxic(candidate, prompt_id=state.prompt_id) is Verdict.BENIGN:
            return rewritten
    index = len(rewritten.split()) if rewritten else state.cursor
    state.emit("rewrite_failed", rewritten or "", index)
    return rewritten


def step(
    state: GenerationState,
    signals: SignalList,
    cfg: InterventionConfig,
    backend: Backend,
) -> GenerationState:
    """One loop iteration; mutates and returns ``state``."""
    if state.terminated:
        raise ValueError("state already terminated")
    if state.cursor >= cfg.max_words:
        state.emit("max_words_reached", "", state.cursor)
        state.terminated = True
        return state
    word = backend.next_word(state.prompt, state.words, prompt_id=state.prompt_id)
    if word is None:
        state.emit("eos", "", state.cursor)
        state.terminated = True
        return state
    if not signals.contains(word):
        state.words.append(word)
        state.emit("word_emitted", word, state.cursor)
        state.cursor += 1
        return state

    state.emit("signal_hit", word, state.cursor)
    candidate_text = " ".join(state.words + [word])
    verdict = backend.judge_toxic(candidate_text, prompt_id=state.prompt_id)
    if verdict is Verdict.BENIGN:
        state.emit("semantic_benign", word, state.cursor)
        state.words.append(word)
        state.emit("word_emitted", word, state.cursor)
        state.cursor += 1
        return state

    state.emit("semantic_toxic", word, state.cursor)
    snapshot = candidate_text
    rewritten = _rewrite_episode(state, snapshot, cfg, backend)
    if rewritten is None:
        # Nothing usable to contrast; the word stands as generated.
        state.words.append(word)
        state.emit("word_emitted", word, state.cursor)
        state.cursor += 1
        return state

    trigger = normalize_word(word) or word.lower()
    state.pending_pairs.append(
        ContrastivePair(
            prompt=state.prompt,
            rejected=snapshot,
            chosen=rewritten,
            trigger_word=trigger,
            prompt_id=state.prompt_id,
        )
    )
    state.words = rewritten.split()
    state.cursor = len(state.words)
    return state


@dataclass
class PromptResult:
    prompt_id: str
    prompt: str
    final_text: str
    pairs: list[ContrastivePair]
    trace: list[TraceEvent]
    error: Optional[str] = None


def run_prompt(
    prompt: str,
    signals: SignalList,
    cfg: InterventionConfig,
    backend: Backend,
    prompt_id: str = "p00000",
) -> PromptResult:
    """Drive the loop to termination; a backend outage aborts the prompt
    with the partial trace preserved."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    state = GenerationState(prompt=prompt, prompt_id=prompt_id)
    error = None
    try:
        while not state.terminated:
            step(state, signals, cfg, backend)
    except BackendUnavailableError as exc:
        error = str(exc)
        logger.warning("prompt %s aborted: %s", prompt_id, exc)
    return PromptResult(
        prompt_id=prompt_id,
        prompt=prompt,
        final_text=state.text(),
        pairs=list(state.pending_pairs),
        trace=list(state.trace),
        error=error,
    )


@dataclass
class RunReport:
    prompts_total: int = 0
    prompts_failed: int = 0
    words_generated: int = 0
    signal_hits: int = 0
    semantic_checks: int = 0
    rewrites_applied: int = 0
    rewrite_failures: int = 0
    pairs_appended: int = 0
    duplicates_dropped: int = 0

    def to_dict(self) -> dict:
        return {
            "prompts_total": self.prompts_total,
            "prompts_failed": self.prompts_failed,
            "words_generated": self.words_generated,
            "signal_hits": self.signal_hits,
            "semantic_checks": self.semantic_checks,
            "rewrites_applied": self.rewrites_applied,
            "rewrite_failures": self.rewrite_failures,
            "pairs_appended": self.pairs_appended,
            "duplicates_dropped": self.duplicates_dropped,
        }


def write_trace(results: Sequence[PromptResult], stream_or_path: IO[str] | str | Path) -> int:
    """JSON-lines audit log, one event per line, in canonical prompt order."""
    own = isinstance(stream_or_path, (str, Path))
    stream = open(stream_or_path, "w", encoding="utf-8", newline="\n") if own else stream_or_path
    try:
        count = 0
        for result in sorted(results, key=lambda r: r.prompt_id):
            for event in result.trace:
                stream.write(json.dumps(event.to_record(result.prompt_id), ensure_ascii=False) + "\n")
                count += 1
        return count
    finally:
        if own:
            stream.close()


def run_corpus(
    prompt_items: Sequence[tuple[str, str]],
    signals: SignalList,
    cfg: InterventionConfig,
    backend: Backend,
    sink: PairSink,
    parallelism: int = 1,
) -> tuple[RunReport, list[PromptResult]]:
    """Process ``(prompt_id, prompt)`` items with bounded parallelism.

    Pairs are appended to the sink by a single writer in canonical prompt-id
    order, so the sink contents do not depend on worker scheduling.
    """
    if not prompt_items:
        raise ValueError("prompts must be non-empty")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    workers = min(parallelism, backend.cfg.parallelism_limit, len(prompt_items))

    def job(item: tuple[str, str]) -> PromptResult:
        prompt_id, prompt = item
        return run_prompt(prompt, signals, cfg, backend, prompt_id=prompt_id)

    if workers == 1:
        results = [job(item) for item in prompt_items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, prompt_items))

    results.sort(key=lambda r: r.prompt_id)
    report = RunReport(prompts_total=len(results))
    for result in results:
        if result.error is not None:
            report.prompts_failed += 1
        for event in result.trace:
            if event.kind == "word_emitted":
                report.words_generated += 1
            elif event.kind == "signal_hit":
                report.signal_hits += 1
            elif event.kind in ("semantic_benign", "semantic_toxic"):
                report.semantic_checks += 1
            elif event.kind == "rewrite_applied":
                report.rewrites_applied += 1
            elif event.kind == "rewrite_failed":
                report.rewrite_failures += 1
        for pair in result.pairs:
            try:
                if sink.append(pair):
                    report.pairs_appended += 1
                else:
                    report.duplicates_dropped += 1
            except PairInvariantError as exc:
                logger.warning("dropping invalid pair from %s: %s", result.prompt_id, exc)
    return report, results
