"""Model-specific toxic-signal lists.

The model flags words in its own free-running output; flags are aggregated by
frequency into a fixed-length list whose membership check drives the
word-level intervention loop.
"""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .backend import Backend, BackendConfig, BackendError

logger = logging.getLogger("srd.signals")

_NUMBERED_LINE = re.compile(r"^\s*\d+\.\s*(.*)$")


class SignalListRunError(Exception):
    """Too many per-prompt failures while building a signal list."""


def normalize_word(raw: str) -> Optional[str]:
    """Canonical single-word form: lowercase, outer non-letters stripped.

    Returns None when nothing survives or the remainder spans multiple words
    (signal entries are single words only).
    """
    word = raw.lower()
    start, end = 0, len(word)
    while start < end and not word[start].isalpha():
        start += 1
    while end > start and not word[end - 1].isalpha():
        end -= 1
    word = word[start:end]
    if not word or any(ch.isspace() for ch in word):
        return None
    return word


def parse_numbered_list(response: str) -> list[str]:
    """Words from ``N. word`` lines of a flagging response; bad lines dropped."""
    words = []
    for line in response.splitlines():
        match = _NUMBERED_LINE.match(line)
        if not match:
            continue
        word = normalize_word(match.group(1))
        if word is not None:
            words.append(word)
    return words


@dataclass
class SignalList:
    """Top-k flagged words with frequency counts.

    Entries are sorted by count descending, ties broken by word ascending,
    and hold at most ``length_k`` items.
    """

    entries: list[tuple[str, int]] = field(default_factory=list)
    length_k: int = 50
    source_model: str = ""

    def __post_init__(self) -> None:
        if self.length_k < 1:
            raise ValueError("length_k must be >= 1")
        if len(self.entries) > self.length_k:
            raise ValueError("more entries than length_k")
        words = [w for w, _ in self.entries]
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in signal list")
        for word, count in self.entries:
            if normalize_word(word) != word:
                raise ValueError(f"entry not normalized: {word!r}")
            if count < 1:
                raise ValueError(f"non-positive count for {word!r}")
        if self.entries != sorted(self.entries, key=lambda e: (-e[1], e[0])):
            raise ValueError("entries not in (count desc, word asc) order")
        self._members = frozenset(words)

    def __len__(self) -> int:
        return len(self.entries)

    def words(self) -> list[str]:
        return [w for w, _ in self.entries]

    def contains(self, word: str) -> bool:
        """Membership of the normalized form; non-normalizable words are absent."""
        normalized = normalize_word(word)
        return normalized is not None and normalized in self._members


def contains(signal_list: SignalList, word: str) -> bool:
    return signal_list.contains(word)


def aggregate(flag_lists: Iterable[Sequence[str]], k: int, source_model: str = "") -> SignalList:
    """Top-k words by total occurrence count across all flag lists.

    Duplicates within one response each count; ties break lexicographically.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts: dict[str, int] = {}
    for flags in flag_lists:
        for raw in flags:
            word = normalize_word(raw)
            if word is None:
                continue
            counts[word] = counts.get(word, 0) + 1
    ranked = sorted(counts.items(), key=lambda e: (-e[1], e[0]))[:k]
    return SignalList(entries=ranked, length_k=k, source_model=source_model)


@dataclass
class BuildStats:
    prompts_total: int = 0
    prompts_failed: int = 0
    total_flags: int = 0
    empty_flag_lists: int = 0


def generate_completion(
    backend: Backend,
    prompt: str,
    prompt_id: Optional[str] = None,
    max_words: int = 256,
) -> str:
    """Free-running continuation (no intervention), capped at ``max_words``."""
    words: list[str] = []
    while len(words) < max_words:
        word = backend.next_word(prompt, words, prompt_id=prompt_id)
        if word is None:
            break
        words.append(word)
    return " ".join(words)


def build_signal_list(
    prompt_items: Sequence[str] | Sequence[tuple[str, str]],
    k: int,
    backend: Backend,
    cfg: Optional[BackendConfig] = None,
    max_words: int = 256,
    parallelism: int = 1,
) -> tuple[SignalList, BuildStats]:
    """Generate, self-flag, and aggregate over prompts.

    Prompts are either plain strings (ids assigned by position) or
    ``(prompt_id, prompt)`` pairs. Extraction may run concurrently; flag
    lists are merged in input order so the result is schedule-independent.
    Per-prompt backend failures are skipped and counted; more than half
    failing aborts the run.
    """
    if not prompt_items:
        raise ValueError("prompts must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if prompt_items and isinstance(prompt_items[0], str):
        prompt_items = [(f"p{i:05d}", p) for i, p in enumerate(prompt_items)]
    model = (cfg or backend.cfg).model_name
    stats = BuildStats(prompts_total=len(prompt_items))

    def flag_one(item: tuple[str, str]) -> Optional[list[str]]:
        prompt_id, prompt = item
        try:
            completion = generate_completion(backend, prompt, prompt_id, max_words)
            response = backend.extract_signals(completion, prompt_id) if completion else ""
        except BackendError as exc:
            logger.warning("signal extraction failed for %s: %s", prompt_id, exc)
            return None
        return parse_numbered_list(response)

    workers = min(parallelism, backend.cfg.parallelism_limit, len(prompt_items))
    if workers == 1:
        outcomes = [flag_one(item) for item in prompt_items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(flag_one, prompt_items))

    flag_lists: list[list[str]] = []
    for flags in outcomes:
        if flags is None:
            stats.prompts_failed += 1
            continue
        if not flags:
            stats.empty_flag_lists += 1
        stats.total_flags += len(flags)
        flag_lists.append(flags)
    if stats.prompts_failed * 2 > stats.prompts_total:
        raise SignalListRunError(
            f"{stats.prompts_failed}/{stats.prompts_total} prompts failed"
        )
    signal_list = aggregate(flag_lists, k, source_model=model)
    if not signal_list.entries:
        logger.warning("aggregation produced an empty signal list")
    return signal_list, stats


# -------------------- persistence --------------------


def _created_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = (
        datetime.fromtimestamp(int(epoch), tz=timezone.utc)
        if epoch
        else datetime.now(tz=timezone.utc)
    )
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def save_signal_list(signal_list: SignalList, path: str | Path, created_at: Optional[str] = None) -> None:
    """Write the JSON signal-list format: stable key order, newline-terminated."""
    doc = {
        "model": signal_list.source_model,
        "length": signal_list.length_k,
        "created_at": created_at if created_at is not None else _created_at(),
        "signals": [{"word": w, "count": c} for w, c in signal_list.entries],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, ensure_ascii=False, indent=2)
        f.write("\n")


def load_signal_list(path: str | Path) -> SignalList:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    entries = [(item["word"], int(item["count"])) for item in doc.get("signals", [])]
    return SignalList(entries=entries, length_k=int(doc["length"]), source_model=doc.get("model", ""))
