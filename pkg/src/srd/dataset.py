"""Contrastive preference pairs: storage, dedup, export, and summaries.

The exported JSON-lines format is what downstream preference-optimization
trainers consume: one object per line with keys ``prompt``, ``chosen``,
``rejected`` and a ``meta`` sub-object. Exports are byte-deterministic for
identical sink contents.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional

from .signals import normalize_word


class PairInvariantError(ValueError):
    """A pair violates the contrastive-pair contract."""


@dataclass
class ContrastivePair:
    """One (prompt, rejected toxic snapshot, chosen rewrite) training example."""

    prompt: str
    rejected: str
    chosen: str
    trigger_word: str
    prompt_id: str
    toxicity_rejected: Optional[float] = None
    toxicity_chosen: Optional[float] = None

    def validate(self) -> None:
        if not self.chosen:
            raise PairInvariantError("chosen text is empty")
        if self.rejected == self.chosen:
            raise PairInvariantError("chosen equals rejected")
        if normalize_word(self.trigger_word) != self.trigger_word:
            raise PairInvariantError(f"trigger_word not normalized: {self.trigger_word!r}")
        for value in (self.toxicity_rejected, self.toxicity_chosen):
            if value is not None and not 0.0 <= value <= 1.0:
                raise PairInvariantError(f"toxicity score out of range: {value}")

    def key(self) -> tuple[str, str, str]:
        return (self.prompt, self.rejected, self.chosen)


class PairSink:
    """Single-writer pair store with exact-triple deduplication.

    An optional journal path mirrors every accepted pair to disk as it
    arrives (append order, flushed per write), so a crash cannot lose
    acknowledged pairs.
    """

    def __init__(self, journal_path: Optional[str | Path] = None) -> None:
        self._pairs: list[tuple[int, ContrastivePair]] = []
        self._seen: set[tuple[str, str, str]] = set()
        self._occurrence: dict[str, int] = {}
        self.duplicates_dropped = 0
        self._journal: Optional[IO[str]] = None
        if journal_path is not None:
            self._journal = open(journal_path, "a", encoding="utf-8", newline="\n")

    def __len__(self) -> int:
        return len(self._pairs)

    def append(self, pair: ContrastivePair) -> bool:
        """Store ``pair``; duplicates of the (prompt, rejected, chosen) triple are dropped."""
        pair.validate()
        if pair.key() in self._seen:
            self.duplicates_dropped += 1
            return False
        self._seen.add(pair.key())
        occurrence = self._occurrence.get(pair.prompt_id, 0)
        self._occurrence[pair.prompt_id] = occurrence + 1
        self._pairs.append((occurrence, pair))
        if self._journal is not None:
            self._journal.write(_record_line(pair, occurrence))
            self._journal.flush()
        return True

    def ordered_records(self) -> list[tuple[int, ContrastivePair]]:
        """(occurrence, pair) in canonical order: (prompt_id, occurrence index)."""
        return sorted(self._pairs, key=lambda item: (item[1].prompt_id, item[0]))

    def pairs(self) -> list[ContrastivePair]:
        return [pair for _, pair in self.ordered_records()]

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None


def _record_line(pair: ContrastivePair, occurrence: int) -> str:
    meta = {
        "prompt_id": pair.prompt_id,
        "occurrence": occurrence,
        "trigger_word": pair.trigger_word,
    }
    if pair.toxicity_rejected is not None:
        meta["toxicity_rejected"] = pair.toxicity_rejected
    if pair.toxicity_chosen is not None:
        meta["toxicity_chosen"] = pair.toxicity_chosen
    record = {
        "prompt": pair.prompt,
        "chosen": pair.chosen,
        "rejected": pair.rejected,
        "meta": meta,
    }
    return json.dumps(record, ensure_ascii=False) + "\n"


def _open_text(path: str | Path, mode: str) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def export_jsonl(sink: PairSink, path: str | Path) -> int:
    """Write all pairs in canonical order; returns the record count."""
    ordered = sink.ordered_records()
    with _open_text(path, "w") as f:
        for occurrence, pair in ordered:
            f.write(_record_line(pair, occurrence))
    return len(ordered)


def import_jsonl(path: str | Path) -> list[ContrastivePair]:
    """Read an exported pair file back into validated pairs."""
    pairs = []
    with _open_text(path, "r") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                meta = record.get("meta", {})
                pair = ContrastivePair(
                    prompt=record["prompt"],
                    rejected=record["rejected"],
                    chosen=record["chosen"],
                    trigger_word=meta["trigger_word"],
                    prompt_id=meta["prompt_id"],
                    toxicity_rejected=meta.get("toxicity_rejected"),
                    toxicity_chosen=meta.get("toxicity_chosen"),
                )
                pair.validate()
            except (KeyError, ValueError) as exc:
                raise PairInvariantError(f"{path}:{line_no}: {exc}") from exc
            pairs.append(pair)
    return pairs


@dataclass
class DatasetStats:
    pairs: int = 0
    prompts: int = 0
    duplicates_dropped: int = 0
    mean_rejected_words: float = 0.0
    mean_chosen_words: float = 0.0
    trigger_histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "prompts": self.prompts,
            "duplicates_dropped": self.duplicates_dropped,
            "mean_rejected_words": self.mean_rejected_words,
            "mean_chosen_words": self.mean_chosen_words,
            "trigger_histogram": dict(sorted(self.trigger_histogram.items())),
        }


def stats(sink: PairSink) -> DatasetStats:
    pairs = sink.pairs()
    if not pairs:
        return DatasetStats(duplicates_dropped=sink.duplicates_dropped)
    histogram: dict[str, int] = {}
    for pair in pairs:
        histogram[pair.trigger_word] = histogram.get(pair.trigger_word, 0) + 1
    return DatasetStats(
        pairs=len(pairs),
        prompts=len({p.prompt_id for p in pairs}),
        duplicates_dropped=sink.duplicates_dropped,
        mean_rejected_words=sum(len(p.rejected.split()) for p in pairs) / len(pairs),
        mean_chosen_words=sum(len(p.chosen.split()) for p in pairs) / len(pairs),
        trigger_histogram=histogram,
    )
