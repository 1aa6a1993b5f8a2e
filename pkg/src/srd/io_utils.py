"""Small file-format helpers shared by the CLI and tests."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable


def read_prompts(path: str | Path) -> list[str]:
    """One prompt per line, UTF-8; blank lines skipped."""
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def assign_prompt_ids(prompts: Iterable[str]) -> list[tuple[str, str]]:
    return [(f"p{i:05d}", prompt) for i, prompt in enumerate(prompts)]


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
    return records


def write_jsonl(records: Iterable[dict], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    return count


def write_json(doc: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, ensure_ascii=False, indent=2)
        f.write("\n")
