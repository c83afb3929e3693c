"""Line-oriented JSON helpers shared by every pipeline stage."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator


def dumps_line(obj: Any) -> str:
    """Serialize one record as a compact, key-sorted JSON line."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ": "))


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    """Write records one per line; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(dumps_line(rec))
            f.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[Any]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)
