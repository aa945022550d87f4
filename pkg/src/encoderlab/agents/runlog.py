"""JSON-lines event log shared by training, evaluation and probes."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional


class RunLog:
    """Append-only list of records, mirrored to a file when ``path`` is given."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path: Optional[Path] = Path(path) if path is not None else None
        self._fh = open(self.path, "a", encoding="utf-8") if self.path else None

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r.get("kind") == kind]


def read_runlog(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_runlog(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
