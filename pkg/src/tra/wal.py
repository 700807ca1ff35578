"""Append-only tab-separated log files.

Both the coordinator log and each resource manager's local log use the same
physical format: one record per line, fields joined by tabs, flushed before the
writer acts on the record. Readers return raw field tuples; record structure is
validated by the consumer that knows the schema.
"""

from __future__ import annotations

import os

from .errors import LogCorruptError


class LogWriter:
    """Flush-on-append writer. Reopening after a simulated crash appends."""

    def __init__(self, path: str) -> None:
        self.path = path
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, *fields: object) -> None:
        parts = [str(f) for f in fields]
        for p in parts:
            if "\t" in p or "\n" in p:
                raise ValueError("log fields must not contain tabs or newlines")
        self._fh.write("\t".join(parts) + "\n")
        # Flush so the record is in the file before the caller acts on it.
        # The crash model kills in-memory state, not the OS, so flush (without
        # fsync) is durable for our purposes.
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def read_records(path: str) -> list[tuple[str, ...]]:
    """Read every record from a log file. Missing file reads as empty."""
    if not os.path.exists(path):
        return []
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                raise LogCorruptError(f"{path}:{lineno}: empty record")
            records.append(tuple(line.split("\t")))
    return records
