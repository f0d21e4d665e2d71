# mocr/services/records.py
"""Line-delimited JSON records with a per-record sha256 checksum."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Tuple, Union

CHECKSUM_FIELD = "checksum"


def canonical_json(record: Mapping[str, Any]) -> str:
    body = {k: v for k, v in record.items() if k != CHECKSUM_FIELD}
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def checksum(record: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(record).encode("utf-8")).hexdigest()


def seal(record: Mapping[str, Any]) -> Dict[str, Any]:
    return {**record, CHECKSUM_FIELD: checksum(record)}


def verify(record: Mapping[str, Any]) -> bool:
    return record.get(CHECKSUM_FIELD) == checksum(record)


def dumps_line(record: Mapping[str, Any]) -> str:
    return json.dumps(seal(record), sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def append_line(path: Union[str, Path], line: str) -> None:
    """One write per record, flushed and fsynced before returning."""
    with open(path, "a", encoding="utf-8") as f:
        f.write(line)
        f.flush()
        os.fsync(f.fileno())


def iter_lines(path: Union[str, Path]) -> Iterator[Tuple[int, str, bool]]:
    """(line number, text, terminated) for each non-blank line."""
    with open(path, "r", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if line.strip():
                yield n, line.rstrip("\n"), line.endswith("\n")


def repair_tail(path: Union[str, Path]) -> bool:
    """Terminate an intact final line, or drop one torn by an interrupted write."""
    p = Path(path)
    if not p.exists() or p.stat().st_size == 0:
        return False
    data = p.read_bytes()
    if data.endswith(b"\n"):
        return False
    cut = data.rfind(b"\n") + 1
    try:
        json.loads(data[cut:].decode("utf-8"))
    except ValueError:
        with open(p, "r+b") as f:
            f.truncate(cut)
    else:
        with open(p, "ab") as f:
            f.write(b"\n")
    return True
