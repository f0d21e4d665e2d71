# mocr/services/battle_log.py
"""
Append-only arena battle log, schema "mocr-arena/1".

One JSON record per line with a sha256 checksum of its canonical form.
A single writer at a time holds <log>.lock; a line torn by a crash (no
trailing newline) is dropped before the next append.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import List, Set, Union

from filelock import FileLock

from mocr.arena import BattleRecord, completed_records
from mocr.errors import DataError, LogCorruptionError
from mocr.services import records

logger = logging.getLogger(__name__)

SCHEMA = "mocr-arena/1"


def _load(path: Path) -> List[BattleRecord]:
    if not path.exists():
        return []
    out: List[BattleRecord] = []
    for n, text, terminated in records.iter_lines(path):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            if not terminated:
                logger.warning("ignoring torn final line %d in %s", n, path)
                continue
            raise LogCorruptionError(f"malformed record: {e.msg}", line=n, column=e.colno) from None
        if not isinstance(raw, dict):
            raise LogCorruptionError("record is not an object", line=n)
        if raw.get("schema") != SCHEMA:
            raise LogCorruptionError(f"unsupported schema {raw.get('schema')!r}", line=n)
        if not records.verify(raw):
            raise LogCorruptionError("checksum mismatch", line=n)
        try:
            out.append(BattleRecord.from_dict(raw))
        except DataError as e:
            raise LogCorruptionError(e.message, line=n) from None
    return out


class BattleLog:
    def __init__(self, path: Union[str, Path]) -> None:
        self.path = Path(path)
        self.lock = FileLock(str(self.path) + ".lock")
        self._repaired = False

    def load(self) -> List[BattleRecord]:
        with self.lock:
            return _load(self.path)

    def completed_keys(self) -> Set[str]:
        return {r.key for r in completed_records(self.load())}

    def append(self, record: BattleRecord) -> None:
        line = records.dumps_line({"schema": SCHEMA, **record.to_dict()})
        with self.lock:
            if not self._repaired:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                if records.repair_tail(self.path):
                    logger.warning("repaired unterminated final line in %s", self.path)
                self._repaired = True
            records.append_line(self.path, line)
