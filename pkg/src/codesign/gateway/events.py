"""Append-only JSON-lines event log with dedup keys and crash recovery.

One event per line: ``{"seq", "ts", "kind", "payload", "dedup_key"}``. The
sequence starts at 1 and is gapless; appends are flushed and fsynced before
they are acknowledged. A torn trailing line (partial write from a crash) is
dropped on load; anything else malformed raises ``CorruptLog`` with the
offending sequence number. Timestamps are wall-clock metadata and are
excluded from log hashing so deterministic runs compare byte-equal.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

from ..errors import CorruptLog, ValidationFailed

EVENT_KINDS = (
    "ProjectCreated",
    "FilterApplied",
    "ItemsIngested",
    "Curated",
    "SessionOpened",
    "InteractionSubmitted",
    "RoundIssued",
    "ModelTrained",
    "TreePruned",
    "ManifestExported",
    "ItemSaved",
)


@dataclass(frozen=True)
class Event:
    seq: int
    ts: float
    kind: str
    payload: dict
    dedup_key: str | None = None

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "ts": self.ts,
            "kind": self.kind,
            "payload": self.payload,
            "dedup_key": self.dedup_key,
        }

    def canonical(self) -> str:
        """Serialization used for hashing; timestamps excluded."""
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "payload": self.payload,
             "dedup_key": self.dedup_key},
            sort_keys=True,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(
            seq=int(d["seq"]),
            ts=float(d["ts"]),
            kind=d["kind"],
            payload=d["payload"],
            dedup_key=d.get("dedup_key"),
        )


def log_hash(events: Sequence[Event]) -> str:
    h = hashlib.sha256()
    for e in events:
        h.update(e.canonical().encode())
        h.update(b"\n")
    return h.hexdigest()


class EventLog:
    """File-backed append-only log; one writer, many readers."""

    def __init__(self, path: Path, clock: Callable[[], float] = time.time) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._events: list[Event] = []
        self._dedup: dict[str, int] = {}
        if self.path.exists():
            self._load()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _load(self) -> None:
        raw = self.path.read_bytes()
        lines = raw.split(b"\n")
        # Appends are acknowledged only after the full line (newline included)
        # is fsynced, so an unterminated tail is an unacknowledged torn write:
        # truncate it away. Malformed *terminated* lines are real corruption.
        tail = lines[-1]
        terminated = lines[:-1]
        for i, line in enumerate(terminated):
            try:
                d = json.loads(line.decode("utf-8"))
                event = Event.from_dict(d)
            except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                raise CorruptLog(f"malformed event at line {i + 1}", seq=i + 1) from None
            if event.seq != len(self._events) + 1:
                raise CorruptLog(
                    f"sequence gap: expected {len(self._events) + 1}, got {event.seq}",
                    seq=event.seq,
                )
            if event.kind not in EVENT_KINDS:
                raise CorruptLog(f"unknown event kind {event.kind!r}", seq=event.seq)
            self._events.append(event)
            if event.dedup_key:
                self._dedup.setdefault(event.dedup_key, event.seq)
        if tail != b"":
            keep = len(raw) - len(tail)
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    @property
    def events(self) -> list[Event]:
        return list(self._events)

    def seen_dedup(self, key: str) -> int | None:
        return self._dedup.get(key)

    def event_at(self, seq: int) -> Event:
        return self._events[seq - 1]

    def append(self, kind: str, payload: dict, dedup_key: str | None = None) -> Event:
        """Durably append one event; idempotent on dedup key."""
        if kind not in EVENT_KINDS:
            raise ValidationFailed(f"unknown event kind {kind!r}")
        if dedup_key is not None:
            prior = self._dedup.get(dedup_key)
            if prior is not None:
                return self._events[prior - 1]
        event = Event(
            seq=len(self._events) + 1,
            ts=self._clock(),
            kind=kind,
            payload=payload,
            dedup_key=dedup_key,
        )
        line = json.dumps(event.as_dict(), sort_keys=True)
        self._fh.write(line + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._events.append(event)
        if dedup_key is not None:
            self._dedup[dedup_key] = event.seq
        return event

    def close(self) -> None:
        self._fh.close()


def read_log(path: Path) -> list[Event]:
    """Load a log file read-only (same recovery rules as the writer)."""
    path = Path(path)
    if not path.exists():
        raise ValidationFailed(f"no event log at {path}")
    log = EventLog(path)
    try:
        return log.events
    finally:
        log.close()
