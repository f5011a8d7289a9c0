"""Audit-log ingestion: ProcMon CSV and canonical JSONL into event triples.

Every record becomes a :class:`CanonicalEvent`, a ``(subject, action, object)``
triple with a timestamp in integer microseconds plus bookkeeping fields.
``sessionize`` turns a flat event list into fixed-size chronological windows
for the sequence models downstream.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, asdict
from typing import Iterable

PROCMON_REQUIRED = ["Time of Day", "Process Name", "PID", "Operation", "Path"]
PROCMON_OPTIONAL = ["Result", "Detail", "Label"]

JSONL_REQUIRED = ("timestamp", "subject", "subject_pid", "action", "object")


class IngestError(Exception):
    """Base class for all parse failures in this module."""


class MissingColumnError(IngestError):
    def __init__(self, column: str):
        super().__init__(f"header lacks required column {column!r}")
        self.column = column


class RowArityError(IngestError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: expected {expected} columns, got {got}")
        self.row = row
        self.expected = expected
        self.got = got


class BadRowError(IngestError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


class MalformedLineError(IngestError):
    def __init__(self, line: int, reason: str = "not a canonical event record"):
        super().__init__(f"line {line}: {reason}")
        self.line = line


@dataclass(frozen=True)
class CanonicalEvent:
    """One audit record: who (subject/pid) did what (action) to what (object)."""

    seq_id: int
    timestamp: int  # integer microseconds (since midnight or epoch)
    subject: str
    subject_pid: int
    action: str
    object: str
    result: str | None = None
    label: str | None = None

    def __post_init__(self):
        if not self.subject or not self.action:
            raise ValueError("subject and action must be nonempty")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")

    def to_record(self) -> dict:
        rec = asdict(self)
        if rec["result"] is None:
            del rec["result"]
        if rec["label"] is None:
            del rec["label"]
        return rec


@dataclass(frozen=True)
class EventSequence:
    """A chronological window of events fed to the sequence models."""

    events: tuple[CanonicalEvent, ...]
    origin: str = ""

    def __len__(self) -> int:
        return len(self.events)


_TIME_OF_DAY = re.compile(
    r"^\s*(\d{1,2}):(\d{2}):(\d{2})(?:[.,](\d{1,9}))?\s*(AM|PM)?\s*$", re.IGNORECASE
)


def parse_time_of_day(text: str) -> int:
    """ProcMon 'Time of Day' (e.g. '4:10:21.1000000 PM') to microseconds."""
    m = _TIME_OF_DAY.match(text)
    if m is None:
        # plain numeric timestamps (already microseconds) also accepted
        try:
            value = int(float(text))
        except ValueError:
            raise ValueError(f"unparseable time of day: {text!r}") from None
        if value < 0:
            raise ValueError(f"negative timestamp: {text!r}")
        return value
    hour, minute, second = int(m.group(1)), int(m.group(2)), int(m.group(3))
    frac = m.group(4) or ""
    ampm = (m.group(5) or "").upper()
    if ampm == "PM" and hour != 12:
        hour += 12
    elif ampm == "AM" and hour == 12:
        hour = 0
    if hour > 23 or minute > 59 or second > 59:
        raise ValueError(f"out-of-range time of day: {text!r}")
    # ProcMon writes up to 7 fractional digits (100 ns); keep microseconds
    micros = int(frac.ljust(6, "0")[:6]) if frac else 0
    return ((hour * 60 + minute) * 60 + second) * 1_000_000 + micros


def parse_procmon_csv(
    text: str, strict: bool = False, warnings: list[str] | None = None
) -> list[CanonicalEvent]:
    """Parse a ProcMon CSV export (RFC-4180 quoting) into canonical events.

    Lenient mode (default) skips malformed data rows, optionally recording a
    message per skip in ``warnings``; strict mode raises on the first bad row.
    A header missing a required column is always an error.
    """
    reader = csv.reader(io.StringIO(text.replace("\x00", "")))
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumnError(PROCMON_REQUIRED[0]) from None
    except csv.Error as exc:
        raise BadRowError(0, f"unreadable header: {exc}") from None
    header = [h.strip().lstrip("﻿") for h in header]
    index = {name: i for i, name in enumerate(header)}
    for column in PROCMON_REQUIRED:
        if column not in index:
            raise MissingColumnError(column)

    def column(row, name):
        i = index.get(name)
        return row[i] if i is not None and i < len(row) else None

    events: list[CanonicalEvent] = []
    row_no = 0
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            # the csv reader cannot resume after a malformed record
            if strict:
                raise BadRowError(row_no + 1, str(exc)) from None
            if warnings is not None:
                warnings.append(f"row {row_no + 1}: aborted ({exc})")
            break
        row_no += 1
        if not row:
            continue
        try:
            if len(row) != len(header):
                raise RowArityError(row_no, len(header), len(row))
            timestamp = parse_time_of_day(row[index["Time of Day"]])
            pid_text = row[index["PID"]].strip().replace(",", "")
            subject_pid = int(pid_text)
            label = column(row, "Label")
            events.append(
                CanonicalEvent(
                    seq_id=len(events),
                    timestamp=timestamp,
                    subject=row[index["Process Name"]].strip(),
                    subject_pid=subject_pid,
                    action=row[index["Operation"]].strip(),
                    object=row[index["Path"]].strip(),
                    result=column(row, "Result"),
                    label=label if label else None,
                )
            )
        except IngestError as exc:
            if strict:
                raise
            if warnings is not None:
                warnings.append(f"skipped: {exc}")
        except ValueError as exc:
            if strict:
                raise BadRowError(row_no, str(exc)) from exc
            if warnings is not None:
                warnings.append(f"row {row_no}: skipped ({exc})")
    return events


def parse_canonical_jsonl(
    text: str, strict: bool = True, warnings: list[str] | None = None
) -> list[CanonicalEvent]:
    """Parse line-delimited canonical records; inverse of write_canonical_jsonl."""
    events: list[CanonicalEvent] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            err = MalformedLineError(line_no, f"invalid JSON ({exc.msg})")
            if strict:
                raise err from None
            if warnings is not None:
                warnings.append(str(err))
            continue
        if not isinstance(rec, dict) or any(k not in rec for k in JSONL_REQUIRED):
            err = MalformedLineError(line_no)
            if strict:
                raise err
            if warnings is not None:
                warnings.append(str(err))
            continue
        try:
            events.append(
                CanonicalEvent(
                    seq_id=int(rec.get("seq_id", len(events))),
                    timestamp=int(rec["timestamp"]),
                    subject=str(rec["subject"]),
                    subject_pid=int(rec["subject_pid"]),
                    action=str(rec["action"]),
                    object=str(rec["object"]),
                    result=rec.get("result"),
                    label=rec.get("label"),
                )
            )
        except (TypeError, ValueError) as exc:
            err = MalformedLineError(line_no, str(exc))
            if strict:
                raise err from None
            if warnings is not None:
                warnings.append(str(err))
    return events


def write_canonical_jsonl(events: Iterable[CanonicalEvent]) -> str:
    return "".join(json.dumps(e.to_record(), sort_keys=True) + "\n" for e in events)


def sessionize(
    events: list[CanonicalEvent],
    max_window: int = 256,
    per_pid: bool = False,
    origin: str = "",
) -> list[EventSequence]:
    """Sort events chronologically and chunk into windows of at most max_window.

    The default is a single global timeline; ``per_pid`` groups by subject pid
    first (each group windowed independently). Either way every input event
    appears in exactly one output sequence.
    """
    if max_window < 1:
        raise ValueError("max_window must be >= 1")
    ordered = sorted(events, key=lambda e: (e.timestamp, e.seq_id))
    groups: list[list[CanonicalEvent]]
    if per_pid:
        by_pid: dict[int, list[CanonicalEvent]] = {}
        for e in ordered:
            by_pid.setdefault(e.subject_pid, []).append(e)
        groups = [by_pid[pid] for pid in sorted(by_pid)]
    else:
        groups = [ordered] if ordered else []
    sequences: list[EventSequence] = []
    for group in groups:
        for start in range(0, len(group), max_window):
            window = tuple(group[start : start + max_window])
            sequences.append(
                EventSequence(events=window, origin=f"{origin}#{len(sequences)}")
            )
    return sequences
