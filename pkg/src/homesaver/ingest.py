"""Event-log ingestion: parse raw jsonl/csv logs into validated, time-ordered
per-home sequences persisted in a local file store.

Store layout: one canonical jsonl file per home plus ``index.json`` holding
per-home watermarks and counts. Ingestion is idempotent (exact duplicates are
dropped) and deterministic: byte-identical inputs produce byte-identical
store contents.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional

from .domain import EventRecord, VALID_SOURCES, event_sort_key, format_timestamp, parse_timestamp

INDEX_FILE = "index.json"
STORE_FORMAT = "homesaver-store"
STORE_VERSION = 1

REQUIRED_FIELDS = ("timestamp", "home_id", "zone_id", "subject_id", "event_name")


class ParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


# -- fast timestamp handling (hot path: millions of lines) ------------------

_minute_cache: dict[str, float] = {}


def parse_event_timestamp(raw) -> float:
    """parse_timestamp with a fast path for the canonical ISO shapes."""
    if isinstance(raw, (int, float)):
        return round(float(raw), 6)
    s = raw
    if (
        isinstance(s, str)
        and len(s) >= 19
        and s[4] == "-"
        and s[7] == "-"
        and s[10] in "T "
        and s[13] == ":"
        and s[16] == ":"
    ):
        tail = s[17:]
        if tail.endswith(("Z", "z")):
            tail = tail[:-1]
        try:
            seconds = float(tail)
        except ValueError:
            return parse_timestamp(s)  # offsets and exotic forms
        key = s[:16]
        base = _minute_cache.get(key)
        if base is None:
            try:
                base = datetime(
                    int(s[:4]), int(s[5:7]), int(s[8:10]), int(s[11:13]), int(s[14:16]), tzinfo=timezone.utc
                ).timestamp()
            except ValueError as exc:
                raise ValueError(f"bad timestamp {raw!r}: {exc}") from None
            _minute_cache[key] = base
        return base + seconds
    return parse_timestamp(raw)


_day_cache: dict[int, str] = {}


def format_event_timestamp(ts: float) -> str:
    """format_timestamp with a fast path for whole seconds."""
    i = int(ts)
    if i == ts:
        day, rem = divmod(i, 86400)
        date = _day_cache.get(day)
        if date is None:
            date = datetime.fromtimestamp(day * 86400.0, tz=timezone.utc).strftime("%Y-%m-%d")
            _day_cache[day] = date
        h, rem = divmod(rem, 3600)
        m, s = divmod(rem, 60)
        return f"{date}T{h:02d}:{m:02d}:{s:02d}Z"
    return format_timestamp(ts)


# -- line parsing ------------------------------------------------------------


def _record_from_fields(fields: dict, line_no: int) -> EventRecord:
    for name in REQUIRED_FIELDS:
        if fields.get(name) in (None, ""):
            raise ParseError(line_no, f"missing {name}")
    try:
        ts = parse_event_timestamp(fields["timestamp"])
    except ValueError as exc:
        raise ParseError(line_no, str(exc)) from None
    source = fields.get("source") or "button_click"
    if source not in VALID_SOURCES:
        raise ParseError(line_no, f"unknown source {source!r}")
    return EventRecord(
        timestamp=ts,
        home_id=str(fields["home_id"]),
        zone_id=str(fields["zone_id"]),
        subject_id=str(fields["subject_id"]),
        event_name=str(fields["event_name"]),
        source=source,
    )


def parse_line(line: str, fmt: str = "jsonl", line_no: int = 0) -> EventRecord:
    """Parse one log line. Raises ParseError with the line number and reason."""
    if fmt == "jsonl":
        try:
            fields = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(line_no, f"bad json: {exc.msg}") from None
        if not isinstance(fields, dict):
            raise ParseError(line_no, "expected a json object")
        return _record_from_fields(fields, line_no)
    if fmt == "csv":
        reader = csv.DictReader(io.StringIO(line), fieldnames=list(REQUIRED_FIELDS) + ["source"])
        fields = next(reader)
        return _record_from_fields(fields, line_no)
    raise ValueError(f"unknown log format {fmt!r}")


def _iter_records(path: str, fmt: str) -> Iterator[tuple[int, EventRecord | ParseError]]:
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield line_no, parse_line(line, "jsonl", line_no)
                except ParseError as err:
                    yield line_no, err
    elif fmt == "csv":
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                return
            for fields in reader:
                line_no = reader.line_num
                try:
                    yield line_no, _record_from_fields(fields, line_no)
                except ParseError as err:
                    yield line_no, err
    else:
        raise ValueError(f"unknown log format {fmt!r}")


# -- canonical store serialization -------------------------------------------


class _Escaper(dict):
    def __missing__(self, key):
        out = json.dumps(key, ensure_ascii=False)
        self[key] = out
        return out


def _canonical_line(e: EventRecord, esc: _Escaper) -> str:
    return (
        f'{{"timestamp": "{format_event_timestamp(e.timestamp)}", "home_id": {esc[e.home_id]}, '
        f'"zone_id": {esc[e.zone_id]}, "subject_id": {esc[e.subject_id]}, '
        f'"event_name": {esc[e.event_name]}, "source": {esc[e.source]}}}\n'
    )


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: int = 0
    duplicates: int = 0
    lines: int = 0
    late_unmatched: int = 0  # used by the service's reorder buffer
    errors: list[str] = field(default_factory=list)  # capped sample

    def merge(self, other: "IngestReport") -> "IngestReport":
        self.accepted += other.accepted
        self.rejected += other.rejected
        self.duplicates += other.duplicates
        self.lines += other.lines
        self.late_unmatched += other.late_unmatched
        self.errors = (self.errors + other.errors)[:50]
        return self

    def summary(self) -> str:
        return (
            f"ingest: {self.lines} lines, {self.accepted} accepted, "
            f"{self.duplicates} duplicates, {self.rejected} rejected"
        )

    def as_dict(self) -> dict:
        return {
            "lines": self.lines,
            "accepted": self.accepted,
            "duplicates": self.duplicates,
            "rejected": self.rejected,
            "errors": self.errors,
        }


def _slug(home_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_-]", lambda m: f"%{ord(m.group(0)):02X}", home_id)


class EventStore:
    """Per-home append-ordered event files under one directory."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._index: dict = {"format": STORE_FORMAT, "version": STORE_VERSION, "homes": {}}
        index_path = os.path.join(root, INDEX_FILE)
        if os.path.exists(index_path):
            with open(index_path) as f:
                loaded = json.load(f)
            if loaded.get("format") != STORE_FORMAT:
                raise ValueError(f"{root}: not an event store")
            self._index = loaded

    def _save_index(self) -> None:
        payload = json.dumps(self._index, sort_keys=True, indent=1)
        _atomic_write(os.path.join(self.root, INDEX_FILE), payload)

    def homes(self) -> list[str]:
        return sorted(self._index["homes"])

    def count(self, home_id: str) -> int:
        meta = self._index["homes"].get(home_id)
        return meta["count"] if meta else 0

    def watermark(self, home_id: str) -> Optional[float]:
        meta = self._index["homes"].get(home_id)
        if not meta or meta["watermark"] is None:
            return None
        return parse_event_timestamp(meta["watermark"])

    def _path_for(self, home_id: str) -> str:
        meta = self._index["homes"].get(home_id)
        if meta:
            return os.path.join(self.root, meta["file"])
        return os.path.join(self.root, f"events-{_slug(home_id)}.jsonl")

    def events(self, home_id: str) -> list[EventRecord]:
        meta = self._index["homes"].get(home_id)
        if not meta:
            return []
        out = []
        with open(os.path.join(self.root, meta["file"]), encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                out.append(parse_line(line, "jsonl", line_no))
        return out

    def iter_all(self) -> Iterator[EventRecord]:
        for home_id in self.homes():
            yield from self.events(home_id)

    def append_events(self, home_id: str, batch: Iterable[EventRecord]) -> tuple[int, int]:
        """Merge a batch into a home's file; returns (accepted, duplicates).

        Exact duplicates (full field tuple) are dropped; existing events are
        never reordered or altered, only interleaved with new ones.
        """
        new = sorted(batch, key=event_sort_key)
        if not new:
            return 0, 0
        existing = self.events(home_id)
        merged: list[EventRecord] = []
        accepted = duplicates = 0
        i = j = 0
        last: Optional[EventRecord] = None
        while i < len(existing) or j < len(new):
            if j >= len(new):
                nxt, take_new = existing[i], False
            elif i >= len(existing):
                nxt, take_new = new[j], True
            elif event_sort_key(existing[i]) <= event_sort_key(new[j]):
                nxt, take_new = existing[i], False
            else:
                nxt, take_new = new[j], True
            if take_new:
                j += 1
                # equal records sort adjacently, so one look-back suffices
                if nxt == last:
                    duplicates += 1
                    continue
                accepted += 1
            else:
                i += 1
            merged.append(nxt)
            last = nxt
        if accepted:
            esc = _Escaper()
            path = self._path_for(home_id)
            _atomic_write(path, "".join(_canonical_line(e, esc) for e in merged))
            self._index["homes"][home_id] = {
                "file": os.path.basename(path),
                "count": len(merged),
                "watermark": format_event_timestamp(merged[-1].timestamp),
            }
            self._save_index()
        return accepted, duplicates


def _atomic_write(path: str, payload: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_log(path: str, store: EventStore, fmt: str = "jsonl") -> IngestReport:
    """Ingest one log file into the store; per-line errors accumulate in the
    report, an unreadable file is fatal."""
    report = IngestReport()
    per_home: dict[str, list[EventRecord]] = {}
    for line_no, item in _iter_records(path, fmt):
        report.lines += 1
        if isinstance(item, ParseError):
            report.rejected += 1
            if len(report.errors) < 50:
                report.errors.append(str(item))
        else:
            per_home.setdefault(item.home_id, []).append(item)
    for home_id in sorted(per_home):
        accepted, duplicates = store.append_events(home_id, per_home[home_id])
        report.accepted += accepted
        report.duplicates += duplicates
    return report


def load_path(path: str, store: EventStore, fmt: str = "jsonl") -> IngestReport:
    """Ingest a file, or every matching file in a directory (sorted)."""
    if os.path.isdir(path):
        report = IngestReport()
        suffix = ".jsonl" if fmt == "jsonl" else ".csv"
        names = sorted(n for n in os.listdir(path) if n.endswith(suffix))
        if not names:
            raise FileNotFoundError(f"{path}: no *{suffix} files to ingest")
        for name in names:
            report.merge(load_log(os.path.join(path, name), store, fmt))
        return report
    return load_log(path, store, fmt)
