"""Input validation helpers shared by estimators, miner and matcher."""

from __future__ import annotations

from typing import Sequence

from .domain import EventRecord, VALID_SOURCES, event_sort_key


def check_event_sequence(
    events: Sequence[EventRecord],
    *,
    single_home: bool = True,
    sort: bool = False,
) -> list[EventRecord]:
    """Validate an event sequence for mining/matching.

    Checks record types, finite timestamps, valid sources and (by default)
    that all events belong to one home and arrive time-ordered. With
    ``sort=True`` an unordered sequence is sorted instead of rejected.
    """
    out = list(events)
    for i, e in enumerate(out):
        if not isinstance(e, EventRecord):
            raise TypeError(f"events[{i}] is {type(e).__name__}, expected EventRecord")
        ts = e.timestamp
        if not isinstance(ts, (int, float)) or ts != ts or ts in (float("inf"), float("-inf")):
            raise ValueError(f"events[{i}] has a non-finite timestamp")
        if e.source not in VALID_SOURCES:
            raise ValueError(f"events[{i}] has unknown source {e.source!r}")
    if single_home and out:
        home = out[0].home_id
        for i, e in enumerate(out):
            if e.home_id != home:
                raise ValueError(f"events[{i}] belongs to home {e.home_id!r}, expected {home!r}")
    if sort:
        out.sort(key=event_sort_key)
    else:
        for i in range(1, len(out)):
            if out[i].timestamp < out[i - 1].timestamp:
                raise ValueError(f"events are not time-ordered at index {i}")
    return out


def check_fraction(name: str, value: float, *, minimum: float = 0.0, maximum: float = 1.0, min_open: bool = False):
    if not isinstance(value, (int, float)) or value != value:
        raise ValueError(f"{name} must be a number, got {value!r}")
    if min_open and value <= minimum:
        raise ValueError(f"{name} must be > {minimum}, got {value}")
    if not min_open and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return float(value)


def check_positive(name: str, value: float):
    if not isinstance(value, (int, float)) or not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)
