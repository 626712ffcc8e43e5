"""Core vocabulary: homes, events, action classification, patterns, rules, feedback.

Everything here is a plain value type. Timestamps are floats (seconds since
the Unix epoch, UTC) so that the mining and matching hot paths never touch
datetime objects; use :func:`parse_timestamp` / :func:`format_timestamp` at
the I/O boundary.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import NamedTuple, Optional, Sequence


# ---------------------------------------------------------------------------
# timestamps


def parse_timestamp(value) -> float:
    """Parse a timestamp into epoch seconds (UTC).

    Accepts epoch numbers, ISO-8601 strings (``T`` or space separator,
    optional fractional seconds, optional ``Z``/offset). Naive datetimes are
    taken as UTC.
    """
    if isinstance(value, (int, float)):
        ts = float(value)
        if ts != ts or ts in (float("inf"), float("-inf")):
            raise ValueError("timestamp must be finite")
        return ts
    if not isinstance(value, str):
        raise ValueError(f"unsupported timestamp type: {type(value).__name__}")
    text = value.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"bad timestamp {value!r}: {exc}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    """Canonical ISO-8601 rendering (UTC, ``Z`` suffix, seconds or micros)."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + "Z"


# ---------------------------------------------------------------------------
# topology

VALID_SOURCES = ("button_click", "sensor")


@dataclass(frozen=True)
class MeterInfo:
    meter_id: str
    name: str = ""


@dataclass(frozen=True)
class ZoneInfo:
    zone_id: str
    name: str  # human-readable room name; may collide across homes


@dataclass(frozen=True)
class SceneInfo:
    scene_id: str
    zone_id: str
    name: str


@dataclass(frozen=True)
class DeviceInfo:
    device_id: str
    zone_id: str
    name: str
    meter_id: str


@dataclass
class HomeTopology:
    """One home: meters per circuit, zones (rooms), scenes and devices."""

    home_id: str
    meters: list[MeterInfo] = field(default_factory=list)
    zones: list[ZoneInfo] = field(default_factory=list)
    scenes: list[SceneInfo] = field(default_factory=list)
    devices: list[DeviceInfo] = field(default_factory=list)

    def validate(self) -> None:
        zone_ids = {z.zone_id for z in self.zones}
        if len(zone_ids) != len(self.zones):
            raise ValueError(f"{self.home_id}: duplicate zone_ids")
        meter_ids = {m.meter_id for m in self.meters}
        for s in self.scenes:
            if s.zone_id not in zone_ids:
                raise ValueError(f"{self.home_id}: scene {s.scene_id} references unknown zone {s.zone_id}")
        for d in self.devices:
            if d.zone_id not in zone_ids:
                raise ValueError(f"{self.home_id}: device {d.device_id} references unknown zone {d.zone_id}")
            if d.meter_id not in meter_ids:
                raise ValueError(f"{self.home_id}: device {d.device_id} references unknown meter {d.meter_id}")

    def room_name(self, zone_id: str) -> str:
        for z in self.zones:
            if z.zone_id == zone_id:
                return z.name
        return zone_id

    def subject_name(self, subject_id: str) -> str:
        for d in self.devices:
            if d.device_id == subject_id:
                return d.name
        for s in self.scenes:
            if s.scene_id == subject_id:
                return s.name
        return subject_id


# ---------------------------------------------------------------------------
# events


class EventRecord(NamedTuple):
    """One timestamped occurrence (scene call or sensor event) in one zone.

    The atom of all processing. NamedTuple keeps 4M-event corpora cheap.
    """

    timestamp: float  # epoch seconds, UTC
    home_id: str
    zone_id: str
    subject_id: str  # scene_id or device_id
    event_name: str
    source: str = "button_click"

    @property
    def identity(self) -> "EventIdentity":
        return EventIdentity(self.zone_id, self.subject_id, self.event_name)


class EventIdentity(NamedTuple):
    """Equality key for mining and matching: two records with equal identity
    are the same event. Zone is part of the key so same-named devices in
    different rooms stay distinct."""

    zone_id: str
    subject_id: str
    event_name: str


def event_identity(e: EventRecord) -> EventIdentity:
    return EventIdentity(e.zone_id, e.subject_id, e.event_name)


def event_sort_key(e: EventRecord):
    """Total order within a home: timestamp, ties broken by a stable key."""
    return (e.timestamp, e.subject_id, e.event_name, e.zone_id, e.source)


class EventClass(Enum):
    ACTION = "action"
    NORMAL = "normal"


class ActionCategory(Enum):
    ABSENT = "absent"
    DIM = "dim"
    OFF = "off"
    SLEEP = "sleep"
    STANDBY = "standby"


@dataclass(frozen=True)
class CatalogEntry:
    """A keyword matched case-insensitively on word boundaries."""

    keyword: str
    category: ActionCategory


class ActionCatalog:
    """Maps event names to energy-saving categories.

    Entries are keyword rules; an event is an action iff some keyword occurs
    as a whole word (case-insensitive) in its name.
    """

    def __init__(self, entries: Sequence[CatalogEntry]):
        self.entries = tuple(entries)
        self._rules = [
            (re.compile(r"(?<![0-9A-Za-z])" + re.escape(e.keyword) + r"(?![0-9A-Za-z])", re.IGNORECASE), e.category)
            for e in self.entries
        ]

    def category_for(self, event_name: str) -> Optional[ActionCategory]:
        for rx, category in self._rules:
            if rx.search(event_name):
                return category
        return None

    def classify(self, event_name: str) -> EventClass:
        return EventClass.ACTION if self.category_for(event_name) is not None else EventClass.NORMAL


#: Default keyword rules for the five categories. Deployments with other
#: naming conventions pass their own catalog.
DEFAULT_CATALOG = ActionCatalog(
    [
        CatalogEntry("absent", ActionCategory.ABSENT),
        CatalogEntry("leaving", ActionCategory.ABSENT),
        CatalogEntry("dim", ActionCategory.DIM),
        CatalogEntry("dimmed", ActionCategory.DIM),
        CatalogEntry("off", ActionCategory.OFF),
        CatalogEntry("sleep", ActionCategory.SLEEP),
        CatalogEntry("goodnight", ActionCategory.SLEEP),
        CatalogEntry("standby", ActionCategory.STANDBY),
        CatalogEntry("stand-by", ActionCategory.STANDBY),
    ]
)


def classify_event(e: EventRecord, catalog: ActionCatalog = DEFAULT_CATALOG) -> EventClass:
    """Action iff the event name matches a catalog entry; Normal otherwise."""
    return catalog.classify(e.event_name)


# ---------------------------------------------------------------------------
# patterns and rules


@dataclass(frozen=True)
class Pattern:
    """An ordered list of event identities with support metadata."""

    items: tuple[EventIdentity, ...]
    classes: tuple[EventClass, ...]
    support_count: int
    support: float  # support_count / total events of the home
    home_id: str
    first_mined: float = 0.0  # epoch seconds

    def __post_init__(self):
        if len(self.items) != len(self.classes):
            raise ValueError("items and classes length mismatch")

    @property
    def length(self) -> int:
        return len(self.items)

    @property
    def action_count(self) -> int:
        return sum(1 for c in self.classes if c is EventClass.ACTION)

    @property
    def normal_count(self) -> int:
        return sum(1 for c in self.classes if c is EventClass.NORMAL)

    def key(self) -> tuple[EventIdentity, ...]:
        return self.items


class RuleState(Enum):
    ACTIVE = "active"
    BELOW_THRESHOLD = "below_threshold"
    EXCLUDED_BY_FEEDBACK = "excluded_by_feedback"
    EXCLUDED_BY_POLICY = "excluded_by_policy"


@dataclass
class AssociationRule:
    """Condition X (normal events, in order) -> action Y (single action)."""

    rule_id: str
    home_id: str
    condition: tuple[EventIdentity, ...]  # X, length >= 2, no actions
    action: EventIdentity  # Y
    action_category: Optional[ActionCategory]
    action_position: int  # index of Y in the source pattern
    source_items: tuple[EventIdentity, ...]  # the full mined pattern
    pattern_support: float
    pattern_support_count: int
    pattern_length: int
    mined_date: float
    confidence: float = float("nan")
    priority: float = 0.0
    state: RuleState = RuleState.ACTIVE

    def __post_init__(self):
        if len(self.condition) < 2:
            raise ValueError("rule condition must have at least 2 events")
        if self.action in self.condition:
            raise ValueError("rule action must not appear in its condition")

    @property
    def is_active(self) -> bool:
        return self.state is RuleState.ACTIVE

    def sort_key(self):
        """Priority order with deterministic tie-breaks: priority desc,
        support desc, newer mined date, smaller action position, rule_id."""
        return (-self.priority, -self.pattern_support, -self.mined_date, self.action_position, self.rule_id)


def rule_id_for(home_id: str, source_items: Sequence[EventIdentity], action_position: int) -> str:
    h = hashlib.sha1()
    h.update(home_id.encode())
    for ident in source_items:
        h.update(b"\x1f")
        h.update("\x1e".join(ident).encode())
    h.update(f"@{action_position}".encode())
    return "r-" + h.hexdigest()[:12]


# ---------------------------------------------------------------------------
# recommendations and feedback


class RecommendationStatus(Enum):
    PENDING = "pending"
    USEFUL = "useful"
    NOT_USEFUL = "not_useful"
    EXPIRED = "expired"


@dataclass
class Recommendation:
    """A suggested action for a home, with rule and trigger provenance."""

    recommendation_id: str
    home_id: str
    rule_id: str
    action: EventIdentity
    text: str
    trigger_events: tuple[EventRecord, ...]
    created_at: float
    status: RecommendationStatus = RecommendationStatus.PENDING

    def __post_init__(self):
        for ev in self.trigger_events:
            if ev.home_id != self.home_id:
                raise ValueError("trigger event from a different home")
            # equality allowed: second-resolution logs can tie the resolving
            # event with the last condition match
            if ev.timestamp > self.created_at:
                raise ValueError("trigger events must not follow created_at")


class Verdict(Enum):
    USEFUL = "useful"
    NOT_USEFUL = "not_useful"


@dataclass(frozen=True)
class FeedbackEntry:
    """One inhabitant verdict attached to a recommendation."""

    recommendation_id: str
    rule_id: str
    verdict: Verdict
    received_at: float


# ---------------------------------------------------------------------------
# operations


def relevance_ok(classes: Sequence[EventClass]) -> bool:
    """A pattern is relevant iff it is at least 3 long, contains an action,
    and keeps two normal events to serve as the condition."""
    if len(classes) < 3:
        return False
    actions = sum(1 for c in classes if c is EventClass.ACTION)
    return actions >= 1 and (len(classes) - actions) >= 2
