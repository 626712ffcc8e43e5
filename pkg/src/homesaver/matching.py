"""Real-time rule matching over the event stream.

A finite-state machine instance is spawned when an event matches the first
condition item of an active rule; it advances as later events match the
remaining items in order (within ``max_gap`` of each other), and once the
condition is complete it resolves on the next home event: silently if that
event is the rule's action, otherwise with a recommendation. A timeout
(``action_wait``) emits the recommendation when the home goes quiet instead.

Per event, processing order is fixed: fire expired deadlines, resolve
completed instances, advance partial instances (on the pre-event snapshot,
highest condition index first), then spawn. At most one live instance exists
per (rule, state); a re-match refreshes the slot with the newer instance.
Conflicting emissions at one instant reduce to the single best rule by
priority, and a per-rule cooldown throttles repeats.

The independently written reference matcher lives in
:mod:`homesaver.matching_naive`.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .domain import AssociationRule, EventIdentity, EventRecord, Recommendation, RuleState
from .rules import RuleDB

INFINITY = float("inf")


@dataclass(frozen=True)
class MatchConfig:
    max_gap: float = 600.0  # seconds allowed between condition matches
    action_wait: float = 300.0  # quiet period before a completed condition emits
    cooldown: float = 3600.0  # per-rule minimum spacing between recommendations
    order_insensitive: bool = False  # condition items may match in any order

    def __post_init__(self):
        if self.max_gap <= 0 or self.action_wait <= 0:
            raise ValueError("max_gap and action_wait must be positive")
        if self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")


NamingFn = Callable[[EventIdentity], tuple[str, str]]


def identity_naming(identity: EventIdentity) -> tuple[str, str]:
    return identity.subject_id, identity.zone_id


def recommendation_text(identity: EventIdentity, naming: NamingFn) -> str:
    device, room = naming(identity)
    return f"I would recommend to {identity.event_name} (device {device} in {room})"


def build_recommendation(
    home_id: str,
    rule: AssociationRule,
    trigger_events: Sequence[EventRecord],
    created_at: float,
    naming: NamingFn,
) -> Recommendation:
    h = hashlib.sha1()
    h.update(home_id.encode())
    h.update(rule.rule_id.encode())
    h.update(repr(created_at).encode())
    for ev in trigger_events:
        h.update(repr(ev.timestamp).encode())
    return Recommendation(
        recommendation_id="rec-" + h.hexdigest()[:16],
        home_id=home_id,
        rule_id=rule.rule_id,
        action=rule.action,
        text=recommendation_text(rule.action, naming),
        trigger_events=tuple(trigger_events),
        created_at=created_at,
    )


class _Instance:
    __slots__ = ("rule", "next_index", "remaining", "matched", "created", "last", "stamp")

    def __init__(self, rule: AssociationRule, event: EventRecord, stamp: int, remaining=None):
        self.rule = rule
        self.next_index = 1
        self.remaining = remaining  # sorted tuple of pending codes (unordered mode)
        self.matched = [event]
        self.created = event.timestamp
        self.last = event.timestamp
        self.stamp = stamp


_GAP = 0
_WAIT = 1


class Matcher:
    """Stateful matcher for one home against a fixed rule snapshot."""

    def __init__(
        self,
        db: RuleDB,
        cfg: MatchConfig = MatchConfig(),
        home_id: str = "",
        naming: Optional[NamingFn] = None,
    ):
        self.cfg = cfg
        self.home_id = home_id
        self.naming = naming or identity_naming
        self._code_of: dict[tuple, int] = {}
        self._rules: dict[str, AssociationRule] = {}
        self._rank: dict[str, int] = {}
        self._action_code: dict[str, int] = {}
        self._cond_codes: dict[str, tuple[int, ...]] = {}
        self._spawn: dict[int, list[AssociationRule]] = {}
        self._advance: dict[int, list[tuple[str, int]]] = {}
        self._partials: dict[tuple, _Instance] = {}
        self._completed: dict[str, _Instance] = {}
        self._heap: list = []
        self._seq = 0
        self._stamp = 0
        self.last_emit: dict[str, float] = {}
        self.out_of_home_errors = 0
        active = sorted((r for r in db.rules.values() if r.state is RuleState.ACTIVE), key=lambda r: r.sort_key())
        for i, rule in enumerate(active):
            self._rank[rule.rule_id] = i
            self._rules[rule.rule_id] = rule
        for rule in active:
            codes = tuple(self._intern(ident) for ident in rule.condition)
            self._cond_codes[rule.rule_id] = codes
            self._action_code[rule.rule_id] = self._intern(rule.action)
            if cfg.order_insensitive:
                for c in set(codes):
                    self._spawn.setdefault(c, []).append(rule)
            else:
                self._spawn.setdefault(codes[0], []).append(rule)
                for idx in range(1, len(codes)):
                    self._advance.setdefault(codes[idx], []).append((rule.rule_id, idx))
        # advances must process higher condition indices first so that an
        # instance moving into a slot never clobbers one that still has to move
        for entries in self._advance.values():
            entries.sort(key=lambda ri: (ri[0], -ri[1]))

    # -- helpers ------------------------------------------------------------

    def _intern(self, identity) -> int:
        key = (identity[0], identity[1], identity[2])
        code = self._code_of.get(key)
        if code is None:
            code = len(self._code_of)
            self._code_of[key] = code
        return code

    def _next_stamp(self) -> int:
        self._stamp += 1
        return self._stamp

    def _push(self, deadline: float, kind: int, ref, stamp: int):
        self._seq += 1
        heapq.heappush(self._heap, (deadline, self._seq, kind, ref, stamp))

    def live_instances(self) -> int:
        return len(self._partials) + len(self._completed)

    def remove_rule(self, rule_id: str) -> None:
        """Drop a rule (e.g. freshly excluded) and its live instances."""
        self._rules.pop(rule_id, None)
        self._spawn = {c: [r for r in lst if r.rule_id != rule_id] for c, lst in self._spawn.items()}
        self._advance = {
            c: [ri for ri in lst if ri[0] != rule_id] for c, lst in self._advance.items()
        }
        self._partials = {k: v for k, v in self._partials.items() if v.rule.rule_id != rule_id}
        self._completed.pop(rule_id, None)

    # -- emission -----------------------------------------------------------

    def _emit(self, t: float, candidates: list[_Instance], out: list[Recommendation]):
        cooldown = self.cfg.cooldown
        eligible = []
        for inst in candidates:
            last = self.last_emit.get(inst.rule.rule_id)
            if last is None or t - last >= cooldown:
                eligible.append(inst)
        if not eligible:
            return
        winner = min(eligible, key=lambda inst: self._rank[inst.rule.rule_id])
        self.last_emit[winner.rule.rule_id] = t
        out.append(build_recommendation(self.home_id, winner.rule, winner.matched, t, self.naming))

    def _expire(self, now: float, out: list[Recommendation]):
        heap = self._heap
        group_t = None
        group: list[_Instance] = []
        while heap and heap[0][0] < now:
            deadline, _, kind, ref, stamp = heapq.heappop(heap)
            if kind == _GAP:
                inst = self._partials.get(ref)
                if inst is not None and inst.stamp == stamp:
                    del self._partials[ref]
            else:
                inst = self._completed.get(ref)
                if inst is not None and inst.stamp == stamp:
                    del self._completed[ref]
                    if deadline != group_t:
                        if group:
                            self._emit(group_t, group, out)
                        group_t, group = deadline, []
                    group.append(inst)
        if group:
            self._emit(group_t, group, out)

    # -- event processing ---------------------------------------------------

    def process(self, event: EventRecord) -> list[Recommendation]:
        """Feed one event; returns recommendations emitted at or before it."""
        if event.home_id != self.home_id:
            self.out_of_home_errors += 1
            raise ValueError(f"event for home {event.home_id!r} fed to matcher of home {self.home_id!r}")
        out: list[Recommendation] = []
        now = event.timestamp
        self._expire(now, out)
        code = self._code_of.get((event.zone_id, event.subject_id, event.event_name), -1)

        if self._completed:
            candidates = []
            for rule_id, inst in self._completed.items():
                if self._action_code[rule_id] != code:
                    candidates.append(inst)
            self._completed.clear()
            self._emit(now, candidates, out)

        if code != -1:
            if self.cfg.order_insensitive:
                self._advance_unordered(code, event, now)
            else:
                self._advance_ordered(code, event, now)
            self._spawn_instances(code, event, now)
        return out

    def _advance_ordered(self, code: int, event: EventRecord, now: float):
        entries = self._advance.get(code)
        if not entries:
            return
        partials = self._partials
        moves = []
        for rule_id, idx in entries:
            inst = partials.get((rule_id, idx))
            if inst is not None and now > inst.last:
                moves.append((rule_id, idx, inst))
        for rule_id, idx, inst in moves:
            del partials[(rule_id, idx)]
            inst.next_index = idx + 1
            inst.matched.append(event)
            inst.last = now
            inst.stamp = self._next_stamp()
            if inst.next_index == len(inst.rule.condition):
                self._completed[rule_id] = inst
                self._push(now + self.cfg.action_wait, _WAIT, rule_id, inst.stamp)
            else:
                partials[(rule_id, inst.next_index)] = inst
                self._push(now + self.cfg.max_gap, _GAP, (rule_id, inst.next_index), inst.stamp)

    def _advance_unordered(self, code: int, event: EventRecord, now: float):
        partials = self._partials
        moves = []
        for key, inst in partials.items():
            if inst.remaining and code in inst.remaining and now > inst.last:
                moves.append((key, inst))
        # batch: clear every source slot before writing targets, so a mover's
        # new slot never clobbers another mover still waiting to be processed
        for key, _ in moves:
            del partials[key]
        for _, inst in moves:
            rest = list(inst.remaining)
            rest.remove(code)
            inst.remaining = tuple(rest)
            inst.matched.append(event)
            inst.last = now
            inst.stamp = self._next_stamp()
            rule_id = inst.rule.rule_id
            if not rest:
                self._completed[rule_id] = inst
                self._push(now + self.cfg.action_wait, _WAIT, rule_id, inst.stamp)
            else:
                new_key = (rule_id, inst.remaining)
                partials[new_key] = inst
                self._push(now + self.cfg.max_gap, _GAP, new_key, inst.stamp)

    def _spawn_instances(self, code: int, event: EventRecord, now: float):
        rules = self._spawn.get(code)
        if not rules:
            return
        for rule in rules:
            rule_id = rule.rule_id
            if self.cfg.order_insensitive:
                codes = list(self._cond_codes[rule_id])
                codes.remove(code)
                if not codes:
                    continue
                remaining = tuple(sorted(codes))
                inst = _Instance(rule, event, self._next_stamp(), remaining=remaining)
                key = (rule_id, remaining)
            else:
                inst = _Instance(rule, event, self._next_stamp())
                key = (rule_id, 1)
            self._partials[key] = inst
            self._push(now + self.cfg.max_gap, _GAP, key, inst.stamp)

    def advance_clock(self, now: float) -> list[Recommendation]:
        """Fire every deadline strictly before ``now``. Idempotent at fixed now."""
        out: list[Recommendation] = []
        self._expire(now, out)
        return out

    def flush(self) -> list[Recommendation]:
        """End of stream: resolve all remaining deadlines."""
        return self.advance_clock(INFINITY)


# ---------------------------------------------------------------------------
# spec-style functional surface


def on_event(state: Matcher, event: EventRecord) -> tuple[Matcher, list[Recommendation]]:
    return state, state.process(event)


def expire_instances(state: Matcher, now: float) -> tuple[Matcher, list[Recommendation]]:
    return state, state.advance_clock(now)


def replay(
    events: Iterable[EventRecord],
    db: RuleDB,
    cfg: MatchConfig = MatchConfig(),
    naming: Optional[NamingFn] = None,
    home_id: Optional[str] = None,
) -> list[Recommendation]:
    """Fold the matcher over a time-ordered stream, clocked by event times."""
    matcher: Optional[Matcher] = None
    out: list[Recommendation] = []
    last_t = -INFINITY
    for event in events:
        if matcher is None:
            matcher = Matcher(db, cfg, home_id=home_id if home_id is not None else event.home_id, naming=naming)
        if event.timestamp < last_t:
            raise ValueError("replay requires a time-ordered stream")
        last_t = event.timestamp
        out.extend(matcher.process(event))
    if matcher is not None:
        out.extend(matcher.flush())
    return out
