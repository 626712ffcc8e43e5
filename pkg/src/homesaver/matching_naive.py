"""Naive quadratic reference matcher.

Replays a stream with plain lists and per-event linear scans: every event
re-examines every rule and every live instance, expiry rescans everything,
and conflict winners are found by sorting. No indexes, heaps or stamps.
Exists to check :mod:`homesaver.matching` exactly; the matching semantics
(processing order, refresh discipline, cooldown, conflict reduction) are the
same by contract.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .domain import EventRecord, Recommendation, RuleState
from .matching import MatchConfig, NamingFn, build_recommendation, identity_naming
from .rules import RuleDB

INFINITY = float("inf")


class _NaiveInstance:
    def __init__(self, rule, event, remaining=None):
        self.rule = rule
        self.next_index = 1
        self.remaining = remaining
        self.matched = [event]
        self.last = event.timestamp

    def key(self):
        if self.remaining is not None:
            return (self.rule.rule_id, self.remaining)
        return (self.rule.rule_id, self.next_index)


def replay_naive(
    events: Iterable[EventRecord],
    db: RuleDB,
    cfg: MatchConfig = MatchConfig(),
    naming: Optional[NamingFn] = None,
    home_id: Optional[str] = None,
) -> list[Recommendation]:
    naming = naming or identity_naming
    rules = sorted((r for r in db.rules.values() if r.state is RuleState.ACTIVE), key=lambda r: r.sort_key())
    rank = {r.rule_id: i for i, r in enumerate(rules)}
    partials: list[_NaiveInstance] = []
    completed: list[_NaiveInstance] = []  # condition done, waiting for the next event
    completed_at: dict[str, float] = {}  # rule_id -> completion time
    last_emit: dict[str, float] = {}
    recs: list[Recommendation] = []
    home = home_id

    def emit(t, candidates):
        eligible = [
            inst
            for inst in candidates
            if last_emit.get(inst.rule.rule_id) is None or t - last_emit[inst.rule.rule_id] >= cfg.cooldown
        ]
        if not eligible:
            return
        eligible.sort(key=lambda inst: rank[inst.rule.rule_id])
        winner = eligible[0]
        last_emit[winner.rule.rule_id] = t
        recs.append(build_recommendation(home, winner.rule, winner.matched, t, naming))

    def expire(now):
        nonlocal partials, completed
        partials = [inst for inst in partials if inst.last + cfg.max_gap >= now]
        expiring = [inst for inst in completed if inst.last + cfg.action_wait < now]
        completed = [inst for inst in completed if inst.last + cfg.action_wait >= now]
        expiring.sort(key=lambda inst: (inst.last + cfg.action_wait, rank[inst.rule.rule_id]))
        i = 0
        while i < len(expiring):
            deadline = expiring[i].last + cfg.action_wait
            group = [inst for inst in expiring if inst.last + cfg.action_wait == deadline]
            emit(deadline, group)
            i += len(group)

    first = True
    for event in events:
        if first:
            home = home_id if home_id is not None else event.home_id
            first = False
        if event.home_id != home:
            raise ValueError(f"event for home {event.home_id!r} in stream of home {home!r}")
        now = event.timestamp
        expire(now)
        identity = event.identity

        # every completed instance resolves on this event
        if completed:
            candidates = [inst for inst in completed if inst.rule.action != identity]
            completed = []
            emit(now, candidates)

        # advance on the pre-event snapshot: delete sources, then write targets
        movers = []
        for inst in partials:
            if now <= inst.last:
                continue
            if inst.remaining is not None:
                if identity_code(inst.rule, identity) in inst.remaining:
                    movers.append(inst)
            elif inst.rule.condition[inst.next_index] == identity:
                movers.append(inst)
        for inst in movers:
            partials.remove(inst)
        for inst in movers:
            if inst.remaining is not None:
                rest = list(inst.remaining)
                rest.remove(identity_code(inst.rule, identity))
                inst.remaining = tuple(rest)
            else:
                inst.next_index += 1
            inst.matched.append(event)
            inst.last = now
            done = (inst.remaining == ()) if inst.remaining is not None else inst.next_index == len(inst.rule.condition)
            if done:
                completed = [c for c in completed if c.rule.rule_id != inst.rule.rule_id]
                completed.append(inst)
            else:
                partials = [p for p in partials if p.key() != inst.key()]
                partials.append(inst)

        # spawn, replacing any stale resident with the same key
        for rule in rules:
            if cfg.order_insensitive:
                codes = [identity_code(rule, ident) for ident in rule.condition]
                me = identity_code(rule, identity)
                if me not in codes:
                    continue
                codes.remove(me)
                if not codes:
                    continue
                inst = _NaiveInstance(rule, event, remaining=tuple(sorted(codes)))
            elif rule.condition[0] == identity:
                inst = _NaiveInstance(rule, event)
            else:
                continue
            partials = [p for p in partials if p.key() != inst.key()]
            partials.append(inst)

    expire(INFINITY)
    return recs


def identity_code(rule, identity) -> str:
    """Stable per-rule code for an identity (unordered-mode bookkeeping)."""
    return "\x1f".join(identity)
