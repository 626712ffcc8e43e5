"""Association rules: derivation from relevant patterns, confidence,
priority coefficients, policies and the persisted rule database."""

from __future__ import annotations

import json
import os
import tempfile
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .domain import (
    ActionCatalog,
    AssociationRule,
    DEFAULT_CATALOG,
    EventClass,
    EventIdentity,
    EventRecord,
    ActionCategory,
    Pattern,
    RuleState,
    rule_id_for,
)
from .mining import EventColumns, MiningConfig, columns_for, count_support

RULEDB_FORMAT = "homesaver-rules"
RULEDB_VERSION = 1


@dataclass
class RegressionWeights:
    beta_confidence: float = 1.0
    beta_length: float = 0.0


@dataclass
class RuleDB:
    """The rule store: rules plus the knobs that rank and gate them.

    Mutated only through the functions in this module (single writer);
    readers should treat instances as snapshots.
    """

    rules: dict[str, AssociationRule] = field(default_factory=dict)
    weights: RegressionWeights = field(default_factory=RegressionWeights)
    priority_threshold: float = 0.0
    exclude_absent_actions: bool = False

    def add(self, rule: AssociationRule) -> None:
        if rule.rule_id in self.rules:
            raise ValueError(f"duplicate rule_id {rule.rule_id}")
        self.rules[rule.rule_id] = rule

    def active_rules(self) -> list[AssociationRule]:
        return [r for r in self.rules.values() if r.state is RuleState.ACTIVE]

    def census(self) -> dict[str, int]:
        counts = {state.value: 0 for state in RuleState}
        for r in self.rules.values():
            counts[r.state.value] += 1
        counts["total"] = len(self.rules)
        return counts


def derive_rules(pattern: Pattern, catalog: ActionCatalog = DEFAULT_CATALOG) -> list[AssociationRule]:
    """One candidate rule per action occurrence in a relevant pattern.

    The condition is the pattern's normal events in their original order; all
    action items are dropped from it. Candidates whose condition ends up
    shorter than two events are discarded.
    """
    classes = pattern.classes or tuple(catalog.classify(i.event_name) for i in pattern.items)
    condition = tuple(item for item, cls in zip(pattern.items, classes) if cls is EventClass.NORMAL)
    rules = []
    if len(condition) < 2:
        return rules
    for pos, (item, cls) in enumerate(zip(pattern.items, classes)):
        if cls is not EventClass.ACTION:
            continue
        rules.append(
            AssociationRule(
                rule_id=rule_id_for(pattern.home_id, pattern.items, pos),
                home_id=pattern.home_id,
                condition=condition,
                action=item,
                action_category=catalog.category_for(item.event_name),
                action_position=pos,
                source_items=pattern.items,
                pattern_support=pattern.support,
                pattern_support_count=pattern.support_count,
                pattern_length=pattern.length,
                mined_date=pattern.first_mined,
            )
        )
    return rules


def compute_confidence(
    rule: AssociationRule,
    events: Sequence[EventRecord],
    cfg: MiningConfig,
    *,
    cols: EventColumns | None = None,
) -> float:
    """confidence = s_with / (s_with + s_without).

    ``s_with`` counts the full source pattern. ``s_without`` counts condition
    occurrences in whose window (first matched item through max_gap past the
    last) no event with the action's identity appears; that window mirrors
    the matcher's recommendation window.
    """
    if cols is None:
        cols = columns_for(events)
    s_with, _ = count_support(rule.source_items, events, cfg, cols=cols, with_occurrences=False)
    if s_with == 0:
        raise ValueError(f"rule {rule.rule_id}: source pattern has no occurrences in the given events")
    s_without = count_condition_without_action(rule, events, cfg, cols=cols)
    return s_with / (s_with + s_without)


def count_condition_without_action(
    rule: AssociationRule,
    events: Sequence[EventRecord],
    cfg: MiningConfig,
    *,
    cols: EventColumns | None = None,
) -> int:
    if cols is None:
        cols = columns_for(events)
    _, occurrences = count_support(rule.condition, events, cfg, cols=cols)
    action_code = cols.code_of.get(EventIdentity(*rule.action))
    if action_code is None:
        return len(occurrences)
    action_positions = cols.positions[action_code]
    times = cols.times
    count = 0
    for occ in occurrences:
        lo_t = occ.item_timestamps[0]
        hi_t = occ.item_timestamps[-1] + cfg.max_gap
        lo = bisect_left(times, lo_t)
        hi = bisect_right(times, hi_t)
        i = bisect_left(action_positions, lo)
        blocked = i < len(action_positions) and action_positions[i] < hi
        if not blocked:
            count += 1
    return count


def compute_priority(rule: AssociationRule, weights: RegressionWeights) -> float:
    return weights.beta_confidence * rule.confidence + weights.beta_length * rule.pattern_length


def recompute(db: RuleDB) -> RuleDB:
    """Recompute priorities and active/below-threshold states.

    Excluded rules keep their state; priority is refreshed for everyone.
    Idempotent.
    """
    for rule in db.rules.values():
        rule.priority = compute_priority(rule, db.weights)
        if rule.state in (RuleState.ACTIVE, RuleState.BELOW_THRESHOLD):
            rule.state = RuleState.BELOW_THRESHOLD if rule.priority < db.priority_threshold else RuleState.ACTIVE
    return db


def apply_policies(db: RuleDB) -> RuleDB:
    """Apply policy exclusions, then refresh priorities and threshold states."""
    for rule in db.rules.values():
        if db.exclude_absent_actions and rule.action_category is ActionCategory.ABSENT:
            rule.state = RuleState.EXCLUDED_BY_POLICY
        elif not db.exclude_absent_actions and rule.state is RuleState.EXCLUDED_BY_POLICY:
            rule.state = RuleState.ACTIVE  # threshold state restored below
    return recompute(db)


def build_ruledb(
    patterns: Iterable[Pattern],
    events: Sequence[EventRecord],
    cfg: MiningConfig,
    catalog: ActionCatalog = DEFAULT_CATALOG,
    weights: RegressionWeights | None = None,
    priority_threshold: float = 0.0,
    exclude_absent_actions: bool = False,
) -> RuleDB:
    """Derive rules from relevant patterns and compute their confidences
    against the same events and config used for mining."""
    db = RuleDB(
        weights=weights or RegressionWeights(),
        priority_threshold=priority_threshold,
        exclude_absent_actions=exclude_absent_actions,
    )
    cols = columns_for(events)
    for pattern in patterns:
        for rule in derive_rules(pattern, catalog):
            if rule.rule_id in db.rules:
                continue  # same source pattern seen twice
            rule.confidence = compute_confidence(rule, events, cfg, cols=cols)
            db.add(rule)
    return apply_policies(db)


# ---------------------------------------------------------------------------
# persistence: versioned, line-delimited, human-diffable


def _identity_to_json(ident: EventIdentity) -> list[str]:
    return [ident.zone_id, ident.subject_id, ident.event_name]


def _identity_from_json(raw) -> EventIdentity:
    return EventIdentity(raw[0], raw[1], raw[2])


def _rule_to_json(rule: AssociationRule) -> dict:
    return {
        "rule_id": rule.rule_id,
        "home_id": rule.home_id,
        "condition": [_identity_to_json(i) for i in rule.condition],
        "action": _identity_to_json(rule.action),
        "action_category": rule.action_category.value if rule.action_category else None,
        "action_position": rule.action_position,
        "source_items": [_identity_to_json(i) for i in rule.source_items],
        "pattern_support": rule.pattern_support,
        "pattern_support_count": rule.pattern_support_count,
        "pattern_length": rule.pattern_length,
        "mined_date": rule.mined_date,
        "confidence": rule.confidence,
        "priority": rule.priority,
        "state": rule.state.value,
    }


def _rule_from_json(raw: dict) -> AssociationRule:
    return AssociationRule(
        rule_id=raw["rule_id"],
        home_id=raw["home_id"],
        condition=tuple(_identity_from_json(i) for i in raw["condition"]),
        action=_identity_from_json(raw["action"]),
        action_category=ActionCategory(raw["action_category"]) if raw["action_category"] else None,
        action_position=raw["action_position"],
        source_items=tuple(_identity_from_json(i) for i in raw["source_items"]),
        pattern_support=raw["pattern_support"],
        pattern_support_count=raw["pattern_support_count"],
        pattern_length=raw["pattern_length"],
        mined_date=raw["mined_date"],
        confidence=raw["confidence"],
        priority=raw["priority"],
        state=RuleState(raw["state"]),
    )


def save_ruledb(db: RuleDB, path: str) -> None:
    header = {
        "format": RULEDB_FORMAT,
        "version": RULEDB_VERSION,
        "weights": {"beta_confidence": db.weights.beta_confidence, "beta_length": db.weights.beta_length},
        "priority_threshold": db.priority_threshold,
        "exclude_absent_actions": db.exclude_absent_actions,
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for rule_id in sorted(db.rules):
                f.write(json.dumps(_rule_to_json(db.rules[rule_id]), sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_ruledb(path: str) -> RuleDB:
    with open(path) as f:
        header_line = f.readline()
        if not header_line:
            raise ValueError(f"{path}: empty rule file")
        header = json.loads(header_line)
        if header.get("format") != RULEDB_FORMAT:
            raise ValueError(f"{path}: not a rule file (format={header.get('format')!r})")
        if header.get("version") != RULEDB_VERSION:
            raise ValueError(f"{path}: unsupported rule file version {header.get('version')!r}")
        db = RuleDB(
            weights=RegressionWeights(**header["weights"]),
            priority_threshold=header["priority_threshold"],
            exclude_absent_actions=header["exclude_absent_actions"],
        )
        for line in f:
            if line.strip():
                db.add(_rule_from_json(json.loads(line)))
    return db
