"""Smart-home energy-saving recommender.

Mines frequent behavior patterns from home-automation event logs, derives
prioritized association rules, matches live event streams with per-event
finite-state machines, and adapts rule ranking from inhabitant feedback.
"""

from .domain import (
    ActionCatalog,
    ActionCategory,
    AssociationRule,
    DEFAULT_CATALOG,
    EventClass,
    EventIdentity,
    EventRecord,
    FeedbackEntry,
    HomeTopology,
    Pattern,
    Recommendation,
    RecommendationStatus,
    RuleState,
    Verdict,
    classify_event,
    event_identity,
    format_timestamp,
    parse_timestamp,
)
from .mining import MiningConfig, Occurrence, count_support, filter_relevant, mine_patterns, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "ActionCatalog",
    "ActionCategory",
    "AssociationRule",
    "DEFAULT_CATALOG",
    "EventClass",
    "EventIdentity",
    "EventRecord",
    "FeedbackEntry",
    "HomeTopology",
    "MiningConfig",
    "Occurrence",
    "Pattern",
    "Recommendation",
    "RecommendationStatus",
    "RuleState",
    "Verdict",
    "classify_event",
    "count_support",
    "event_identity",
    "filter_relevant",
    "format_timestamp",
    "mine_patterns",
    "parse_timestamp",
    "run_benchmark",
]
