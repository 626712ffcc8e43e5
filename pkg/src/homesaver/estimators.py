"""Scikit-learn style estimators wrapping the mining and matching pipeline.

``PatternMiner.fit`` learns frequent patterns from one home's event history;
``ActionRecommender.fit`` additionally derives the prioritized rule database,
and ``predict`` replays a stream through the matcher, returning the
recommendations it would have sent. Both follow the sklearn parameter
conventions (constructor params, ``get_params``/``set_params``, trailing
underscore on fitted attributes), so they compose with grid search and
pipelines operating on event-sequence inputs.
"""

from __future__ import annotations

from typing import Optional, Sequence

from sklearn.base import BaseEstimator

from .domain import ActionCatalog, DEFAULT_CATALOG, EventRecord, Pattern, Recommendation
from .matching import MatchConfig, NamingFn, replay
from .mining import MiningConfig, filter_relevant, mine_patterns
from .rules import RegressionWeights, RuleDB, build_ruledb
from .validation import check_event_sequence


class PatternMiner(BaseEstimator):
    """Mine frequent, gap-constrained sequential patterns from event logs."""

    def __init__(
        self,
        min_length: int = 3,
        max_length: int = 7,
        min_support: float = 0.001,
        max_gap: float = 600.0,
        allow_overlap: bool = True,
        algorithm: str = "growth",
        relevant_only: bool = False,
        catalog: Optional[ActionCatalog] = None,
    ):
        self.min_length = min_length
        self.max_length = max_length
        self.min_support = min_support
        self.max_gap = max_gap
        self.allow_overlap = allow_overlap
        self.algorithm = algorithm
        self.relevant_only = relevant_only
        self.catalog = catalog

    def _config(self) -> MiningConfig:
        return MiningConfig(
            min_length=self.min_length,
            max_length=self.max_length,
            min_support=self.min_support,
            max_gap=self.max_gap,
            allow_overlap=self.allow_overlap,
        )

    def fit(self, X: Sequence[EventRecord], y=None) -> "PatternMiner":
        events = check_event_sequence(X)
        catalog = self.catalog or DEFAULT_CATALOG
        patterns = mine_patterns(events, self._config(), self.algorithm, catalog)
        if self.relevant_only:
            patterns = filter_relevant(patterns, catalog)
        self.patterns_: list[Pattern] = patterns
        self.n_events_: int = len(events)
        return self

    def transform(self, X: Sequence[EventRecord]) -> list[Pattern]:
        """Mine the given events with the fitted configuration."""
        self.fit(X)
        return self.patterns_


class ActionRecommender(BaseEstimator):
    """End-to-end estimator: fit mines rules, predict emits recommendations."""

    def __init__(
        self,
        min_length: int = 3,
        max_length: int = 7,
        min_support: float = 0.001,
        max_gap: float = 600.0,
        allow_overlap: bool = True,
        algorithm: str = "growth",
        action_wait: float = 300.0,
        cooldown: float = 3600.0,
        order_insensitive: bool = False,
        beta_confidence: float = 1.0,
        beta_length: float = 0.0,
        priority_threshold: float = 0.0,
        exclude_absent_actions: bool = False,
        catalog: Optional[ActionCatalog] = None,
        naming: Optional[NamingFn] = None,
    ):
        self.min_length = min_length
        self.max_length = max_length
        self.min_support = min_support
        self.max_gap = max_gap
        self.allow_overlap = allow_overlap
        self.algorithm = algorithm
        self.action_wait = action_wait
        self.cooldown = cooldown
        self.order_insensitive = order_insensitive
        self.beta_confidence = beta_confidence
        self.beta_length = beta_length
        self.priority_threshold = priority_threshold
        self.exclude_absent_actions = exclude_absent_actions
        self.catalog = catalog
        self.naming = naming

    def _mining_config(self) -> MiningConfig:
        return MiningConfig(
            min_length=self.min_length,
            max_length=self.max_length,
            min_support=self.min_support,
            max_gap=self.max_gap,
            allow_overlap=self.allow_overlap,
        )

    def _match_config(self) -> MatchConfig:
        return MatchConfig(
            max_gap=self.max_gap,
            action_wait=self.action_wait,
            cooldown=self.cooldown,
            order_insensitive=self.order_insensitive,
        )

    def fit(self, X: Sequence[EventRecord], y=None) -> "ActionRecommender":
        events = check_event_sequence(X)
        catalog = self.catalog or DEFAULT_CATALOG
        cfg = self._mining_config()
        patterns = filter_relevant(mine_patterns(events, cfg, self.algorithm, catalog), catalog)
        self.rules_: RuleDB = build_ruledb(
            patterns,
            events,
            cfg,
            catalog,
            weights=RegressionWeights(self.beta_confidence, self.beta_length),
            priority_threshold=self.priority_threshold,
            exclude_absent_actions=self.exclude_absent_actions,
        )
        self.patterns_: list[Pattern] = patterns
        self.n_events_: int = len(events)
        return self

    def predict(self, X: Sequence[EventRecord]) -> list[Recommendation]:
        if not hasattr(self, "rules_"):
            raise ValueError("ActionRecommender is not fitted; call fit(events) first")
        events = check_event_sequence(X)
        return replay(events, self.rules_, self._match_config(), naming=self.naming)
