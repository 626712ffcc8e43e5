"""Inhabitant feedback: verdict ledger, consecutive-negative exclusion,
the feedback regression, and the phase-2 adaptation step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import (
    AssociationRule,
    FeedbackEntry,
    Recommendation,
    RecommendationStatus,
    RuleState,
    Verdict,
)
from .rules import RegressionWeights, RuleDB, apply_policies

DEFAULT_EXCLUSION_STREAK = 10
RECOMMENDATION_TTL = 48 * 3600.0  # unanswered recommendations expire after 48h


@dataclass
class RuleFeedbackStats:
    useful: int = 0
    not_useful: int = 0
    streak: int = 0  # consecutive not_useful; resets on useful

    @property
    def answered(self) -> int:
        return self.useful + self.not_useful


@dataclass
class FeedbackLedger:
    """Append-only verdict log plus per-rule running aggregates."""

    entries: list[FeedbackEntry] = field(default_factory=list)
    stats: dict[str, RuleFeedbackStats] = field(default_factory=dict)
    exclusion_streak: int = DEFAULT_EXCLUSION_STREAK

    def stats_for(self, rule_id: str) -> RuleFeedbackStats:
        return self.stats.setdefault(rule_id, RuleFeedbackStats())

    def recomputed_stats(self) -> dict[str, RuleFeedbackStats]:
        """Rebuild aggregates from entries; must equal the running stats."""
        fresh: dict[str, RuleFeedbackStats] = {}
        for entry in self.entries:
            s = fresh.setdefault(entry.rule_id, RuleFeedbackStats())
            if entry.verdict is Verdict.USEFUL:
                s.useful += 1
                s.streak = 0
            else:
                s.not_useful += 1
                s.streak += 1
        return fresh


class FeedbackError(ValueError):
    pass


def record_feedback(
    ledger: FeedbackLedger,
    recommendations: dict[str, Recommendation],
    db: RuleDB,
    recommendation_id: str,
    verdict: Verdict,
    received_at: float,
) -> FeedbackEntry:
    """Record one verdict; flips the rule to excluded_by_feedback when the
    consecutive-negative streak reaches the configured length."""
    rec = recommendations.get(recommendation_id)
    if rec is None:
        raise FeedbackError(f"unknown recommendation {recommendation_id!r}")
    if rec.status is not RecommendationStatus.PENDING:
        raise FeedbackError(f"recommendation {recommendation_id!r} already resolved ({rec.status.value})")
    entry = FeedbackEntry(recommendation_id, rec.rule_id, verdict, received_at)
    ledger.entries.append(entry)
    stats = ledger.stats_for(rec.rule_id)
    if verdict is Verdict.USEFUL:
        rec.status = RecommendationStatus.USEFUL
        stats.useful += 1
        stats.streak = 0
    else:
        rec.status = RecommendationStatus.NOT_USEFUL
        stats.not_useful += 1
        stats.streak += 1
        if stats.streak >= ledger.exclusion_streak:
            rule = db.rules.get(rec.rule_id)
            if rule is not None and rule.state is not RuleState.EXCLUDED_BY_POLICY:
                rule.state = RuleState.EXCLUDED_BY_FEEDBACK
    return entry


def expire_recommendations(
    recommendations: dict[str, Recommendation], now: float, ttl: float = RECOMMENDATION_TTL
) -> int:
    """Expire pending recommendations older than ttl; they count nowhere."""
    expired = 0
    for rec in recommendations.values():
        if rec.status is RecommendationStatus.PENDING and rec.created_at + ttl < now:
            rec.status = RecommendationStatus.EXPIRED
            expired += 1
    return expired


def weighted_feedback(rule_id: str, ledger: FeedbackLedger) -> Optional[float]:
    """(useful - not_useful) / answered, in [-1, 1]; None with no answers."""
    stats = ledger.stats.get(rule_id)
    if stats is None or stats.answered == 0:
        return None
    return (stats.useful - stats.not_useful) / stats.answered


@dataclass
class RegressionFit:
    beta_confidence: float
    beta_length: float
    intercept: float
    se_confidence: float
    se_length: float
    se_intercept: float
    n_rules: int
    valid: bool
    note: str = ""
    aux_slopes: dict = field(default_factory=dict)  # reported, not regressed on


def fit_regression(ledger: FeedbackLedger, rules: dict[str, AssociationRule]) -> RegressionFit:
    """OLS of weighted feedback on (confidence, pattern length).

    Support and action position are reported as univariate slopes only; the
    evaluation found them uninformative, so they carry no weight.
    """
    rows = []
    for rule_id, rule in rules.items():
        wf = weighted_feedback(rule_id, ledger)
        if wf is not None:
            rows.append((rule.confidence, float(rule.pattern_length), rule.pattern_support, float(rule.action_position), wf))
    n = len(rows)
    if n < 3:
        raise FeedbackError(f"insufficient data: regression needs >= 3 rules with feedback, got {n}")
    data = np.array(rows, dtype=float)
    X = np.column_stack([np.ones(n), data[:, 0], data[:, 1]])
    y = data[:, 4]
    if np.linalg.matrix_rank(X) < 3:
        return RegressionFit(
            beta_confidence=float("nan"), beta_length=float("nan"), intercept=float("nan"),
            se_confidence=float("nan"), se_length=float("nan"), se_intercept=float("nan"),
            n_rules=n, valid=False, note="rank-deficient design; keeping current weights",
        )
    beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ beta
    dof = n - 3
    if dof > 0:
        sigma2 = float(residuals @ residuals) / dof
        cov = sigma2 * np.linalg.inv(X.T @ X)
        ses = np.sqrt(np.diag(cov))
    else:
        ses = np.full(3, float("nan"))
    aux = {
        "support_slope": _univariate_slope(data[:, 2], y),
        "action_position_slope": _univariate_slope(data[:, 3], y),
    }
    return RegressionFit(
        beta_confidence=float(beta[1]),
        beta_length=float(beta[2]),
        intercept=float(beta[0]),
        se_confidence=float(ses[1]),
        se_length=float(ses[2]),
        se_intercept=float(ses[0]),
        n_rules=n,
        valid=True,
        aux_slopes=aux,
    )


def _univariate_slope(x: np.ndarray, y: np.ndarray) -> float:
    vx = float(np.var(x))
    if vx == 0.0 or math.isnan(vx):
        return float("nan")
    return float(np.cov(x, y, bias=True)[0, 1] / vx)


@dataclass
class AdaptReport:
    census_before: dict[str, int]
    census_after: dict[str, int]
    removed_rules: list[str]
    weights: RegressionWeights
    priority_threshold: float


def adapt_phase2(
    db: RuleDB,
    fit: Optional[RegressionFit],
    threshold: float,
    ledger: Optional[FeedbackLedger] = None,
) -> tuple[RuleDB, FeedbackLedger, AdaptReport]:
    """Between-phase adaptation: drop streak-excluded rules, reset feedback,
    exclude absent actions, adopt fitted weights, prune below the threshold.

    Returns the adapted db, a fresh ledger for the next phase, and a census
    report. Idempotent for fixed fit and threshold.
    """
    census_before = db.census()
    removed = [rule_id for rule_id, r in db.rules.items() if r.state is RuleState.EXCLUDED_BY_FEEDBACK]
    for rule_id in removed:
        del db.rules[rule_id]
    if fit is not None and fit.valid:
        db.weights = RegressionWeights(beta_confidence=fit.beta_confidence, beta_length=fit.beta_length)
    db.priority_threshold = threshold
    db.exclude_absent_actions = True
    apply_policies(db)
    new_ledger = FeedbackLedger(exclusion_streak=ledger.exclusion_streak if ledger else DEFAULT_EXCLUSION_STREAK)
    report = AdaptReport(
        census_before=census_before,
        census_after=db.census(),
        removed_rules=removed,
        weights=db.weights,
        priority_threshold=db.priority_threshold,
    )
    return db, new_ledger, report
