"""HTTP service: event intake, recommendation retrieval, feedback submission
and rule inspection. Replaces the original SMS channel with pull plus an
optional per-home webhook.

State is file-backed and written ahead of every 2xx: events go to the store,
recommendations and feedback to append-only jsonl logs, rule-state changes to
the rule file. Matcher state is rebuilt on restart by replaying the store;
recommendation ids are deterministic, so the rebuild emits exactly the ids
already persisted plus anything that was lost mid-crash.

The clock is event time: deadlines advance when events (or an explicit clock
POST) move a home's watermark forward.
"""

from __future__ import annotations

import json
import os
import threading
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .domain import (
    EventIdentity,
    EventRecord,
    Recommendation,
    RecommendationStatus,
    Verdict,
)
from .feedback import (
    FeedbackError,
    FeedbackLedger,
    RECOMMENDATION_TTL,
    expire_recommendations,
    record_feedback,
    weighted_feedback,
)
from .ingest import EventStore, ParseError, _record_from_fields, format_event_timestamp
from .matching import MatchConfig, Matcher, NamingFn, identity_naming
from .rules import RuleDB, load_ruledb, save_ruledb
from .simulate import load_topologies

INFINITY = float("inf")


@dataclass
class ServiceConfig:
    store_dir: str
    ruledb_path: str
    data_dir: str
    topology_path: Optional[str] = None
    auth_token: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8799
    max_gap: float = 600.0
    action_wait: float = 300.0
    cooldown: float = 3600.0
    order_insensitive: bool = False
    reorder_tolerance: float = 60.0
    recommendation_ttl: float = RECOMMENDATION_TTL
    exclusion_streak: int = 10
    webhooks: dict[str, str] = field(default_factory=dict)  # home_id -> url
    cors_origins: list[str] = field(default_factory=lambda: ["*"])

    def match_config(self) -> MatchConfig:
        return MatchConfig(
            max_gap=self.max_gap,
            action_wait=self.action_wait,
            cooldown=self.cooldown,
            order_insensitive=self.order_insensitive,
        )


def _rec_to_json(rec: Recommendation) -> dict:
    return {
        "recommendation_id": rec.recommendation_id,
        "home_id": rec.home_id,
        "rule_id": rec.rule_id,
        "action": list(rec.action),
        "text": rec.text,
        "created_at": format_event_timestamp(rec.created_at),
        "status": rec.status.value,
        "trigger_events": [
            {
                "timestamp": format_event_timestamp(e.timestamp),
                "zone_id": e.zone_id,
                "subject_id": e.subject_id,
                "event_name": e.event_name,
                "source": e.source,
            }
            for e in rec.trigger_events
        ],
    }


class WebhookDeliverer:
    """At-least-once webhook delivery with idempotency keys.

    Failed deliveries stay queued and are retried on the next drain; the
    receiving side dedupes on the Idempotency-Key header (= recommendation id).
    """

    def __init__(self, transport: Optional[Callable[[str, dict, dict], bool]] = None):
        self.transport = transport or self._http_post
        self.queue: list[tuple[str, dict]] = []
        self.delivered: set[str] = set()
        self._lock = threading.Lock()

    @staticmethod
    def _http_post(url: str, payload: dict, headers: dict) -> bool:
        body = json.dumps(payload).encode()
        req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json", **headers})
        try:
            with urllib.request.urlopen(req, timeout=5) as resp:
                return 200 <= resp.status < 300
        except OSError:
            return False

    def enqueue(self, url: str, rec: Recommendation) -> None:
        with self._lock:
            self.queue.append((url, _rec_to_json(rec)))

    def drain(self) -> None:
        with self._lock:
            pending = self.queue
            self.queue = []
        for url, payload in pending:
            key = payload["recommendation_id"]
            ok = self.transport(url, payload, {"Idempotency-Key": key})
            if ok:
                self.delivered.add(key)
            else:
                with self._lock:
                    self.queue.append((url, payload))


class ServiceState:
    def __init__(self, config: ServiceConfig, webhook_transport=None):
        self.config = config
        os.makedirs(config.data_dir, exist_ok=True)
        self.store = EventStore(config.store_dir)
        self.db: RuleDB = load_ruledb(config.ruledb_path)
        self.ledger = FeedbackLedger(exclusion_streak=config.exclusion_streak)
        self.recommendations: dict[str, Recommendation] = {}
        self.rec_order: list[str] = []
        self.matchers: dict[str, Matcher] = {}
        self.clocks: dict[str, float] = {}
        self.late_unmatched: dict[str, int] = {}
        self.stale_batches: dict[str, int] = {}
        self.event_keys: dict[str, set] = {}
        self.webhooks = WebhookDeliverer(webhook_transport)
        self._lock = threading.RLock()
        self._home_locks: dict[str, threading.Lock] = {}
        if config.topology_path:
            topologies = load_topologies(config.topology_path)
            self._naming_by_home = {
                home_id: _topology_naming(topo) for home_id, topo in topologies.items()
            }
        else:
            self._naming_by_home = {}
        self._recs_path = os.path.join(config.data_dir, "recommendations.jsonl")
        self._feedback_path = os.path.join(config.data_dir, "feedback.jsonl")
        self._recover()

    # -- recovery -------------------------------------------------------------

    def _naming(self, home_id: str) -> NamingFn:
        return self._naming_by_home.get(home_id, identity_naming)

    def _home_lock(self, home_id: str) -> threading.Lock:
        with self._lock:
            return self._home_locks.setdefault(home_id, threading.Lock())

    def _recover(self) -> None:
        persisted_status: dict[str, str] = {}
        if os.path.exists(self._recs_path):
            with open(self._recs_path) as f:
                for line in f:
                    if not line.strip():
                        continue
                    raw = json.loads(line)
                    persisted_status[raw["recommendation_id"]] = raw["status"]
        for home_id in self.store.homes():
            self._rebuild_home(home_id)
        # replayed recommendations that were never persisted get appended now
        with open(self._recs_path, "a") as f:
            for rec_id in self.rec_order:
                if rec_id not in persisted_status:
                    f.write(json.dumps(_rec_to_json(self.recommendations[rec_id]), sort_keys=True) + "\n")
        if os.path.exists(self._feedback_path):
            with open(self._feedback_path) as f:
                for line in f:
                    if not line.strip():
                        continue
                    raw = json.loads(line)
                    try:
                        record_feedback(
                            self.ledger,
                            self.recommendations,
                            self.db,
                            raw["recommendation_id"],
                            Verdict(raw["verdict"]),
                            raw["received_at"],
                        )
                    except FeedbackError:
                        pass  # verdict for a recommendation lost before persisting
        self._apply_exclusions()
        self._expire_all()

    def _rebuild_home(self, home_id: str) -> None:
        matcher = Matcher(self.db, self.config.match_config(), home_id, self._naming(home_id))
        events = self.store.events(home_id)
        keys = set()
        clock = -INFINITY
        for e in events:
            keys.add(e)
            clock = e.timestamp
            for rec in matcher.process(e):
                self._register(rec)
        self.matchers[home_id] = matcher
        self.clocks[home_id] = clock
        self.event_keys[home_id] = keys
        self.late_unmatched.setdefault(home_id, 0)
        self.stale_batches.setdefault(home_id, 0)

    def _register(self, rec: Recommendation) -> None:
        if rec.recommendation_id not in self.recommendations:
            self.recommendations[rec.recommendation_id] = rec
            self.rec_order.append(rec.recommendation_id)
            url = self.config.webhooks.get(rec.home_id)
            if url:
                self.webhooks.enqueue(url, rec)

    def _apply_exclusions(self) -> None:
        for rule_id, stats in self.ledger.stats.items():
            if stats.streak >= self.ledger.exclusion_streak:
                for matcher in self.matchers.values():
                    matcher.remove_rule(rule_id)

    def _expire_all(self) -> None:
        for home_id, clock in self.clocks.items():
            if clock > -INFINITY:
                expire_recommendations(self.recommendations, clock, self.config.recommendation_ttl)

    # -- intake ---------------------------------------------------------------

    def post_events(self, home_id: str, payload) -> dict:
        if isinstance(payload, dict):
            payload = payload.get("events")
        if not isinstance(payload, list) or not payload:
            raise HTTPException(400, "body must be an event list or {'events': [...]}")
        records = []
        for i, fields in enumerate(payload):
            if not isinstance(fields, dict):
                raise HTTPException(400, f"events[{i}]: expected an object")
            fields = dict(fields)
            fields.setdefault("home_id", home_id)
            if fields["home_id"] != home_id:
                raise HTTPException(400, f"events[{i}]: home_id {fields['home_id']!r} does not match path")
            try:
                records.append(_record_from_fields(fields, i))
            except ParseError as exc:
                raise HTTPException(400, f"events[{i}]: {exc.reason}")
        with self._home_lock(home_id):
            if home_id not in self.matchers:
                self._rebuild_home(home_id)
            matcher = self.matchers[home_id]
            keys = self.event_keys[home_id]
            clock = self.clocks[home_id]
            records.sort(key=lambda e: (e.timestamp, e.subject_id, e.event_name))
            fresh = []
            late = []
            duplicates = 0
            for e in records:
                if e in keys:
                    duplicates += 1
                elif e.timestamp >= clock:
                    fresh.append(e)
                elif clock - e.timestamp <= self.config.reorder_tolerance:
                    late.append(e)
                else:
                    self.stale_batches[home_id] += 1
                    raise HTTPException(
                        409,
                        f"event at {format_event_timestamp(e.timestamp)} is out of order beyond "
                        f"the {self.config.reorder_tolerance:.0f}s reorder tolerance",
                    )
            # write-ahead: events hit the store before any 2xx
            accepted, more_dupes = self.store.append_events(home_id, fresh + late)
            duplicates += more_dupes
            for e in fresh + late:
                keys.add(e)
            emitted = []
            for e in fresh:
                emitted.extend(matcher.process(e))
                clock = e.timestamp
            self.clocks[home_id] = clock
            self.late_unmatched[home_id] += len(late)
            for rec in emitted:
                self._register(rec)
            self._persist_new_recs(emitted)
            expire_recommendations(self.recommendations, clock, self.config.recommendation_ttl)
        self.webhooks.drain()
        return {
            "lines": len(records),
            "accepted": accepted,
            "duplicates": duplicates,
            "rejected": 0,
            "late_unmatched": len(late),
            "recommendations_emitted": len(emitted),
        }

    def advance_clock(self, home_id: str, now: float) -> dict:
        with self._home_lock(home_id):
            if home_id not in self.matchers:
                if home_id not in self.store.homes():
                    raise HTTPException(404, f"unknown home {home_id!r}")
                self._rebuild_home(home_id)
            matcher = self.matchers[home_id]
            if now < self.clocks[home_id]:
                raise HTTPException(409, "clock may only move forward")
            emitted = matcher.advance_clock(now)
            self.clocks[home_id] = max(self.clocks[home_id], now)
            for rec in emitted:
                self._register(rec)
            self._persist_new_recs(emitted)
            expire_recommendations(self.recommendations, now, self.config.recommendation_ttl)
        self.webhooks.drain()
        return {"clock": format_event_timestamp(now), "recommendations_emitted": len(emitted)}

    def _persist_new_recs(self, recs) -> None:
        if not recs:
            return
        with open(self._recs_path, "a") as f:
            for rec in recs:
                f.write(json.dumps(_rec_to_json(rec), sort_keys=True) + "\n")

    # -- queries ----------------------------------------------------------------

    def recommendations_for(self, home_id: str, status: Optional[str]) -> list[dict]:
        if home_id not in self.store.homes() and home_id not in self.matchers:
            raise HTTPException(404, f"unknown home {home_id!r}")
        out = []
        for rec_id in self.rec_order:
            rec = self.recommendations[rec_id]
            if rec.home_id != home_id:
                continue
            if status and rec.status.value != status:
                continue
            out.append(_rec_to_json(rec))
        out.sort(key=lambda r: (r["created_at"], r["recommendation_id"]))
        return out

    def submit_feedback(self, rec_id: str, verdict_raw: str, received_at: Optional[float]) -> dict:
        try:
            verdict = Verdict(verdict_raw)
        except ValueError:
            raise HTTPException(400, f"verdict must be 'useful' or 'not_useful', got {verdict_raw!r}")
        with self._lock:
            rec = self.recommendations.get(rec_id)
            if rec is None:
                raise HTTPException(404, f"unknown recommendation {rec_id!r}")
            if rec.status is not RecommendationStatus.PENDING:
                raise HTTPException(409, f"recommendation already resolved ({rec.status.value})")
            t = received_at if received_at is not None else max(rec.created_at, self.clocks.get(rec.home_id, rec.created_at))
            # write-ahead: the verdict line lands before state changes
            with open(self._feedback_path, "a") as f:
                f.write(
                    json.dumps(
                        {"recommendation_id": rec_id, "verdict": verdict.value, "received_at": t}, sort_keys=True
                    )
                    + "\n"
                )
            record_feedback(self.ledger, self.recommendations, self.db, rec_id, verdict, t)
            stats = self.ledger.stats_for(rec.rule_id)
            if stats.streak >= self.ledger.exclusion_streak:
                for matcher in self.matchers.values():
                    matcher.remove_rule(rec.rule_id)
                save_ruledb(self.db, self.config.ruledb_path)
            return {
                "recommendation_id": rec_id,
                "status": self.recommendations[rec_id].status.value,
                "rule_id": rec.rule_id,
                "rule_state": self.db.rules[rec.rule_id].state.value if rec.rule_id in self.db.rules else None,
                "streak": stats.streak,
            }

    def rules_census(self) -> dict:
        rows = []
        recommended_rules = {rec.rule_id for rec in self.recommendations.values()}
        for rule in sorted(self.db.rules.values(), key=lambda r: r.sort_key()):
            stats = self.ledger.stats.get(rule.rule_id)
            rows.append(
                {
                    "rule_id": rule.rule_id,
                    "home_id": rule.home_id,
                    "condition": [list(i) for i in rule.condition],
                    "condition_text": " then ".join(i.event_name for i in rule.condition),
                    "action": list(rule.action),
                    "action_text": rule.action.event_name,
                    "confidence": rule.confidence,
                    "priority": rule.priority,
                    "pattern_length": rule.pattern_length,
                    "pattern_support": rule.pattern_support,
                    "state": rule.state.value,
                    "useful": stats.useful if stats else 0,
                    "not_useful": stats.not_useful if stats else 0,
                    "streak": stats.streak if stats else 0,
                    "weighted_feedback": weighted_feedback(rule.rule_id, self.ledger),
                    "resulted_in_recommendations": rule.rule_id in recommended_rules,
                }
            )
        census = self.db.census()
        census["rules_with_recommendations"] = sum(1 for r in rows if r["resulted_in_recommendations"])
        by_status: dict[str, int] = {}
        for rec in self.recommendations.values():
            by_status[rec.status.value] = by_status.get(rec.status.value, 0) + 1
        return {
            "census": census,
            "recommendations_by_status": by_status,
            "rules": rows,
        }


def _topology_naming(topo) -> NamingFn:
    def naming(identity: EventIdentity) -> tuple[str, str]:
        return topo.subject_name(identity.subject_id), topo.room_name(identity.zone_id)

    return naming


def create_app(config: ServiceConfig, webhook_transport=None) -> FastAPI:
    state = ServiceState(config, webhook_transport)
    app = FastAPI(title="homesaver", version="0.1.0")
    app.state.service = state
    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware, allow_origins=config.cors_origins, allow_methods=["*"], allow_headers=["*"]
        )

    def auth(authorization: Optional[str] = Header(default=None)):
        if config.auth_token:
            if authorization != f"Bearer {config.auth_token}":
                raise HTTPException(401, "missing or invalid bearer token")

    @app.exception_handler(HTTPException)
    async def handle_http_error(request: Request, exc: HTTPException):
        return JSONResponse(status_code=exc.status_code, content={"error": exc.detail})

    @app.get("/health")
    def health():
        return {"status": "ok", "homes": state.store.homes(), "rules": len(state.db.rules)}

    @app.post("/homes/{home_id}/events", status_code=202, dependencies=[Depends(auth)])
    async def post_events(home_id: str, request: Request):
        try:
            payload = json.loads(await request.body())
        except json.JSONDecodeError:
            raise HTTPException(400, "request body is not valid json")
        return state.post_events(home_id, payload)

    @app.post("/homes/{home_id}/clock", dependencies=[Depends(auth)])
    async def post_clock(home_id: str, request: Request):
        try:
            payload = json.loads(await request.body())
            now = payload["now"]
        except (json.JSONDecodeError, KeyError, TypeError):
            raise HTTPException(400, "body must be {'now': <timestamp>}")
        from .ingest import parse_event_timestamp

        try:
            ts = parse_event_timestamp(now)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return state.advance_clock(home_id, ts)

    @app.get("/homes/{home_id}/recommendations", dependencies=[Depends(auth)])
    def get_recommendations(home_id: str, status: Optional[str] = None):
        return state.recommendations_for(home_id, status)

    @app.post("/recommendations/{rec_id}/feedback", dependencies=[Depends(auth)])
    async def post_feedback(rec_id: str, request: Request):
        try:
            payload = json.loads(await request.body())
        except json.JSONDecodeError:
            raise HTTPException(400, "request body is not valid json")
        if isinstance(payload, str):
            verdict_raw, received_at = payload, None
        elif isinstance(payload, dict):
            verdict_raw = payload.get("verdict")
            received_at = payload.get("received_at")
            if received_at is not None:
                from .ingest import parse_event_timestamp

                received_at = parse_event_timestamp(received_at)
        else:
            raise HTTPException(400, "body must be a verdict string or object")
        return state.submit_feedback(rec_id, verdict_raw, received_at)

    @app.get("/rules", dependencies=[Depends(auth)])
    def get_rules():
        return state.rules_census()

    return app
