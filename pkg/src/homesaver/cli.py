"""Single entry point wiring the whole pipeline:

    simulate -> ingest -> mine -> rules derive -> replay -> evaluate
    serve / feedback stats / adapt / bench

Every subcommand is deterministic given identical inputs, seeds and configs;
reporting commands take ``--json`` for machine-readable output. Flag values
beat config-file entries beat built-in defaults.
"""

from __future__ import annotations

import json
import os
import sys

import click

from . import __version__
from .config import Settings
from .domain import DEFAULT_CATALOG, EventClass, EventIdentity, Pattern, Verdict
from .feedback import FeedbackLedger, adapt_phase2, fit_regression, record_feedback, weighted_feedback
from .ingest import EventStore, format_event_timestamp, load_path, parse_event_timestamp
from .matching import MatchConfig, identity_naming, replay
from .mining import MiningConfig, filter_relevant, mine_patterns, run_benchmark
from .rules import RuleDB, build_ruledb, load_ruledb, save_ruledb
from .simulate import GroundTruth, ScriptedInhabitant, SimConfig, evaluate, generate, load_topologies, write_corpus

PATTERNS_FORMAT = "homesaver-patterns"


def _fail(message: str) -> "click.exceptions.Exit":
    click.echo(json.dumps({"error": message}), err=True)
    return click.exceptions.Exit(1)


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, sort_keys=True))


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Key=value config file; flags override its entries.")
@click.pass_context
def main(ctx, config_path):
    """Smart-home energy-saving recommender pipeline."""
    ctx.obj = Settings(config_path)


# ---------------------------------------------------------------------------


@main.command()
@click.option("--seed", type=int, default=None)
@click.option("--homes", type=int, default=None)
@click.option("--days", type=int, default=None)
@click.option("--start-day", type=int, default=None, help="Global day offset (lets splits share homes).")
@click.option("--forget", type=float, default=None, help="Probability a routine's action is forgotten.")
@click.option("--noise-rate", type=float, default=None, help="Unrelated events per hour.")
@click.option("--routines", type=int, default=None, help="Routines per home.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def simulate(settings, seed, homes, days, start_day, forget, noise_rate, routines, out_dir, as_json):
    """Generate a deterministic synthetic corpus with ground truth."""
    forget = settings.get("forget", forget, 0.1)
    if not 0.0 <= forget <= 1.0:
        raise click.UsageError(f"--forget must be in [0, 1], got {forget}")
    cfg = SimConfig(
        seed=settings.get("seed", seed, 7),
        homes=settings.get("homes", homes, 8),
        days=settings.get("days", days, 34),
        start_day=settings.get("start_day", start_day, 0),
        forget_probability=forget,
        noise_rate=settings.get("noise_rate", noise_rate, 2.0),
        routines_per_home=settings.get("routines", routines, 3),
    )
    result = generate(cfg)
    write_corpus(result, out_dir)
    total = sum(len(v) for v in result.events_by_home.values())
    info = {
        "homes": cfg.homes,
        "days": cfg.days,
        "events": total,
        "routine_instances": len(result.truth.instances),
        "forgotten": len(result.truth.forgotten()),
        "out": out_dir,
    }
    _echo_json(info) if as_json else click.echo(
        f"simulated {cfg.homes} homes x {cfg.days} days: {total} events, "
        f"{len(result.truth.instances)} routine instances ({len(result.truth.forgotten())} forgotten) -> {out_dir}"
    )


@main.command()
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None, type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def ingest(settings, fmt, in_path, store_dir, as_json):
    """Parse log files into the per-home event store."""
    store_dir = settings.get("store", store_dir, None)
    if not store_dir:
        raise click.UsageError("--store is required (flag or config)")
    store = EventStore(store_dir)
    report = load_path(in_path, store, fmt)
    _echo_json(report.as_dict()) if as_json else click.echo(report.summary())


def _patterns_to_file(patterns: list[Pattern], path: str) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"format": PATTERNS_FORMAT, "version": 1}) + "\n")
        for p in patterns:
            f.write(
                json.dumps(
                    {
                        "home_id": p.home_id,
                        "items": [list(i) for i in p.items],
                        "classes": [c.value for c in p.classes],
                        "support_count": p.support_count,
                        "support": p.support,
                        "first_mined": p.first_mined,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def _patterns_from_file(path: str) -> list[Pattern]:
    out = []
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != PATTERNS_FORMAT:
            raise ValueError(f"{path}: not a patterns file")
        for line in f:
            if not line.strip():
                continue
            raw = json.loads(line)
            out.append(
                Pattern(
                    items=tuple(EventIdentity(*i) for i in raw["items"]),
                    classes=tuple(EventClass(c) for c in raw["classes"]),
                    support_count=raw["support_count"],
                    support=raw["support"],
                    home_id=raw["home_id"],
                    first_mined=raw["first_mined"],
                )
            )
    return out


def _mining_config(settings, min_support, min_len, max_len, max_gap, overlap) -> MiningConfig:
    min_support = settings.get("min_support", min_support, 0.001)
    if not 0.0 < min_support <= 1.0:
        raise click.UsageError(f"--min-support must be in (0, 1], got {min_support}")
    min_len = settings.get("min_len", min_len, 3)
    max_len = settings.get("max_len", max_len, 7)
    if min_len < 3 or max_len < min_len:
        raise click.UsageError(f"need 3 <= min-len <= max-len, got {min_len}..{max_len}")
    max_gap = settings.get("max_gap", max_gap, 600.0)
    if max_gap <= 0:
        raise click.UsageError("--max-gap must be positive seconds")
    return MiningConfig(
        min_length=min_len,
        max_length=max_len,
        min_support=min_support,
        max_gap=max_gap,
        allow_overlap=settings.get("allow_overlap", overlap, True),
    )


@main.command()
@click.option("--store", "store_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--home", "home_id", default="all", help="Home id or 'all'.")
@click.option("--min-support", type=float, default=None)
@click.option("--min-len", type=int, default=None)
@click.option("--max-len", type=int, default=None)
@click.option("--max-gap", type=float, default=None, help="Seconds between consecutive pattern items.")
@click.option("--algo", type=click.Choice(["growth", "levelwise", "oracle"]), default="growth")
@click.option("--relevant/--all-patterns", "relevant", default=True, help="Keep only action-bearing patterns.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def mine(settings, store_dir, home_id, min_support, min_len, max_len, max_gap, algo, relevant, out_path, as_json):
    """Mine frequent patterns from the event store."""
    store_dir = settings.get("store", store_dir, None)
    if not store_dir:
        raise click.UsageError("--store is required (flag or config)")
    cfg = _mining_config(settings, min_support, min_len, max_len, max_gap, None)
    store = EventStore(store_dir)
    homes = store.homes() if home_id == "all" else [home_id]
    for h in homes:
        if h not in store.homes():
            raise _fail(f"unknown home {h!r} in store {store_dir}")
    all_patterns: list[Pattern] = []
    per_home = {}
    for h in homes:
        events = store.events(h)
        # mined_date: newest event time, so reruns on identical data are identical
        mined_at = events[-1].timestamp if events else 0.0
        patterns = mine_patterns(events, cfg, algo, DEFAULT_CATALOG, mined_at=mined_at)
        if relevant:
            patterns = filter_relevant(patterns, DEFAULT_CATALOG)
        per_home[h] = len(patterns)
        all_patterns.extend(patterns)
    _patterns_to_file(all_patterns, out_path)
    info = {"patterns": len(all_patterns), "homes": per_home, "algo": algo, "out": out_path}
    _echo_json(info) if as_json else click.echo(
        f"mined {len(all_patterns)} relevant patterns from {len(homes)} home(s) with {algo} -> {out_path}"
    )


@main.group()
def rules():
    """Derive and inspect the association-rule database."""


@rules.command("derive")
@click.option("--store", "store_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--patterns", "patterns_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--min-support", type=float, default=None)
@click.option("--min-len", type=int, default=None)
@click.option("--max-len", type=int, default=None)
@click.option("--max-gap", type=float, default=None)
@click.option("--threshold", type=float, default=None, help="Priority threshold (rules below go inactive).")
@click.option("--exclude-absent/--keep-absent", default=False, help="Exclude rules recommending 'absent'.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def rules_derive(settings, store_dir, patterns_path, min_support, min_len, max_len, max_gap, threshold,
                 exclude_absent, out_path, as_json):
    """Convert relevant patterns into prioritized association rules."""
    store_dir = settings.get("store", store_dir, None)
    if not store_dir:
        raise click.UsageError("--store is required (flag or config)")
    cfg = _mining_config(settings, min_support, min_len, max_len, max_gap, None)
    store = EventStore(store_dir)
    patterns = _patterns_from_file(patterns_path)
    db = RuleDB()
    db.priority_threshold = settings.get("threshold", threshold, 0.0)
    db.exclude_absent_actions = exclude_absent
    from .rules import apply_policies, compute_confidence, derive_rules
    from .mining import columns_for

    by_home: dict[str, list[Pattern]] = {}
    for p in patterns:
        by_home.setdefault(p.home_id, []).append(p)
    for home_id in sorted(by_home):
        events = store.events(home_id)
        if not events:
            raise _fail(f"store has no events for home {home_id!r} referenced by patterns")
        cols = columns_for(events)
        for pattern in by_home[home_id]:
            for rule in derive_rules(pattern, DEFAULT_CATALOG):
                if rule.rule_id in db.rules:
                    continue
                rule.confidence = compute_confidence(rule, events, cfg, cols=cols)
                db.add(rule)
    apply_policies(db)
    save_ruledb(db, out_path)
    info = {"rules": len(db.rules), "census": db.census(), "out": out_path}
    _echo_json(info) if as_json else click.echo(f"derived {len(db.rules)} rules -> {out_path}")


@rules.command("list")
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--state", "state_filter", default=None,
              type=click.Choice(["active", "below_threshold", "excluded_by_feedback", "excluded_by_policy"]))
@click.option("--json", "as_json", is_flag=True)
def rules_list(rules_path, state_filter, as_json):
    """List rules, optionally filtered by state."""
    db = load_ruledb(rules_path)
    rows = [r for r in sorted(db.rules.values(), key=lambda r: r.sort_key())
            if state_filter is None or r.state.value == state_filter]
    if as_json:
        _echo_json(
            [
                {
                    "rule_id": r.rule_id,
                    "home_id": r.home_id,
                    "condition": [i.event_name for i in r.condition],
                    "action": r.action.event_name,
                    "confidence": r.confidence,
                    "priority": r.priority,
                    "state": r.state.value,
                }
                for r in rows
            ]
        )
    else:
        click.echo(f"{len(rows)} rule(s)  (census: {db.census()})")
        for r in rows:
            cond = " + ".join(i.event_name for i in r.condition)
            click.echo(f"  [{r.state.value:>18}] p={r.priority:.4f} c={r.confidence:.4f} {cond} => {r.action.event_name}")


@main.command()
@click.option("--store", "store_dir", default=None, type=click.Path(exists=True, file_okay=False))
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--home", "home_id", default="all")
@click.option("--topology", "topology_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--max-gap", type=float, default=None)
@click.option("--action-wait", type=float, default=None)
@click.option("--cooldown", type=float, default=None)
@click.option("--order-insensitive", is_flag=True, default=False)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def replay_cmd(settings, store_dir, rules_path, home_id, topology_path, max_gap, action_wait, cooldown,
               order_insensitive, out_path, as_json):
    """Replay stored events through the matcher, writing recommendations."""
    store_dir = settings.get("store", store_dir, None)
    if not store_dir:
        raise click.UsageError("--store is required (flag or config)")
    cfg = MatchConfig(
        max_gap=settings.get("max_gap", max_gap, 600.0),
        action_wait=settings.get("action_wait", action_wait, 300.0),
        cooldown=settings.get("cooldown", cooldown, 3600.0),
        order_insensitive=order_insensitive,
    )
    store = EventStore(store_dir)
    db = load_ruledb(rules_path)
    naming_by_home = {}
    if topology_path:
        naming_by_home = {
            h: _topology_naming(t) for h, t in load_topologies(topology_path).items()
        }
    homes = store.homes() if home_id == "all" else [home_id]
    from .service import _rec_to_json

    total = 0
    with open(out_path, "w") as f:
        for h in homes:
            events = store.events(h)
            recs = replay(events, db, cfg, naming=naming_by_home.get(h, identity_naming), home_id=h)
            total += len(recs)
            for rec in recs:
                f.write(json.dumps(_rec_to_json(rec), sort_keys=True) + "\n")
    info = {"recommendations": total, "homes": len(homes), "out": out_path}
    _echo_json(info) if as_json else click.echo(f"replayed {len(homes)} home(s): {total} recommendations -> {out_path}")


def _topology_naming(topo):
    def naming(identity: EventIdentity):
        return topo.subject_name(identity.subject_id), topo.room_name(identity.zone_id)

    return naming


@main.command()
@click.option("--algos", default="growth,levelwise,oracle", help="Comma-separated algorithm names.")
@click.option("--events", "n_events", type=int, default=100_000)
@click.option("--seed", type=int, default=7)
@click.option("--min-support", type=float, default=0.01)
@click.option("--max-gap", type=float, default=600.0)
@click.option("--json", "as_json", is_flag=True)
def bench(algos, n_events, seed, min_support, max_gap, as_json):
    """Benchmark mining algorithms on one synthetic home; sets must agree."""
    algo_list = [a.strip() for a in algos.split(",") if a.strip()]
    if len(algo_list) < 2:
        raise click.UsageError("--algos needs at least two comma-separated names")
    for a in algo_list:
        if a not in ("growth", "levelwise", "oracle"):
            raise click.UsageError(f"unknown algorithm {a!r} (choose from growth, levelwise, oracle)")
    if not 0.0 < min_support <= 1.0:
        raise click.UsageError(f"--min-support must be in (0, 1], got {min_support}")
    from .benchdata import benchmark_events

    events = benchmark_events(seed=seed, n=n_events)
    cfg = MiningConfig(min_support=min_support, max_gap=max_gap)
    report = run_benchmark(events, cfg, algo_list)
    if as_json:
        _echo_json({"events": report.events, "results": report.as_rows()})
    else:
        click.echo(f"benchmark on {report.events} events (min_support={min_support}, max_gap={max_gap:.0f}s)")
        click.echo(f"{'algo':<12}{'runtime_s':>12}{'patterns':>10}  set_hash")
        for row in report.as_rows():
            click.echo(f"{row['algo']:<12}{row['runtime_s']:>12.3f}{row['patterns']:>10}  {row['set_hash'][:16]}")
        click.echo("pattern sets identical across algorithms")


def _load_ledger(data_dir: str, rec_by_id) -> FeedbackLedger:
    ledger = FeedbackLedger()
    path = os.path.join(data_dir, "feedback.jsonl")
    if os.path.exists(path):
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                raw = json.loads(line)
                rec = rec_by_id.get(raw["recommendation_id"])
                if rec is None:
                    continue
                from .domain import FeedbackEntry

                entry = FeedbackEntry(raw["recommendation_id"], rec["rule_id"], Verdict(raw["verdict"]), raw["received_at"])
                ledger.entries.append(entry)
        for rule_id, stats in ledger.recomputed_stats().items():
            ledger.stats[rule_id] = stats
    return ledger


def _load_recs_file(path: str) -> dict[str, dict]:
    out = {}
    with open(path) as f:
        for line in f:
            if line.strip():
                raw = json.loads(line)
                out[raw["recommendation_id"]] = raw
    return out


@main.group()
def feedback():
    """Inspect recorded inhabitant feedback."""


@feedback.command("stats")
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--json", "as_json", is_flag=True)
def feedback_stats(rules_path, data_dir, as_json):
    """Per-rule feedback aggregates and weighted feedback."""
    db = load_ruledb(rules_path)
    recs = _load_recs_file(os.path.join(data_dir, "recommendations.jsonl"))
    ledger = _load_ledger(data_dir, recs)
    rows = []
    for rule in sorted(db.rules.values(), key=lambda r: r.sort_key()):
        stats = ledger.stats.get(rule.rule_id)
        rows.append(
            {
                "rule_id": rule.rule_id,
                "state": rule.state.value,
                "useful": stats.useful if stats else 0,
                "not_useful": stats.not_useful if stats else 0,
                "streak": stats.streak if stats else 0,
                "weighted_feedback": weighted_feedback(rule.rule_id, ledger),
            }
        )
    if as_json:
        _echo_json(rows)
    else:
        click.echo(f"{'rule_id':<16}{'state':<20}{'useful':>7}{'not':>5}{'streak':>7}  weighted")
        for r in rows:
            wf = "-" if r["weighted_feedback"] is None else f"{r['weighted_feedback']:+.3f}"
            click.echo(f"{r['rule_id']:<16}{r['state']:<20}{r['useful']:>7}{r['not_useful']:>5}{r['streak']:>7}  {wf}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Service data dir holding recommendations.jsonl and feedback.jsonl.")
@click.option("--threshold", type=float, required=True)
@click.option("--fit/--no-fit", "do_fit", default=True, help="Refit priority weights from feedback.")
@click.option("--json", "as_json", is_flag=True)
def adapt(in_path, out_path, data_dir, threshold, do_fit, as_json):
    """Phase adaptation: drop streak-excluded rules, refit, prune, reset."""
    db = load_ruledb(in_path)
    recs = _load_recs_file(os.path.join(data_dir, "recommendations.jsonl"))
    ledger = _load_ledger(data_dir, recs)
    # reapply streak exclusions so the input db state reflects the ledger
    for rule_id, stats in ledger.stats.items():
        if stats.streak >= ledger.exclusion_streak and rule_id in db.rules:
            from .domain import RuleState

            if db.rules[rule_id].state is not RuleState.EXCLUDED_BY_POLICY:
                db.rules[rule_id].state = RuleState.EXCLUDED_BY_FEEDBACK
    fit = None
    if do_fit:
        try:
            fit = fit_regression(ledger, db.rules)
        except Exception as exc:
            raise _fail(f"regression failed: {exc}")
    db, _, report = adapt_phase2(db, fit, threshold, ledger)
    save_ruledb(db, out_path)
    payload = {
        "census_before": report.census_before,
        "census_after": report.census_after,
        "removed_rules": report.removed_rules,
        "weights": {"beta_confidence": report.weights.beta_confidence, "beta_length": report.weights.beta_length},
        "threshold": report.priority_threshold,
        "out": out_path,
    }
    if as_json:
        _echo_json(payload)
    else:
        click.echo("phase adaptation census (before -> after):")
        for key in sorted(set(report.census_before) | set(report.census_after)):
            click.echo(f"  {key:>22}: {report.census_before.get(key, 0):>4} -> {report.census_after.get(key, 0):>4}")
        click.echo(f"removed {len(report.removed_rules)} feedback-excluded rule(s); "
                   f"weights=({report.weights.beta_confidence:.4f}, {report.weights.beta_length:.4f}) "
                   f"threshold={threshold}")


@main.command("evaluate")
@click.option("--recs", "recs_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--window", type=float, default=1800.0, help="Seconds around the expected action.")
@click.option("--json", "as_json", is_flag=True)
def evaluate_cmd(recs_path, truth_path, window, as_json):
    """Score recommendations against simulator ground truth."""
    truth = GroundTruth.load(truth_path)
    raw_recs = _load_recs_file(recs_path)
    from .domain import Recommendation, RecommendationStatus

    recs = []
    for raw in raw_recs.values():
        recs.append(
            Recommendation(
                recommendation_id=raw["recommendation_id"],
                home_id=raw["home_id"],
                rule_id=raw["rule_id"],
                action=EventIdentity(*raw["action"]),
                text=raw["text"],
                trigger_events=(),
                created_at=parse_event_timestamp(raw["created_at"]),
                status=RecommendationStatus(raw["status"]),
            )
        )
    metrics = evaluate(recs, truth, window)
    if as_json:
        _echo_json(metrics.as_dict())
    else:
        d = metrics.as_dict()
        click.echo("evaluation vs ground truth:")
        for key in ("recommendations", "true_positives", "forgotten_instances", "matched_instances",
                    "recall", "precision", "recs_per_day_per_home"):
            click.echo(f"  {key:>22}: {d[key]}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
def serve(config_path):
    """Run the HTTP service (config keys: store, rules, data, topology, token, host, port)."""
    import uvicorn

    from .service import ServiceConfig, create_app

    settings = Settings(config_path)
    base = settings.base_dir

    def path_of(key, default=None, required=False):
        raw = settings.get(key, None, default)
        if raw is None:
            if required:
                raise click.UsageError(f"config key {key!r} is required")
            return None
        return raw if os.path.isabs(raw) else os.path.join(base, raw)

    cfg = ServiceConfig(
        store_dir=path_of("store", required=True),
        ruledb_path=path_of("rules", required=True),
        data_dir=path_of("data", required=True),
        topology_path=path_of("topology"),
        auth_token=settings.get("token", None, None),
        host=settings.get("host", None, "127.0.0.1"),
        port=settings.get("port", None, 8799),
        max_gap=settings.get("max_gap", None, 600.0),
        action_wait=settings.get("action_wait", None, 300.0),
        cooldown=settings.get("cooldown", None, 3600.0),
        reorder_tolerance=settings.get("reorder_tolerance", None, 60.0),
    )
    app = create_app(cfg)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")


main.add_command(replay_cmd, name="replay")

if __name__ == "__main__":
    sys.exit(main())
