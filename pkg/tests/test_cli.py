import json
import os

import pytest
from click.testing import CliRunner

from homesaver.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_help_on_every_subcommand(runner):
    commands = [
        [], ["simulate"], ["ingest"], ["mine"], ["rules"], ["rules", "derive"], ["rules", "list"],
        ["replay"], ["bench"], ["feedback"], ["feedback", "stats"], ["adapt"], ["evaluate"], ["serve"],
    ]
    for cmd in commands:
        result = runner.invoke(main, cmd + ["--help"])
        assert result.exit_code == 0, (cmd, result.output)
        assert "Usage" in result.output


def test_unknown_subcommand_exits_2(runner):
    result = runner.invoke(main, ["frobnicate"])
    assert result.exit_code == 2
    assert "Usage" in result.output or "No such command" in result.output


def test_min_support_validation_exits_2(runner, tmp_path):
    store = tmp_path / "store"
    store.mkdir()
    result = runner.invoke(
        main, ["mine", "--store", str(store), "--min-support", "2", "--out", str(tmp_path / "p.jsonl")]
    )
    assert result.exit_code == 2
    assert "min-support" in result.output


def test_bench_rejects_unknown_algo(runner):
    result = runner.invoke(main, ["bench", "--algos", "growth,bide", "--events", "100"])
    assert result.exit_code == 2
    assert "bide" in result.output


def test_full_pipeline_golden(runner, tmp_path):
    out = str(tmp_path / "sim")
    store = str(tmp_path / "store")
    # train split: clean habits
    run_ok(runner, ["simulate", "--seed", "3", "--homes", "2", "--days", "12", "--forget", "0",
                    "--routines", "2", "--noise-rate", "0.4", "--out", out])
    run_ok(runner, ["ingest", "--format", "jsonl", "--in", os.path.join(out, "events"), "--store", store])
    patterns = str(tmp_path / "patterns.jsonl")
    r = run_ok(runner, ["mine", "--store", store, "--home", "all", "--min-support", "0.005",
                        "--algo", "growth", "--out", patterns, "--json"])
    assert json.loads(r.output)["patterns"] > 0
    ruledb = str(tmp_path / "rules.jsonl")
    run_ok(runner, ["rules", "derive", "--store", store, "--patterns", patterns,
                    "--min-support", "0.005", "--out", ruledb])
    r = run_ok(runner, ["rules", "list", "--rules", ruledb, "--state", "active", "--json"])
    assert len(json.loads(r.output)) > 0

    # eval split: forgetful phase, fresh store
    out2 = str(tmp_path / "sim2")
    store2 = str(tmp_path / "store2")
    run_ok(runner, ["simulate", "--seed", "3", "--homes", "2", "--days", "12", "--start-day", "12",
                    "--forget", "0.3", "--routines", "2", "--noise-rate", "0.4", "--out", out2])
    run_ok(runner, ["ingest", "--in", os.path.join(out2, "events"), "--store", store2])
    recs = str(tmp_path / "recs.jsonl")
    r = run_ok(runner, ["replay", "--store", store2, "--rules", ruledb, "--home", "all",
                        "--topology", os.path.join(out2, "topology.json"), "--out", recs, "--json"])
    assert json.loads(r.output)["recommendations"] > 0
    r = run_ok(runner, ["evaluate", "--recs", recs, "--truth", os.path.join(out2, "truth.jsonl"), "--json"])
    metrics = json.loads(r.output)
    assert metrics["recall"] >= 0.9
    assert metrics["precision"] >= 0.8


def test_simulate_deterministic_files(runner, tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        run_ok(runner, ["simulate", "--seed", "5", "--homes", "1", "--days", "3", "--out", out])
    fa = os.path.join(a, "events", "events-home-00.jsonl")
    fb = os.path.join(b, "events", "events-home-00.jsonl")
    assert open(fa).read() == open(fb).read()


def test_bench_small(runner):
    r = run_ok(runner, ["bench", "--algos", "growth,levelwise", "--events", "1500",
                        "--min-support", "0.01", "--json"])
    body = json.loads(r.output)
    hashes = {row["set_hash"] for row in body["results"]}
    assert len(hashes) == 1
    assert all(row["runtime_s"] > 0 for row in body["results"])


def test_config_file_provides_defaults(runner, tmp_path):
    out = str(tmp_path / "sim")
    store = str(tmp_path / "store")
    cfg = tmp_path / "homesaver.conf"
    cfg.write_text(f"store = {store}\nmin_support = 0.005\n")
    run_ok(runner, ["simulate", "--seed", "3", "--homes", "1", "--days", "6", "--forget", "0",
                    "--out", out])
    run_ok(runner, ["--config", str(cfg), "ingest", "--in", os.path.join(out, "events")])
    patterns = str(tmp_path / "p.jsonl")
    run_ok(runner, ["--config", str(cfg), "mine", "--out", patterns])
    assert os.path.exists(patterns)


def test_adapt_and_feedback_stats(runner, tmp_path):
    # seed a tiny service-shaped data dir by hand
    from homesaver.rules import RuleDB, recompute, save_ruledb
    from conftest import make_rule

    db = RuleDB()
    rules = [make_rule([f"a{i}", f"b{i}"], f"c{i}", confidence=0.3 + 0.2 * i) for i in range(3)]
    for r in rules:
        db.add(r)
    recompute(db)
    ruledb = str(tmp_path / "rules.jsonl")
    save_ruledb(db, ruledb)
    data = tmp_path / "data"
    data.mkdir()
    with open(data / "recommendations.jsonl", "w") as f:
        for i, rule in enumerate(rules):
            for k in range(12):
                f.write(json.dumps({
                    "recommendation_id": f"rec-{i}-{k}", "home_id": "h1", "rule_id": rule.rule_id,
                    "action": list(rule.action), "text": "t", "created_at": "2014-11-01T10:00:00Z",
                    "status": "not_useful", "trigger_events": [],
                }) + "\n")
    with open(data / "feedback.jsonl", "w") as f:
        # rule 0: 12 consecutive negatives -> excluded; others mixed
        for k in range(12):
            f.write(json.dumps({"recommendation_id": f"rec-0-{k}", "verdict": "not_useful", "received_at": k}) + "\n")
        for k in range(6):
            f.write(json.dumps({"recommendation_id": f"rec-1-{k}", "verdict": "useful", "received_at": k}) + "\n")
        for k in range(6):
            f.write(json.dumps({"recommendation_id": f"rec-2-{k}",
                                "verdict": "useful" if k % 2 else "not_useful", "received_at": k}) + "\n")
    r = run_ok(runner, ["feedback", "stats", "--rules", ruledb, "--data", str(data), "--json"])
    rows = json.loads(r.output)
    assert any(row["streak"] >= 10 for row in rows)
    out_db = str(tmp_path / "rules2.jsonl")
    r = run_ok(runner, ["adapt", "--in", ruledb, "--out", out_db, "--data", str(data),
                        "--threshold", "0.1", "--json"])
    body = json.loads(r.output)
    assert body["census_before"]["total"] == 3
    assert body["census_after"]["total"] == 2
    assert len(body["removed_rules"]) == 1


def test_replay_errors_are_machine_parseable(runner, tmp_path):
    store = tmp_path / "store"
    store.mkdir()
    result = runner.invoke(main, ["mine", "--store", str(store), "--home", "missing",
                                  "--out", str(tmp_path / "p.jsonl")])
    assert result.exit_code == 1
    line = result.output.strip().splitlines()[-1]
    assert json.loads(line)["error"]
