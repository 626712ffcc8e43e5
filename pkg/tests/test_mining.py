import random

import pytest
from hypothesis import given, settings, strategies as st

from homesaver.domain import EventClass, EventRecord, Pattern
from homesaver.mining import (
    BenchmarkMismatch,
    MiningConfig,
    count_support,
    filter_relevant,
    mine_pattern_counts,
    mine_patterns,
    pattern_set_hash,
    run_benchmark,
)

from conftest import ev, ident, structured_log


def abc_blocks(repeats=100, names=("turn on a", "turn on b", "turn off c"), gap_in=30.0, gap_between=1200.0):
    events = []
    t = 0.0
    for _ in range(repeats):
        for name in names:
            t += gap_in
            events.append(ev(t, name))
        t += gap_between
    return events


def test_empty_log_mines_nothing():
    assert mine_patterns([], MiningConfig()) == []


def test_planted_block_pattern_counted_exactly():
    # brute-force oracle over the constructed log agrees and gives 100
    events = abc_blocks(100)
    cfg = MiningConfig(min_support=0.01, max_gap=600.0)
    counts = mine_pattern_counts(events, cfg, "growth")
    key = (ident("turn on a"), ident("turn on b"), ident("turn off c"))
    assert counts[key] == 100
    assert mine_pattern_counts(events, cfg, "oracle")[key] == 100


def test_patterns_carry_classes_and_support_fraction():
    events = abc_blocks(50)
    cfg = MiningConfig(min_support=0.01)
    patterns = mine_patterns(events, cfg)
    by_key = {p.items: p for p in patterns}
    p = by_key[(ident("turn on a"), ident("turn on b"), ident("turn off c"))]
    assert p.classes == (EventClass.NORMAL, EventClass.NORMAL, EventClass.ACTION)
    assert p.support == pytest.approx(50 / len(events))
    assert p.support_count == 50


def test_count_support_singleton():
    events = [ev(i, "A") for i in range(3)]
    count, occs = count_support([ident("A")], events, MiningConfig(max_gap=10.0))
    assert count == 3
    assert [o.item_timestamps for o in occs] == [(0.0,), (1.0,), (2.0,)]


def test_count_support_overlapping_pairs():
    events = [ev(0, "A"), ev(1, "A"), ev(2, "B")]
    count, occs = count_support([ident("A"), ident("B")], events, MiningConfig(max_gap=10.0))
    assert count == 2  # one occurrence per starting event
    assert [o.item_timestamps for o in occs] == [(0.0, 2.0), (1.0, 2.0)]


def test_count_support_respects_gap():
    events = [ev(0, "A"), ev(5, "x"), ev(2000, "B")]
    count, _ = count_support([ident("A"), ident("B")], events, MiningConfig(max_gap=600.0))
    assert count == 0


def test_count_support_requires_strict_time_increase():
    events = [ev(0, "A"), ev(0, "B")]
    count, _ = count_support([ident("A"), ident("B")], events, MiningConfig(max_gap=600.0))
    assert count == 0


def test_count_support_nonoverlap_greedy():
    cfg = MiningConfig(max_gap=10.0, allow_overlap=False)
    # consecutive: each occurrence must start after the previous one ends,
    # so A(0)..B(2) consumes the window and A(1) cannot start another
    events = [ev(0, "A"), ev(1, "A"), ev(2, "B"), ev(3, "B")]
    count, occs = count_support([ident("A"), ident("B")], events, cfg)
    assert count == 1
    assert [o.item_timestamps for o in occs] == [(0.0, 2.0)]
    # back-to-back blocks count separately
    events = [ev(0, "A"), ev(1, "B"), ev(2, "A"), ev(3, "B")]
    count, occs = count_support([ident("A"), ident("B")], events, cfg)
    assert count == 2
    assert [o.item_timestamps for o in occs] == [(0.0, 1.0), (2.0, 3.0)]


def test_count_support_backtracks_when_greedy_choice_dies():
    # choosing the first B kills the chain; a later B completes it
    events = [ev(0.0, "A"), ev(1.0, "B"), ev(2.0, "B"), ev(5.0, "C")]
    cfg = MiningConfig(max_gap=3.0)
    count, occs = count_support([ident("A"), ident("B"), ident("C")], events, cfg)
    assert count == 1
    assert occs[0].item_timestamps == (0.0, 2.0, 5.0)


def test_filter_relevant_keeps_action_patterns():
    def pat(names, classes):
        return Pattern(
            items=tuple(ident(n) for n in names),
            classes=tuple(classes),
            support_count=5,
            support=0.01,
            home_id="h1",
        )

    A, N = EventClass.ACTION, EventClass.NORMAL
    keep = pat(["turn on light in kitchen", "motion detector garage", "turn off light stairs"], [N, N, A])
    keep_two_actions = pat(["turn on a", "turn on b", "turn off c", "turn off d"], [N, N, A, A])
    drop_len = pat(["on", "off x"], [N, A])
    drop_no_action = pat(["a", "b", "c"], [N, N, N])
    # one normal cannot serve as a two-event condition, even with actions present
    drop_one_normal = pat(["turn on light laundry", "turn off light laundry", "turn off light basement"], [N, A, A])
    kept = filter_relevant([keep, keep_two_actions, drop_len, drop_no_action, drop_one_normal])
    assert kept == [keep, keep_two_actions]


def test_no_reported_pattern_violates_bounds():
    events = structured_log(3, 800, 12)
    cfg = MiningConfig(min_support=0.005, max_gap=600.0)
    patterns = mine_patterns(events, cfg)
    min_count = cfg.min_count(len(events))
    assert patterns
    for p in patterns:
        assert 3 <= p.length <= 7
        assert p.support_count >= min_count
        assert p.support == p.support_count / len(events)


def test_mining_deterministic():
    events = structured_log(9, 600, 10)
    cfg = MiningConfig(min_support=0.002)
    a = mine_pattern_counts(events, cfg, "growth")
    b = mine_pattern_counts(events, cfg, "growth")
    assert a == b


def test_config_validation():
    with pytest.raises(ValueError):
        MiningConfig(min_length=2)
    with pytest.raises(ValueError):
        MiningConfig(min_length=5, max_length=4)
    with pytest.raises(ValueError):
        MiningConfig(min_support=0.0)
    with pytest.raises(ValueError):
        MiningConfig(min_support=1.5)
    with pytest.raises(ValueError):
        MiningConfig(wildcards=True)


def test_unknown_algorithm_rejected():
    with pytest.raises(ValueError, match="unknown mining algorithm"):
        mine_pattern_counts([ev(0, "a")], MiningConfig(), "bide")


@st.composite
def small_logs(draw):
    n = draw(st.integers(min_value=0, max_value=70))
    alphabet = draw(st.integers(min_value=2, max_value=6))
    gaps = draw(st.lists(st.sampled_from([0.0, 1.0, 5.0, 30.0, 200.0]), min_size=n, max_size=n))
    names = draw(st.lists(st.integers(min_value=0, max_value=alphabet - 1), min_size=n, max_size=n))
    t = 0.0
    events = []
    for gap, name in zip(gaps, names):
        t += gap
        events.append(ev(t, f"n{name}"))
    return events


@settings(max_examples=60, deadline=None)
@given(events=small_logs(), min_support=st.sampled_from([0.01, 0.05, 0.2]),
       max_gap=st.sampled_from([10.0, 60.0, 300.0]), overlap=st.booleans())
def test_miners_agree_with_oracle(events, min_support, max_gap, overlap):
    cfg = MiningConfig(min_support=min_support, max_gap=max_gap, allow_overlap=overlap, max_length=5)
    growth = mine_pattern_counts(events, cfg, "growth")
    oracle = mine_pattern_counts(events, cfg, "oracle")
    levelwise = mine_pattern_counts(events, cfg, "levelwise")
    assert growth == oracle
    assert levelwise == oracle


@settings(max_examples=40, deadline=None)
@given(events=small_logs(), extension=st.integers(min_value=0, max_value=5))
def test_support_anti_monotone_under_extension(events, extension):
    if len(events) < 4:
        return
    cfg = MiningConfig(max_gap=60.0)
    base = [events[0].identity, events[1].identity]
    extra = events[min(extension, len(events) - 1)].identity
    c_base, _ = count_support(base, events, cfg, with_occurrences=False)
    c_ext, _ = count_support(base + [extra], events, cfg, with_occurrences=False)
    assert c_ext <= c_base


def test_closed_reduction_drops_shadowed_patterns():
    events = abc_blocks(30)
    cfg = MiningConfig(min_support=0.01, closed_only=True)
    closed = mine_pattern_counts(events, cfg, "growth")
    assert closed == mine_pattern_counts(events, cfg, "oracle")
    full = mine_pattern_counts(events, MiningConfig(min_support=0.01), "growth")
    assert set(closed) <= set(full)
    key = (ident("turn on a"), ident("turn on b"), ident("turn off c"))
    assert key in closed  # the maximal pattern survives


def test_benchmark_reports_identical_sets_and_positive_runtimes():
    events = structured_log(5, 1500, 15)
    report = run_benchmark(events, MiningConfig(min_support=0.005), ["growth", "levelwise", "oracle"])
    hashes = {r.set_hash for r in report.results}
    assert len(hashes) == 1
    for r in report.results:
        assert r.runtime_s > 0
        assert r.pattern_count == report.results[0].pattern_count


def test_benchmark_detects_mismatch(monkeypatch):
    import homesaver.mining as mining

    def broken(cols, cfg):
        out = mining._mine_growth(cols, cfg)
        if out:
            out.pop(next(iter(out)))
        return out

    monkeypatch.setitem(mining.MINERS, "broken", broken)
    events = structured_log(5, 500, 10)
    with pytest.raises(BenchmarkMismatch):
        run_benchmark(events, MiningConfig(min_support=0.01), ["growth", "broken"])


def test_benchmark_needs_two_algorithms():
    with pytest.raises(ValueError):
        run_benchmark([ev(0, "a")], MiningConfig(), ["growth"])


def test_pattern_set_hash_sensitive_to_counts():
    key = (ident("a"), ident("b"), ident("c"))
    assert pattern_set_hash({key: 3}) != pattern_set_hash({key: 4})
