import pytest

from homesaver.domain import (
    ActionCatalog,
    ActionCategory,
    CatalogEntry,
    DEFAULT_CATALOG,
    EventClass,
    EventIdentity,
    HomeTopology,
    MeterInfo,
    Pattern,
    Recommendation,
    ZoneInfo,
    DeviceInfo,
    classify_event,
    event_identity,
    format_timestamp,
    parse_timestamp,
    relevance_ok,
)

from conftest import ev, ident


def test_absent_scene_is_action():
    assert classify_event(ev(0, "absent")) is EventClass.ACTION
    assert DEFAULT_CATALOG.category_for("absent") is ActionCategory.ABSENT


def test_turn_on_light_is_normal():
    assert classify_event(ev(0, "turn on light in stairs")) is EventClass.NORMAL


def test_empty_name_is_normal():
    assert classify_event(ev(0, "")) is EventClass.NORMAL


def test_classification_case_insensitive():
    for name in ["Turn OFF lamp", "turn off lamp", "TURN OFF LAMP"]:
        assert classify_event(ev(0, name)) is EventClass.ACTION


def test_keywords_match_whole_words_only():
    # "coffee" contains "off" but is not an action
    assert classify_event(ev(0, "turn on coffee machine")) is EventClass.NORMAL
    assert classify_event(ev(0, "dim lights to 30%")) is EventClass.ACTION
    assert DEFAULT_CATALOG.category_for("scene sleep bedroom") is ActionCategory.SLEEP
    assert DEFAULT_CATALOG.category_for("standby tv") is ActionCategory.STANDBY


def test_every_event_is_action_or_normal():
    catalog = DEFAULT_CATALOG
    names = ["absent", "turn off x", "anything", "", "sleep", "motion"]
    for name in names:
        assert catalog.classify(name) in (EventClass.ACTION, EventClass.NORMAL)


def test_custom_catalog_overrides_default():
    catalog = ActionCatalog([CatalogEntry("shutdown", ActionCategory.OFF)])
    assert catalog.classify("shutdown everything") is EventClass.ACTION
    assert catalog.classify("turn off lamp") is EventClass.NORMAL


def test_event_identity_drops_time_keeps_zone():
    a = ev(1.0, "click", zone="z1")
    b = ev(2.0, "click", zone="z1")
    c = ev(1.0, "click", zone="z2")
    assert event_identity(a) == event_identity(b)
    assert event_identity(a) != event_identity(c)


def test_identity_stable_across_reconstruction():
    records = [ev(i, f"n{i % 3}") for i in range(10)]
    first = {event_identity(e) for e in records}
    rebuilt = [ev(e.timestamp, e.event_name, e.home_id, e.zone_id, e.subject_id, e.source) for e in records]
    assert {event_identity(e) for e in rebuilt} == first


def test_timestamp_parse_variants():
    iso = parse_timestamp("2014-11-16T23:19:16Z")
    spaced = parse_timestamp("2014-11-16 23:19:16")
    assert iso == spaced
    assert parse_timestamp(iso) == iso
    with pytest.raises(ValueError):
        parse_timestamp("not a date")
    with pytest.raises(ValueError):
        parse_timestamp(float("nan"))


def test_timestamp_roundtrip():
    for ts in [0.0, 1416179956.0, 1416179956.25]:
        assert parse_timestamp(format_timestamp(ts)) == ts


def test_topology_validation():
    topo = HomeTopology(
        "h1",
        meters=[MeterInfo("m1")],
        zones=[ZoneInfo("z1", "kitchen")],
        devices=[DeviceInfo("d1", "z1", "lamp", "m1")],
    )
    topo.validate()
    assert topo.room_name("z1") == "kitchen"
    assert topo.subject_name("d1") == "lamp"
    bad = HomeTopology("h1", meters=[MeterInfo("m1")], zones=[], devices=[DeviceInfo("d1", "zX", "lamp", "m1")])
    with pytest.raises(ValueError):
        bad.validate()


def test_relevance_predicate_matches_rule_shape():
    A, N = EventClass.ACTION, EventClass.NORMAL
    assert relevance_ok([N, N, A])
    assert relevance_ok([A, N, N, A])
    assert not relevance_ok([N, A])  # too short
    assert not relevance_ok([N, N, N])  # no action
    assert not relevance_ok([A, A, N])  # only one normal


def test_pattern_counts():
    p = Pattern(
        items=(ident("a"), ident("b"), ident("off x")),
        classes=(EventClass.NORMAL, EventClass.NORMAL, EventClass.ACTION),
        support_count=4,
        support=0.04,
        home_id="h1",
    )
    assert p.length == 3
    assert p.action_count == 1
    assert p.normal_count == 2


def test_recommendation_rejects_foreign_or_future_triggers():
    trigger = ev(10.0, "x")
    Recommendation("r1", "h1", "rule", ident("a"), "text", (trigger,), created_at=10.0)
    with pytest.raises(ValueError):
        Recommendation("r1", "h2", "rule", ident("a"), "text", (trigger,), created_at=20.0)
    with pytest.raises(ValueError):
        Recommendation("r1", "h1", "rule", ident("a"), "text", (trigger,), created_at=5.0)
