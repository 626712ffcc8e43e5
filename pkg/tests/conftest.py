import random

import pytest

from homesaver.domain import AssociationRule, EventIdentity, EventRecord, rule_id_for
from homesaver.rules import RuleDB, recompute


def ev(t, name, home="h1", zone="z1", subject="s1", source="button_click"):
    return EventRecord(float(t), home, zone, subject, name, source)


def ident(name, zone="z1", subject="s1"):
    return EventIdentity(zone, subject, name)


def make_rule(
    condition_names,
    action_name,
    home="h1",
    confidence=1.0,
    support=0.1,
    support_count=10,
    mined=0.0,
    action_position=None,
    zone="z1",
    subject="s1",
):
    cond = tuple(ident(n, zone, subject) for n in condition_names)
    action = ident(action_name, zone, subject)
    pos = len(cond) if action_position is None else action_position
    items = cond[:pos] + (action,) + cond[pos:]
    return AssociationRule(
        rule_id=rule_id_for(home, items, pos),
        home_id=home,
        condition=cond,
        action=action,
        action_category=None,
        action_position=pos,
        source_items=items,
        pattern_support=support,
        pattern_support_count=support_count,
        pattern_length=len(items),
        mined_date=mined,
        confidence=confidence,
    )


def make_db(*rules):
    db = RuleDB()
    for r in rules:
        db.add(r)
    recompute(db)
    return db


def structured_log(seed, n, alphabet, max_gap=600.0, home="h1", action_every=0):
    """Routine motifs over sparse noise; blocks never chain across the gap.

    With action_every > 0, every that-many motif items is an action name
    ("turn off ...") so relevance filtering has something to keep.
    """
    rng = random.Random(seed)
    motifs = []
    for m in range(rng.randint(2, 6)):
        length = rng.randint(3, 6)
        motif = []
        for k in range(length):
            if action_every and (k + 1) % action_every == 0:
                motif.append(f"turn off lamp {m}-{k}")
            else:
                motif.append(f"ev{rng.randrange(alphabet)}")
        motifs.append(motif)
    events = []
    t = 0.0
    while len(events) < n:
        if rng.random() < 0.55:
            for name in rng.choice(motifs):
                t += rng.uniform(5.0, max_gap / 8)
                events.append(ev(round(t, 3), name, home))
        else:
            for _ in range(rng.randint(1, 3)):
                t += rng.uniform(5.0, max_gap / 4)
                events.append(ev(round(t, 3), f"ev{rng.randrange(alphabet)}", home))
        t += rng.uniform(max_gap * 1.05, max_gap * 3)
    return events[:n]


@pytest.fixture
def tmp_store_dir(tmp_path):
    return str(tmp_path / "store")
