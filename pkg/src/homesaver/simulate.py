"""Deterministic household simulator.

Generates synthetic homes with planted routines whose energy-saving action is
sometimes "forgotten", plus unrelated noise events, and records ground truth
for every routine instance. A scripted inhabitant answers recommendations so
feedback-driven adaptation can be evaluated without humans.

Determinism: every random draw comes from generators seeded by
(seed, home index, day index), so the same config yields byte-identical
corpora, and extending the day range leaves earlier days unchanged.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .domain import (
    DeviceInfo,
    EventIdentity,
    EventRecord,
    HomeTopology,
    MeterInfo,
    Recommendation,
    SceneInfo,
    Verdict,
    ZoneInfo,
    event_sort_key,
    parse_timestamp,
)
from .ingest import format_event_timestamp, parse_event_timestamp

ROOM_NAMES = [
    "living room", "kitchen", "bedroom", "bathroom", "hallway",
    "office", "basement", "garage", "laundry room", "guest room",
]
DEVICE_NAMES = [
    "ceiling lamp", "floor lamp", "reading light", "tv", "stereo",
    "desk light", "wall spot", "bed side lamp", "mirror light", "fan",
]
NORMAL_TEMPLATES = ["turn on {device}", "button click {device}", "select scene evening {device}"]
SENSOR_TEMPLATE = "motion detected near {device}"
ACTION_TEMPLATE = "turn off {device}"
NOISE_TEMPLATES = ["sensor reading {name}", "press button {name}", "window contact {name}"]

DAY = 86400.0


@dataclass(frozen=True)
class RoutineSpec:
    routine_id: str
    home_id: str
    items: tuple[EventIdentity, ...]  # temporal order, action included
    sources: tuple[str, ...]
    action_index: int
    times_per_day: int
    optional_action: bool = False  # inhabitant skips the action on purpose

    @property
    def action(self) -> EventIdentity:
        return self.items[self.action_index]


@dataclass
class SimConfig:
    seed: int = 7
    homes: int = 8
    zones_per_home: int = 4
    devices_per_zone: int = 3
    routines_per_home: int = 3
    normals_per_routine: tuple[int, int] = (2, 2)  # range per routine
    times_per_day: tuple[int, int] = (1, 3)
    intra_gap: tuple[float, float] = (15.0, 90.0)  # seconds between routine items
    forget_probability: float = 0.1
    noise_rate: float = 2.0  # unrelated events per hour
    noise_pool: int = 30  # distinct noise identities per home
    days: int = 34
    start_day: int = 0  # global day offset; lets train/test splits share homes
    start: str = "2014-10-01T00:00:00Z"
    action_last_fraction: float = 1.0  # remaining routines put the action first
    # routines whose action the inhabitant skips on purpose (never "forgotten"):
    # their rules mine with low confidence and draw not-useful feedback
    optional_routines_per_home: int = 0
    optional_skip_probability: float = 0.5
    # chance a routine run is abandoned after two normals: no action expected,
    # so short sub-rules lose confidence and recommendations there are noise
    partial_block_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.forget_probability <= 1.0:
            raise ValueError("forget_probability must be in [0, 1]")
        if self.homes < 1 or self.days < 1:
            raise ValueError("need at least one home and one day")
        if self.normals_per_routine[0] < 2:
            raise ValueError("routines need at least two normal events")

    def start_epoch(self) -> float:
        return parse_timestamp(self.start)


@dataclass
class RoutineInstance:
    home_id: str
    routine_id: str
    start_ts: float
    action_ts: float  # when the action happened, or would have
    action: EventIdentity
    forgotten: bool


@dataclass
class GroundTruth:
    homes: int
    days: int
    instances: list[RoutineInstance] = field(default_factory=list)

    def forgotten(self) -> list[RoutineInstance]:
        return [i for i in self.instances if i.forgotten]

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(json.dumps({"format": "homesaver-truth", "homes": self.homes, "days": self.days}) + "\n")
            for inst in self.instances:
                f.write(
                    json.dumps(
                        {
                            "home_id": inst.home_id,
                            "routine_id": inst.routine_id,
                            "start_ts": format_event_timestamp(inst.start_ts),
                            "action_ts": format_event_timestamp(inst.action_ts),
                            "action": list(inst.action),
                            "forgotten": inst.forgotten,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str) -> "GroundTruth":
        with open(path) as f:
            header = json.loads(f.readline())
            if header.get("format") != "homesaver-truth":
                raise ValueError(f"{path}: not a ground-truth file")
            truth = cls(homes=header["homes"], days=header["days"])
            for line in f:
                if not line.strip():
                    continue
                raw = json.loads(line)
                truth.instances.append(
                    RoutineInstance(
                        home_id=raw["home_id"],
                        routine_id=raw["routine_id"],
                        start_ts=parse_event_timestamp(raw["start_ts"]),
                        action_ts=parse_event_timestamp(raw["action_ts"]),
                        action=EventIdentity(*raw["action"]),
                        forgotten=raw["forgotten"],
                    )
                )
        return truth


@dataclass
class SimResult:
    config: SimConfig
    topologies: list[HomeTopology]
    routines: list[RoutineSpec]
    events_by_home: dict[str, list[EventRecord]]
    truth: GroundTruth


def _build_home(cfg: SimConfig, idx: int) -> tuple[HomeTopology, list[RoutineSpec], list[EventIdentity], list[str]]:
    rng = random.Random(f"{cfg.seed}:{idx}:structure")
    home_id = f"home-{idx:02d}"
    zones = [ZoneInfo(f"z{z}", ROOM_NAMES[(z + idx) % len(ROOM_NAMES)]) for z in range(cfg.zones_per_home)]
    meters = [MeterInfo(f"m{c}", f"circuit {c}") for c in range(max(1, cfg.zones_per_home // 2))]
    devices = []
    for z, zone in enumerate(zones):
        for d in range(cfg.devices_per_zone):
            name = DEVICE_NAMES[(z * cfg.devices_per_zone + d) % len(DEVICE_NAMES)]
            devices.append(DeviceInfo(f"z{z}-d{d}", zone.zone_id, name, meters[z % len(meters)].meter_id))
    scenes = [SceneInfo(f"z{z}-s0", zones[z].zone_id, "evening") for z in range(len(zones))]
    topo = HomeTopology(home_id, meters=meters, zones=zones, scenes=scenes, devices=devices)
    topo.validate()

    routines = []
    pool = list(devices)
    rng.shuffle(pool)
    lengths = [rng.randint(*cfg.normals_per_routine) for _ in range(cfg.routines_per_home)]
    needed = sum(lengths) + cfg.routines_per_home
    if needed > len(pool):
        raise ValueError(
            f"infeasible config: {needed} routine devices needed, home has {len(pool)}"
        )
    cursor = 0
    for r in range(cfg.routines_per_home):
        normals = []
        sources = []
        for k in range(lengths[r]):
            dev = pool[cursor]
            cursor += 1
            if rng.random() < 0.25:
                normals.append(EventIdentity(dev.zone_id, dev.device_id, SENSOR_TEMPLATE.format(device=dev.name)))
                sources.append("sensor")
            else:
                template = rng.choice(NORMAL_TEMPLATES)
                normals.append(EventIdentity(dev.zone_id, dev.device_id, template.format(device=dev.name)))
                sources.append("button_click")
        dev = pool[cursor]
        cursor += 1
        action = EventIdentity(dev.zone_id, dev.device_id, ACTION_TEMPLATE.format(device=dev.name))
        if rng.random() < cfg.action_last_fraction:
            items = tuple(normals) + (action,)
            srcs = tuple(sources) + ("button_click",)
            action_index = len(normals)
        else:
            items = (action,) + tuple(normals)
            srcs = ("button_click",) + tuple(sources)
            action_index = 0
        routines.append(
            RoutineSpec(
                routine_id=f"{home_id}-r{r}",
                home_id=home_id,
                items=items,
                sources=srcs,
                action_index=action_index,
                times_per_day=rng.randint(*cfg.times_per_day),
                optional_action=r < cfg.optional_routines_per_home,
            )
        )
    noise_pool = []
    noise_sources = []
    for k in range(cfg.noise_pool):
        zone = zones[k % len(zones)]
        template = NOISE_TEMPLATES[k % len(NOISE_TEMPLATES)]
        noise_pool.append(EventIdentity(zone.zone_id, f"noise-{k}", template.format(name=f"unit {k}")))
        noise_sources.append("sensor" if template.startswith(("sensor", "window")) else "button_click")
    return topo, routines, noise_pool, noise_sources


def generate(cfg: SimConfig) -> SimResult:
    """Build the synthetic corpus and its ground truth."""
    start = cfg.start_epoch()
    topologies = []
    all_routines = []
    events_by_home: dict[str, list[EventRecord]] = {}
    truth = GroundTruth(homes=cfg.homes, days=cfg.days)
    for idx in range(cfg.homes):
        topo, routines, noise_pool, noise_sources = _build_home(cfg, idx)
        topologies.append(topo)
        all_routines.extend(routines)
        home_id = topo.home_id
        events: list[EventRecord] = []
        # one disjoint daily slot per routine instance, spaced well beyond the
        # mining gap so different routines never chain into junk patterns
        slots = [routine for routine in routines for _ in range(routine.times_per_day)]
        slot_width = DAY / max(1, len(slots))
        jitter = min(1800.0, slot_width * 0.2)
        for day_offset in range(cfg.days):
            day = cfg.start_day + day_offset
            day_start = start + day * DAY
            rng = random.Random(f"{cfg.seed}:{idx}:day:{day}")
            for slot_idx, routine in enumerate(slots):
                t = day_start + (slot_idx + 0.5) * slot_width + rng.uniform(-jitter, jitter)
                if rng.random() < cfg.partial_block_probability:
                    # abandoned run: two normals, no action due, no truth row
                    emitted = 0
                    for item, source in zip(routine.items, routine.sources):
                        if item == routine.action:
                            continue
                        t += rng.uniform(*cfg.intra_gap)
                        events.append(EventRecord(round(t, 3), home_id, item.zone_id, item.subject_id, item.event_name, source))
                        emitted += 1
                        if emitted == 2:
                            break
                    continue
                if routine.optional_action:
                    omit, forgotten = rng.random() < cfg.optional_skip_probability, False
                else:
                    forgotten = rng.random() < cfg.forget_probability
                    omit = forgotten
                instance_start = None
                action_ts = None
                for item, source in zip(routine.items, routine.sources):
                    t += rng.uniform(*cfg.intra_gap)
                    if instance_start is None:
                        instance_start = t
                    if item == routine.action:
                        action_ts = t
                        if omit:
                            continue
                    events.append(EventRecord(round(t, 3), home_id, item.zone_id, item.subject_id, item.event_name, source))
                truth.instances.append(
                    RoutineInstance(home_id, routine.routine_id, instance_start, action_ts, routine.action, forgotten)
                )
            # noise
            n_noise = _poisson(rng, cfg.noise_rate * 24.0)
            for _ in range(n_noise):
                t = day_start + rng.uniform(0.0, DAY)
                k = rng.randrange(len(noise_pool))
                ident = noise_pool[k]
                events.append(EventRecord(round(t, 3), home_id, ident.zone_id, ident.subject_id, ident.event_name, noise_sources[k]))
        events.sort(key=event_sort_key)
        events_by_home[home_id] = events
    truth.instances.sort(key=lambda i: (i.home_id, i.start_ts))
    return SimResult(cfg, topologies, all_routines, events_by_home, truth)


def _poisson(rng: random.Random, lam: float) -> int:
    # Knuth's method; lambda stays small (events/day)
    import math

    limit = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def write_corpus(result: SimResult, out_dir: str) -> dict[str, str]:
    """Write event logs (interchange jsonl), topology.json and truth.jsonl."""
    from .ingest import _Escaper, _canonical_line

    events_dir = os.path.join(out_dir, "events")
    os.makedirs(events_dir, exist_ok=True)
    paths = {"events_dir": events_dir}
    esc = _Escaper()
    for home_id, events in sorted(result.events_by_home.items()):
        path = os.path.join(events_dir, f"events-{home_id}.jsonl")
        with open(path, "w") as f:
            f.write("".join(_canonical_line(e, esc) for e in events))
        paths[home_id] = path
    topo_path = os.path.join(out_dir, "topology.json")
    with open(topo_path, "w") as f:
        json.dump([_topology_to_json(t) for t in result.topologies], f, indent=1, sort_keys=True)
        f.write("\n")
    truth_path = os.path.join(out_dir, "truth.jsonl")
    result.truth.save(truth_path)
    paths["topology"] = topo_path
    paths["truth"] = truth_path
    return paths


def _topology_to_json(t: HomeTopology) -> dict:
    return {
        "home_id": t.home_id,
        "meters": [{"meter_id": m.meter_id, "name": m.name} for m in t.meters],
        "zones": [{"zone_id": z.zone_id, "name": z.name} for z in t.zones],
        "scenes": [{"scene_id": s.scene_id, "zone_id": s.zone_id, "name": s.name} for s in t.scenes],
        "devices": [
            {"device_id": d.device_id, "zone_id": d.zone_id, "name": d.name, "meter_id": d.meter_id}
            for d in t.devices
        ],
    }


def topology_from_json(raw: dict) -> HomeTopology:
    topo = HomeTopology(
        home_id=raw["home_id"],
        meters=[MeterInfo(**m) for m in raw["meters"]],
        zones=[ZoneInfo(**z) for z in raw["zones"]],
        scenes=[SceneInfo(**s) for s in raw["scenes"]],
        devices=[DeviceInfo(**d) for d in raw["devices"]],
    )
    topo.validate()
    return topo


def load_topologies(path: str) -> dict[str, HomeTopology]:
    with open(path) as f:
        raw = json.load(f)
    topos = [topology_from_json(item) for item in raw]
    return {t.home_id: t for t in topos}


# ---------------------------------------------------------------------------
# evaluation against ground truth


@dataclass
class Metrics:
    recommendations: int
    true_positives: int
    forgotten_instances: int
    matched_instances: int
    recall: Optional[float]
    precision: Optional[float]
    recs_per_day_per_home: float

    def as_dict(self) -> dict:
        return {
            "recommendations": self.recommendations,
            "true_positives": self.true_positives,
            "forgotten_instances": self.forgotten_instances,
            "matched_instances": self.matched_instances,
            "recall": self.recall,
            "precision": self.precision,
            "recs_per_day_per_home": round(self.recs_per_day_per_home, 4),
        }


def match_true_positives(
    recs: Sequence[Recommendation], truth: GroundTruth, window: float = 1800.0
) -> tuple[set[str], set[int]]:
    """Greedily match recommendations to forgotten instances.

    A recommendation is a true positive iff it names the forgotten action of
    an unmatched ground-truth instance and lands between the instance start
    and the expected action time plus the window.
    """
    open_instances: dict[tuple[str, EventIdentity], list[tuple[int, RoutineInstance]]] = {}
    for i, inst in enumerate(truth.instances):
        if inst.forgotten:
            open_instances.setdefault((inst.home_id, inst.action), []).append((i, inst))
    tp_recs: set[str] = set()
    matched: set[int] = set()
    for rec in sorted(recs, key=lambda r: (r.created_at, r.recommendation_id)):
        bucket = open_instances.get((rec.home_id, rec.action), [])
        for i, inst in bucket:
            if i in matched:
                continue
            if inst.start_ts <= rec.created_at <= inst.action_ts + window:
                matched.add(i)
                tp_recs.add(rec.recommendation_id)
                break
    return tp_recs, matched


def evaluate(recs: Sequence[Recommendation], truth: GroundTruth, window: float = 1800.0) -> Metrics:
    tp_recs, matched = match_true_positives(recs, truth, window)
    forgotten = len(truth.forgotten())
    recall = (len(matched) / forgotten) if forgotten else None
    precision = (len(tp_recs) / len(recs)) if recs else None
    return Metrics(
        recommendations=len(recs),
        true_positives=len(tp_recs),
        forgotten_instances=forgotten,
        matched_instances=len(matched),
        recall=recall,
        precision=precision,
        recs_per_day_per_home=len(recs) / (truth.days * truth.homes),
    )


@dataclass
class ScriptedInhabitant:
    """Deterministic stand-in for interviewed inhabitants: answers a fixed
    fraction of recommendations, useful iff the recommendation was a ground
    truth hit."""

    seed: int = 7
    answer_probability: float = 0.46
    window: float = 1800.0

    def verdicts(
        self, recs: Sequence[Recommendation], truth: GroundTruth
    ) -> list[tuple[str, Optional[Verdict]]]:
        tp_recs, _ = match_true_positives(recs, truth, self.window)
        rng = random.Random(f"{self.seed}:inhabitant")
        out = []
        for rec in sorted(recs, key=lambda r: (r.created_at, r.recommendation_id)):
            if rng.random() < self.answer_probability:
                verdict = Verdict.USEFUL if rec.recommendation_id in tp_recs else Verdict.NOT_USEFUL
            else:
                verdict = None
            out.append((rec.recommendation_id, verdict))
        return out
