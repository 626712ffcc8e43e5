"""Synthetic single-home corpus for the mining benchmark.

Shaped like real home logs: a handful of recurring routine motifs (the
frequent patterns) over sparse noise, with blocks spaced beyond the gap
bound so chains stay local. Deterministic in the seed.
"""

from __future__ import annotations

import random

from .domain import EventRecord


def benchmark_events(seed: int = 7, n: int = 100_000, motifs: int = 12, noise_identities: int = 60,
                     max_gap: float = 600.0) -> list[EventRecord]:
    rng = random.Random(f"bench:{seed}")
    motif_bank = []
    for m in range(motifs):
        length = rng.randint(3, 6)
        motif_bank.append([f"routine {m} step {k}" for k in range(length)])
    events: list[EventRecord] = []
    t = 0.0
    while len(events) < n:
        if rng.random() < 0.6:
            motif = motif_bank[rng.randrange(len(motif_bank))]
            for name in motif:
                t += rng.uniform(5.0, 60.0)
                events.append(EventRecord(round(t, 3), "bench-home", "z1", "dev", name))
        else:
            for _ in range(rng.randint(1, 3)):
                t += rng.uniform(5.0, 120.0)
                name = f"noise {rng.randrange(noise_identities)}"
                events.append(EventRecord(round(t, 3), "bench-home", "z1", "dev", name, "sensor"))
        t += rng.uniform(max_gap * 1.05, max_gap * 2.5)
    return events[:n]
