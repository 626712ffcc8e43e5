"""Frequent sequential pattern mining over per-home event sequences.

A pattern occurrence is a strictly time-increasing subsequence whose
consecutive gaps stay within ``max_gap``. Support is counted per starting
event: every distinct position where an occurrence can begin counts once
(``allow_overlap=True``, the default), or greedily as disjoint occurrences
(``allow_overlap=False``).

Two mining strategies live here: ``growth`` (depth-first prefix projection
carrying a start/end frontier) and ``levelwise`` (breadth-first candidate
extension recounting each pattern from scratch). The naive reference
implementation used to validate both lives in :mod:`homesaver.mining_oracle`.
"""

from __future__ import annotations

import hashlib
import math
import time as _time
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .domain import ActionCatalog, DEFAULT_CATALOG, EventIdentity, EventRecord, Pattern, relevance_ok
from .validation import check_event_sequence, check_fraction, check_positive


@dataclass(frozen=True)
class MiningConfig:
    min_length: int = 3
    max_length: int = 7
    min_support: float = 0.001  # fraction of the home's total events
    max_gap: float = 600.0  # seconds between consecutive pattern items
    allow_overlap: bool = True
    closed_only: bool = False  # optional closed-pattern reduction
    wildcards: bool = False  # fixed off; kept for config compatibility

    def __post_init__(self):
        if self.min_length < 3:
            raise ValueError(f"min_length must be >= 3, got {self.min_length}")
        if self.max_length < self.min_length:
            raise ValueError("max_length must be >= min_length")
        check_fraction("min_support", self.min_support, min_open=True)
        check_positive("max_gap", self.max_gap)
        if self.wildcards:
            raise ValueError("wildcard patterns are not supported")

    def min_count(self, total_events: int) -> int:
        # smallest integer count c with c / total >= min_support
        return max(1, math.ceil(self.min_support * total_events - 1e-9))


@dataclass(frozen=True)
class Occurrence:
    """One concrete match of a pattern: the timestamps of its items."""

    items: tuple[EventIdentity, ...]
    home_id: str
    item_timestamps: tuple[float, ...]

    def __post_init__(self):
        ts = self.item_timestamps
        for a, b in zip(ts, ts[1:]):
            if b <= a:
                raise ValueError("occurrence timestamps must strictly increase")


class EventColumns:
    """Column view of one home's events: times plus interned identity codes."""

    def __init__(self, events: Sequence[EventRecord]):
        self.events = events
        self.home_id = events[0].home_id if events else ""
        self.times: list[float] = [e.timestamp for e in events]
        table: list[EventIdentity] = []
        code_of: dict[EventIdentity, int] = {}
        codes: list[int] = []
        for e in events:
            ident = EventIdentity(e.zone_id, e.subject_id, e.event_name)
            c = code_of.get(ident)
            if c is None:
                c = len(table)
                code_of[ident] = c
                table.append(ident)
            codes.append(c)
        self.codes = codes
        self.table = table
        self.code_of = code_of
        positions: dict[int, list[int]] = {}
        for i, c in enumerate(codes):
            positions.setdefault(c, []).append(i)
        self.positions = positions

    def __len__(self) -> int:
        return len(self.times)

    def window(self, pos: int, max_gap: float) -> tuple[int, int]:
        """Index range (lo, hi) of events strictly after ``pos`` in time and
        within ``max_gap`` of it."""
        t = self.times[pos]
        lo = bisect_right(self.times, t)
        hi = bisect_right(self.times, t + max_gap)
        return lo, hi


def columns_for(events: Sequence[EventRecord]) -> EventColumns:
    return EventColumns(check_event_sequence(events))


# ---------------------------------------------------------------------------
# occurrence search (leftmost witness, shared by count_support and confidence)


def _leftmost_witness(cols: EventColumns, pattern: Sequence[int], start: int, max_gap: float, dead: set) -> list[int] | None:
    """Lexicographically smallest occurrence of ``pattern`` starting at
    ``start``, or None. ``dead`` memoizes (item, position) pairs that cannot
    complete the suffix; it is start-independent and may be shared."""
    k = len(pattern)
    times = cols.times
    positions = cols.positions
    path = [start]

    def extend(j: int, prev: int) -> bool:
        if j == k:
            return True
        if (j, prev) in dead:
            return False
        plist = positions.get(pattern[j])
        if plist:
            t_prev = times[prev]
            lo = bisect_right(times, t_prev)
            hi = bisect_right(times, t_prev + max_gap)
            for p in plist[bisect_left(plist, lo):bisect_left(plist, hi)]:
                path.append(p)
                if extend(j + 1, p):
                    return True
                path.pop()
        dead.add((j, prev))
        return False

    if extend(1, start):
        return path
    return None


def count_support(
    pattern_items: Sequence[EventIdentity],
    events: Sequence[EventRecord],
    cfg: MiningConfig,
    *,
    cols: EventColumns | None = None,
    with_occurrences: bool = True,
) -> tuple[int, list[Occurrence]]:
    """Count gap-constrained occurrences of a pattern in one home's events.

    With overlap allowed, one occurrence per distinct starting event. Without,
    consecutive disjoint occurrences: repeatedly the lexicographically smallest
    occurrence whose every index lies past the previous occurrence's end.
    """
    if not pattern_items:
        raise ValueError("pattern must have at least one item")
    if cols is None:
        cols = columns_for(events)
    codes = []
    for ident in pattern_items:
        c = cols.code_of.get(EventIdentity(*ident))
        if c is None:
            return 0, []
        codes.append(c)
    witnesses = _witness_starts(cols, codes, cfg.max_gap, cfg.allow_overlap)
    occurrences = []
    if with_occurrences:
        items = tuple(EventIdentity(*i) for i in pattern_items)
        occurrences = [
            Occurrence(items, cols.home_id, tuple(cols.times[p] for p in w)) for w in witnesses
        ]
    return len(witnesses), occurrences


def _witness_starts(cols: EventColumns, codes: Sequence[int], max_gap: float, allow_overlap: bool) -> list[list[int]]:
    starts = cols.positions.get(codes[0], [])
    dead: set = set()
    found: list[list[int]] = []
    if allow_overlap:
        for s in starts:
            w = _leftmost_witness(cols, codes, s, max_gap, dead)
            if w is not None:
                found.append(w)
    else:
        cursor = 0
        i = 0
        while i < len(starts):
            w = _leftmost_witness(cols, codes, starts[i], max_gap, dead)
            if w is None:
                i += 1
                continue
            found.append(w)
            cursor = w[-1] + 1
            i = bisect_left(starts, cursor, i + 1)
    return found


# ---------------------------------------------------------------------------
# growth miner: DFS over prefixes. The frontier maps each feasible end
# position of the current prefix to a bitmask of start positions that reach
# it, so per-start support is a popcount and extension is a masked OR.


def _mine_growth(cols: EventColumns, cfg: MiningConfig) -> dict[tuple[int, ...], int]:
    n = len(cols)
    results: dict[tuple[int, ...], int] = {}
    if n == 0:
        return results
    min_count = cfg.min_count(n)
    max_gap = cfg.max_gap
    codes = cols.codes
    times = cols.times

    def dfs(prefix: tuple[int, ...], ends: dict[int, int], start_count: int):
        if len(prefix) >= cfg.min_length:
            if cfg.allow_overlap:
                results[prefix] = start_count
            else:
                count = len(_witness_starts(cols, prefix, max_gap, False))
                if count >= min_count:
                    results[prefix] = count
        if len(prefix) >= cfg.max_length:
            return
        ext: dict[int, dict[int, int]] = {}
        for e, mask in ends.items():
            t = times[e]
            lo = bisect_right(times, t)
            hi = bisect_right(times, t + max_gap)
            for m in range(lo, hi):
                bucket = ext.get(codes[m])
                if bucket is None:
                    bucket = ext[codes[m]] = {}
                bucket[m] = bucket.get(m, 0) | mask
        for c in sorted(ext):
            new_ends = ext[c]
            union = 0
            for mask in new_ends.values():
                union |= mask
            count = union.bit_count()
            if count >= min_count:
                dfs(prefix + (c,), new_ends, count)

    for c, plist in sorted(cols.positions.items()):
        if len(plist) >= min_count:
            dfs((c,), {p: 1 << p for p in plist}, len(plist))
    return results


# ---------------------------------------------------------------------------
# levelwise miner: BFS candidate extension, recounting each candidate


def _mine_levelwise(cols: EventColumns, cfg: MiningConfig) -> dict[tuple[int, ...], int]:
    n = len(cols)
    results: dict[tuple[int, ...], int] = {}
    if n == 0:
        return results
    min_count = cfg.min_count(n)
    alphabet = sorted(cols.positions)
    frontier: list[tuple[int, ...]] = [(c,) for c in alphabet]
    length = 1
    while frontier and length <= cfg.max_length:
        survivors = []
        for cand in frontier:
            witnesses = _witness_starts(cols, cand, cfg.max_gap, True)
            if len(witnesses) < min_count:
                continue
            survivors.append(cand)
            if length >= cfg.min_length:
                if cfg.allow_overlap:
                    results[cand] = len(witnesses)
                else:
                    count = len(_witness_starts(cols, cand, cfg.max_gap, False))
                    if count >= min_count:
                        results[cand] = count
        frontier = [cand + (c,) for cand in survivors for c in alphabet]
        length += 1
    return results


# ---------------------------------------------------------------------------
# public mining API


def _closed_reduction(found: dict[tuple[int, ...], int]) -> dict[tuple[int, ...], int]:
    """Keep patterns with no reported super-sequence of equal support."""

    def is_subseq(small: tuple[int, ...], big: tuple[int, ...]) -> bool:
        it = iter(big)
        return all(x in it for x in small)

    kept = {}
    for p, c in found.items():
        shadowed = any(
            c == c2 and len(p2) > len(p) and is_subseq(p, p2) for p2, c2 in found.items()
        )
        if not shadowed:
            kept[p] = c
    return kept


MINERS: dict[str, Callable[[EventColumns, MiningConfig], dict[tuple[int, ...], int]]] = {
    "growth": _mine_growth,
    "levelwise": _mine_levelwise,
}


def mine_pattern_counts(
    events: Sequence[EventRecord], cfg: MiningConfig, algo: str = "growth"
) -> dict[tuple[EventIdentity, ...], int]:
    """Mine frequent patterns, keyed by identity tuple, valued by support count."""
    if algo == "oracle":
        from . import mining_oracle

        return mining_oracle.mine_pattern_counts_naive(events, cfg)
    try:
        miner = MINERS[algo]
    except KeyError:
        raise ValueError(f"unknown mining algorithm {algo!r}; choose from growth, levelwise, oracle") from None
    cols = columns_for(events)
    found = miner(cols, cfg)
    if cfg.closed_only:
        found = _closed_reduction(found)
    return {tuple(cols.table[c] for c in key): count for key, count in found.items()}


def mine_patterns(
    events: Sequence[EventRecord],
    cfg: MiningConfig,
    algo: str = "growth",
    catalog: ActionCatalog = DEFAULT_CATALOG,
    mined_at: float = 0.0,
) -> list[Pattern]:
    """Mine frequent patterns and attach event classes and support fractions.

    Returns patterns sorted canonically (by items) for deterministic output.
    """
    counts = mine_pattern_counts(events, cfg, algo)
    n = len(events)
    home_id = events[0].home_id if events else ""
    patterns = [
        Pattern(
            items=items,
            classes=tuple(catalog.classify(i.event_name) for i in items),
            support_count=count,
            support=count / n,
            home_id=home_id,
            first_mined=mined_at,
        )
        for items, count in counts.items()
    ]
    patterns.sort(key=lambda p: p.items)
    return patterns


def filter_relevant(patterns: Iterable[Pattern], catalog: ActionCatalog = DEFAULT_CATALOG) -> list[Pattern]:
    """Keep patterns of length >= 3 with >= 1 action and >= 2 normal events."""
    kept = []
    for p in patterns:
        classes = p.classes or tuple(catalog.classify(i.event_name) for i in p.items)
        if len(p.items) >= 3 and relevance_ok(classes):
            kept.append(p)
    return kept


# ---------------------------------------------------------------------------
# benchmark harness


class BenchmarkMismatch(Exception):
    """Raised when benchmarked algorithms disagree on the pattern set."""


@dataclass
class AlgoResult:
    algo: str
    runtime_s: float
    pattern_count: int
    set_hash: str


@dataclass
class BenchReport:
    events: int
    config: MiningConfig
    results: list[AlgoResult] = field(default_factory=list)

    def as_rows(self) -> list[dict]:
        return [
            {"algo": r.algo, "runtime_s": round(r.runtime_s, 6), "patterns": r.pattern_count, "set_hash": r.set_hash}
            for r in self.results
        ]


def pattern_set_hash(counts: dict[tuple[EventIdentity, ...], int]) -> str:
    h = hashlib.sha256()
    for items in sorted(counts):
        h.update("|".join("\x1e".join(i) for i in items).encode())
        h.update(f"={counts[items]};".encode())
    return h.hexdigest()


def run_benchmark(
    events: Sequence[EventRecord], cfg: MiningConfig, algos: Sequence[str], warmup_events: int = 2000
) -> BenchReport:
    """Time each algorithm on the same input and require identical outputs."""
    if len(algos) < 2:
        raise ValueError("benchmark needs at least two algorithms")
    report = BenchReport(events=len(events), config=cfg)
    outputs: dict[str, dict] = {}
    warmup = list(events[: min(len(events), warmup_events)])
    for algo in algos:
        if warmup:
            mine_pattern_counts(warmup, cfg, algo)
        t0 = _time.perf_counter()
        counts = mine_pattern_counts(events, cfg, algo)
        elapsed = _time.perf_counter() - t0
        outputs[algo] = counts
        report.results.append(AlgoResult(algo, elapsed, len(counts), pattern_set_hash(counts)))
    reference = report.results[0]
    for r in report.results[1:]:
        if r.set_hash != reference.set_hash:
            a, b = outputs[reference.algo], outputs[r.algo]
            only_a = [k for k in a if a.get(k) != b.get(k)][:5]
            only_b = [k for k in b if b.get(k) != a.get(k)][:5]
            raise BenchmarkMismatch(
                f"{r.algo} disagrees with {reference.algo}: "
                f"sample diffs {reference.algo}={only_a} {r.algo}={only_b}"
            )
    return report
