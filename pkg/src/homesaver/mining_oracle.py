"""Brute-force reference miner.

Level-wise candidate enumeration with from-scratch occurrence counting by
forward scans over the raw event list. Deliberately shares no projection or
frontier machinery with :mod:`homesaver.mining`; it exists to check the
optimized miners exactly. The only optimizations are a per-identity position
index and memoized suffix failures, both with one-line correctness arguments.
"""

from __future__ import annotations

from typing import Sequence

from .domain import EventIdentity, EventRecord
from .validation import check_event_sequence


def _occurrence_search(times, idents, pattern, j, prev, max_gap, dead, path):
    """Try to match pattern[j:] after position ``prev``; fills ``path`` with
    the smallest-index completion. Failure depends only on (j, prev)."""
    if j == len(pattern):
        return True
    if (j, prev) in dead:
        return False
    limit = times[prev] + max_gap
    i = prev + 1
    n = len(times)
    while i < n and times[i] <= limit:
        if idents[i] == pattern[j] and times[i] > times[prev]:
            path.append(i)
            if _occurrence_search(times, idents, pattern, j + 1, i, max_gap, dead, path):
                return True
            path.pop()
        i += 1
    dead.add((j, prev))
    return False


def count_per_start_naive(times, idents, starts, pattern, max_gap) -> int:
    dead: set = set()
    count = 0
    for s in starts:
        path = [s]
        if _occurrence_search(times, idents, pattern, 1, s, max_gap, dead, path):
            count += 1
    return count


def count_nonoverlap_naive(times, idents, starts, pattern, max_gap) -> int:
    """Repeatedly take the lexicographically smallest occurrence whose every
    index lies past the previous occurrence."""
    dead: set = set()
    count = 0
    cursor = 0
    for s in starts:
        if s < cursor:
            continue
        path = [s]
        if _occurrence_search(times, idents, pattern, 1, s, max_gap, dead, path):
            count += 1
            cursor = path[-1] + 1
    return count


def mine_pattern_counts_naive(events: Sequence[EventRecord], cfg) -> dict[tuple[EventIdentity, ...], int]:
    events = check_event_sequence(events)
    n = len(events)
    results: dict[tuple[EventIdentity, ...], int] = {}
    if n == 0:
        return results
    min_count = cfg.min_count(n)
    times = [e.timestamp for e in events]
    idents = [e.identity for e in events]
    starts_of: dict[EventIdentity, list[int]] = {}
    for i, ident in enumerate(idents):
        starts_of.setdefault(ident, []).append(i)
    alphabet = sorted(starts_of)

    frontier: list[tuple[EventIdentity, ...]] = [(a,) for a in alphabet]
    length = 1
    while frontier and length <= cfg.max_length:
        survivors = []
        for cand in frontier:
            starts = starts_of[cand[0]]
            per_start = count_per_start_naive(times, idents, starts, cand, cfg.max_gap)
            if per_start < min_count:
                continue
            survivors.append(cand)
            if length >= cfg.min_length:
                if cfg.allow_overlap:
                    results[cand] = per_start
                else:
                    greedy = count_nonoverlap_naive(times, idents, starts, cand, cfg.max_gap)
                    if greedy >= min_count:
                        results[cand] = greedy
        frontier = [cand + (a,) for cand in survivors for a in alphabet]
        length += 1

    if cfg.closed_only:
        results = _closed_naive(results)
    return results


def _closed_naive(found: dict[tuple[EventIdentity, ...], int]) -> dict[tuple[EventIdentity, ...], int]:
    def contains(big, small):
        pos = 0
        for x in small:
            while pos < len(big) and big[pos] != x:
                pos += 1
            if pos == len(big):
                return False
            pos += 1
        return True

    kept = {}
    for p, c in found.items():
        if not any(q != p and c2 == c and len(q) > len(p) and contains(q, p) for q, c2 in found.items()):
            kept[p] = c
    return kept
