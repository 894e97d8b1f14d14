"""Pluggable decision policies for the seven optimizer slots.

Policies are pure functions of the snapshot views handed to them (plus their
own seeded RNG); they never mutate world state.  All tie-breaks fall back to
lowest id so runs stay deterministic.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from .world import Pod, ReplenishmentBundle


class PolicyError(ValueError):
    pass


class DecisionError(ValueError):
    """A decision violated its preconditions (caught by the validator)."""


@dataclass(frozen=True)
class PluginBinding:
    roa: str = "fcfs-least-loaded"
    poa: str = "fcfs"
    rps: str = "max-capacity"
    pps: str = "max-cover"
    pr: str = "nearest"
    ta: str = "nearest"
    pp: str = "interval-astar"


@dataclass(frozen=True)
class StationView:
    id: int
    kind: str
    assigned: int     # currently assigned open orders/bundles
    order_slots: int


@dataclass(frozen=True)
class OrderView:
    id: int
    skus: frozenset[str]


@dataclass(frozen=True)
class RequestView:
    id: int
    sku: str
    quantity: int


# --- ROA ---

def roa_fcfs_least_loaded(backlog: list[ReplenishmentBundle],
                          stations: list[StationView]) -> list[tuple[int, int]]:
    """Bundles in arrival order to the least-loaded replenish station with room."""
    loads = {s.id: s.assigned for s in stations}
    slots = {s.id: s.order_slots for s in stations}
    out = []
    for bundle in backlog:
        free = [sid for sid in sorted(loads) if loads[sid] < slots[sid]]
        if not free:
            break
        sid = min(free, key=lambda sid: (loads[sid], sid))
        out.append((bundle.id, sid))
        loads[sid] += 1
    return out


# --- POA ---

def poa_fcfs(backlog: list[OrderView], stations: list[StationView],
             station_skus: dict[int, frozenset[str]]) -> list[tuple[int, int]]:
    loads = {s.id: s.assigned for s in stations}
    slots = {s.id: s.order_slots for s in stations}
    out = []
    for order in backlog:
        free = [sid for sid in sorted(loads) if loads[sid] < slots[sid]]
        if not free:
            break
        sid = min(free, key=lambda sid: (loads[sid], sid))
        out.append((order.id, sid))
        loads[sid] += 1
    return out


def poa_common_lines(backlog: list[OrderView], stations: list[StationView],
                     station_skus: dict[int, frozenset[str]]) -> list[tuple[int, int]]:
    """Prefer the backlog order sharing the most SKUs with a station's queue."""
    loads = {s.id: s.assigned for s in stations}
    slots = {s.id: s.order_slots for s in stations}
    skus = {sid: set(station_skus.get(sid, frozenset())) for sid in loads}
    remaining = list(backlog)
    out = []
    while remaining:
        free = [sid for sid in sorted(loads) if loads[sid] < slots[sid]]
        if not free:
            break
        best = None  # (-shared, arrival index, order, station)
        for pos, order in enumerate(remaining):
            for sid in free:
                shared = len(order.skus & skus[sid])
                key = (-shared, pos, sid)
                if best is None or key < best[0]:
                    best = (key, order, sid)
        _key, order, sid = best
        out.append((order.id, sid))
        loads[sid] += 1
        skus[sid] |= order.skus
        remaining.remove(order)
    return out


# --- RPS ---

def rps_max_capacity(bundle: ReplenishmentBundle, pods: list[Pod]) -> int | None:
    """Pod with the largest single-compartment room for the sku; None if infeasible."""
    best = None
    for pod in sorted(pods, key=lambda p: p.id):
        room = pod.free_for(bundle.sku)
        if room < bundle.quantity:
            continue
        if best is None or room > best[0]:
            best = (room, pod.id)
    return None if best is None else best[1]


# --- PPS ---

def pps_max_cover(requests: list[RequestView], pods: list[Pod],
                  dist_to_station: Callable[[Pod], int]) -> list[tuple[int, list[int]]]:
    """Greedy pile-on: repeatedly pick the pod covering the most queued requests.

    Ties break on distance to the station, then pod id.  Returns
    (pod id, covered request ids) groups in selection order.
    """

    def coverage(pod: Pod, open_reqs: list[RequestView]) -> list[int]:
        flags = pod.simulate_picks([(r.sku, r.quantity) for r in open_reqs])
        return [r.id for r, flag in zip(open_reqs, flags) if flag]

    out = []
    open_reqs = list(requests)
    used: set[int] = set()
    while open_reqs:
        best = None
        for pod in sorted(pods, key=lambda p: p.id):
            if pod.id in used:
                continue
            covered = coverage(pod, open_reqs)
            if not covered:
                continue
            key = (-len(covered), dist_to_station(pod), pod.id)
            if best is None or key < best[0]:
                best = (key, pod.id, covered)
        if best is None:
            break
        _key, pod_id, covered = best
        out.append((pod_id, covered))
        used.add(pod_id)
        open_reqs = [r for r in open_reqs if r.id not in covered]
    return out


# --- PR ---

def pr_nearest(pod: Pod, station_node: int, free_nodes: list[int],
               dist: Callable[[int, int], int], rng: random.Random) -> int | None:
    if not free_nodes:
        return None
    return min(free_nodes, key=lambda n: (dist(station_node, n), n))


def pr_random(pod: Pod, station_node: int, free_nodes: list[int],
              dist: Callable[[int, int], int], rng: random.Random) -> int | None:
    if not free_nodes:
        return None
    return rng.choice(sorted(free_nodes))


def pr_fixed(pod: Pod, station_node: int, free_nodes: list[int],
             dist: Callable[[int, int], int], rng: random.Random) -> int | None:
    return pod.home if pod.home in free_nodes else None


# --- TA ---

def ta_nearest(open_tasks: list[tuple[int, int]], idle_robots: list[tuple[int, int]],
               dist: Callable[[int, int], int]) -> list[tuple[int, int]]:
    """Tasks in creation order each take the nearest idle robot.

    open_tasks: (task id, start node); idle_robots: (robot id, node).
    """
    free = dict(idle_robots)
    out = []
    for task_id, start in open_tasks:
        if not free:
            break
        rid = min(sorted(free), key=lambda r: (dist(free[r], start), r))
        out.append((task_id, rid))
        del free[rid]
    return out


_REGISTRY: dict[str, dict[str, Callable]] = {
    "roa": {"fcfs-least-loaded": roa_fcfs_least_loaded},
    "poa": {"fcfs": poa_fcfs, "common-lines": poa_common_lines},
    "rps": {"max-capacity": rps_max_capacity},
    "pps": {"max-cover": pps_max_cover},
    "pr": {"nearest": pr_nearest, "random": pr_random, "fixed": pr_fixed},
    "ta": {"nearest": ta_nearest},
    "pp": {"interval-astar": None},  # the planner itself; slot kept for config symmetry
}


def resolve(slot: str, name: str) -> Callable:
    try:
        table = _REGISTRY[slot]
    except KeyError:
        raise PolicyError(f"unknown policy slot {slot!r}") from None
    if name not in table:
        raise PolicyError(f"unknown policy {name!r} for slot {slot}; "
                          f"registered: {', '.join(sorted(table))}")
    return table[name]


def registered(slot: str) -> list[str]:
    return sorted(_REGISTRY[slot])


def resolve_binding(binding: PluginBinding) -> dict[str, Callable]:
    return {slot: resolve(slot, getattr(binding, slot))
            for slot in ("roa", "poa", "rps", "pps", "pr", "ta", "pp")}
