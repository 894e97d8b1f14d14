"""Collision-free single-robot planning on the shared grid.

Time-interval A* over (waypoint, heading, safe-interval) states against a
reservation table of node dwell intervals and edge traversal intervals.
Rotation is charged before departing a node, waiting is allowed at nodes.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .world import Layout

TWO_PI = 2.0 * math.pi

# heading index -> (drow, dcol); angles 0, pi/2, pi, 3pi/2 (east, north, west, south)
HEADING_DELTAS = ((0, 1), (-1, 0), (0, -1), (1, 0))
HEADING_ANGLES = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)

PICKUP = "pickup"
SETDOWN = "setdown"


@dataclass(frozen=True)
class Kinematics:
    v_max: float = 0.05          # m/s
    t_full_turn: float = 3.0     # s for a 360 degree turn
    t_lift_pickup: float = 3.0   # s
    t_lift_setdown: float = 3.0  # s


def edge_time(kin: Kinematics, spacing_m: float) -> float:
    return spacing_m / kin.v_max


def angle_diff(a: float, b: float) -> float:
    """Smallest absolute angle from a to b, in [0, pi]."""
    d = math.fmod(b - a, TWO_PI)
    if d < 0:
        d += TWO_PI
    return min(d, TWO_PI - d)


def turn_time(kin: Kinematics, radians: float) -> float:
    return kin.t_full_turn * abs(radians) / TWO_PI


def signed_turn(a: float, b: float) -> float:
    """Signed shortest rotation from a to b; positive is counter-clockwise."""
    d = math.fmod(b - a, TWO_PI)
    if d < 0:
        d += TWO_PI
    return d if d <= math.pi else d - TWO_PI


def lift_dwell(kind: str, kin: Kinematics) -> float:
    if kind == PICKUP:
        return kin.t_lift_pickup
    if kind == SETDOWN:
        return kin.t_lift_setdown
    raise ValueError(f"unknown lift kind {kind!r}")


@dataclass(frozen=True)
class PathNode:
    node: int
    arrival: float
    departure: float  # math.inf on the final node
    orientation: float  # radians after any rotation at this node


@dataclass(frozen=True)
class TimedPath:
    robot: int
    nodes: tuple[PathNode, ...]

    @property
    def start(self) -> int:
        return self.nodes[0].node

    @property
    def goal(self) -> int:
        return self.nodes[-1].node

    @property
    def start_time(self) -> float:
        return self.nodes[0].arrival

    @property
    def end_time(self) -> float:
        return self.nodes[-1].arrival

    @property
    def total_duration(self) -> float:
        return self.end_time - self.start_time


class ReservationError(ValueError):
    """Raised when a reservation would overlap an existing one."""


class ReservationTable:
    """Disjoint occupancy intervals per waypoint and per (undirected) edge.

    Edge intervals carry the traversal direction but overlap is forbidden in
    both directions, which rules out swap conflicts outright.
    """

    def __init__(self) -> None:
        self.node_iv: dict[int, list[tuple[float, float, int]]] = {}
        self.edge_iv: dict[tuple[int, int], list[tuple[float, float, int, int]]] = {}
        self.version = 0  # bumped on every mutation; used to skip futile replans

    @staticmethod
    def _ekey(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def node_free(self, node: int, start: float, end: float, ignore: int | None = None) -> bool:
        for s, e, robot in self.node_iv.get(node, ()):
            if robot != ignore and s < end and start < e:
                return False
        return True

    def edge_free(self, a: int, b: int, start: float, end: float, ignore: int | None = None) -> bool:
        for s, e, robot, _dir in self.edge_iv.get(self._ekey(a, b), ()):
            if robot != ignore and s < end and start < e:
                return False
        return True

    def safe_intervals(self, node: int, ignore: int | None = None) -> list[tuple[float, float]]:
        """Maximal free intervals on node, sorted; always ends with an open one unless pinned."""
        busy = sorted((s, e) for s, e, robot in self.node_iv.get(node, ())
                      if robot != ignore)
        out: list[tuple[float, float]] = []
        cursor = 0.0
        for s, e in busy:
            if s > cursor:
                out.append((cursor, s))
            cursor = max(cursor, e)
        if cursor < math.inf:
            out.append((cursor, math.inf))
        return out

    def parked(self, node: int, ignore: int | None = None) -> bool:
        """True when another robot holds (or will hold) an open-ended pin on node."""
        for _s, e, robot in self.node_iv.get(node, ()):
            if e == math.inf and robot != ignore:
                return True
        return False

    def earliest_edge_slot(self, a: int, b: int, lower: float, duration: float,
                           ignore: int | None = None) -> float:
        """Earliest t >= lower such that [t, t+duration] is free on edge (a, b)."""
        t = lower
        intervals = sorted(self.edge_iv.get(self._ekey(a, b), ()))
        for s, e, robot, _dir in intervals:
            if robot == ignore:
                continue
            if s < t + duration and t < e:
                t = e
        return t

    def reserve(self, path: TimedPath) -> None:
        """Replace the robot's existing occupancy (pin included) with this path's."""
        nodes = path.nodes
        for pn in nodes:
            if not self.node_free(pn.node, pn.arrival, pn.departure, ignore=path.robot):
                raise ReservationError(f"node {pn.node} busy in [{pn.arrival}, {pn.departure}]")
        for prev, nxt in zip(nodes, nodes[1:]):
            if not self.edge_free(prev.node, nxt.node, prev.departure, nxt.arrival,
                                  ignore=path.robot):
                raise ReservationError(f"edge {prev.node}-{nxt.node} busy")
        self.remove(path.robot)
        for pn in nodes:
            self.node_iv.setdefault(pn.node, []).append((pn.arrival, pn.departure, path.robot))
        for prev, nxt in zip(nodes, nodes[1:]):
            key = self._ekey(prev.node, nxt.node)
            self.edge_iv.setdefault(key, []).append(
                (prev.departure, nxt.arrival, path.robot, nxt.node))
        self.version += 1

    def release(self, robot: int, now: float, node: int) -> None:
        """Drop all of a robot's intervals and pin its current node open-endedly."""
        for ivs in self.node_iv.values():
            ivs[:] = [iv for iv in ivs if iv[2] != robot]
        for ivs in self.edge_iv.values():
            ivs[:] = [iv for iv in ivs if iv[2] != robot]
        self.node_iv.setdefault(node, []).append((now, math.inf, robot))
        self.version += 1

    def remove(self, robot: int) -> None:
        for ivs in self.node_iv.values():
            ivs[:] = [iv for iv in ivs if iv[2] != robot]
        for ivs in self.edge_iv.values():
            ivs[:] = [iv for iv in ivs if iv[2] != robot]
        self.version += 1

    def extend_pin(self, robot: int, node: int, until: float) -> None:
        """Replace the robot's open pin on node with [start, until]; used around lifts."""
        ivs = self.node_iv.get(node, [])
        for i, (s, e, rb) in enumerate(ivs):
            if rb == robot and e == math.inf:
                ivs[i] = (s, until, robot)
                self.version += 1
                return
        raise ReservationError(f"robot {robot} holds no pin on node {node}")

    def prune(self, now: float) -> None:
        """Drop intervals that ended before now; pins are kept."""
        for ivs in self.node_iv.values():
            ivs[:] = [iv for iv in ivs if iv[1] > now]
        for ivs in self.edge_iv.values():
            ivs[:] = [iv for iv in ivs if iv[1] > now]

    def occupancy_rows(self) -> list[tuple[int, int, float, float]]:
        """(robot, waypoint, arrival, departure) rows for the conflict verifier."""
        rows = []
        for node, ivs in self.node_iv.items():
            for s, e, robot in ivs:
                rows.append((robot, node, s, e))
        rows.sort()
        return rows


def occupancy_csv(paths: list[TimedPath]) -> str:
    """Scenario dump for the external conflict verifier."""
    lines = ["robot,waypoint,arrival,departure"]
    for path in paths:
        for pn in path.nodes:
            dep = "" if pn.departure == math.inf else f"{pn.departure:.6f}"
            lines.append(f"{path.robot},{pn.node},{pn.arrival:.6f},{dep}")
    return "\n".join(lines) + "\n"


@dataclass
class PlanRequest:
    robot: int
    start: int
    orientation: float
    goal: int
    start_time: float
    blocked: frozenset[int] = frozenset()
    max_expansions: int = 20000


def plan(layout: Layout, req: PlanRequest, table: ReservationTable,
         kin: Kinematics) -> TimedPath | None:
    """Find the earliest-arrival conflict-free timed path, or None (deferred).

    The robot must currently hold an open-ended pin on its start node, which
    is ignored during the search and replaced when the result is reserved.
    """
    if req.start == req.goal:
        return TimedPath(req.robot, (PathNode(req.start, req.start_time, math.inf,
                                              req.orientation),))
    if table.parked(req.goal, ignore=req.robot):
        return None

    dt_edge = edge_time(kin, layout.spacing_m)
    hops = layout.hops_from(req.goal)
    if hops[req.start] < 0:
        return None

    inf = math.inf
    me = req.robot
    turn_unit = kin.t_full_turn * 0.25  # per quarter turn on the grid
    safe: dict[int, list[tuple[float, float]]] = {}
    edge_iv = table.edge_iv
    moves = layout.heading_moves
    blocked = req.blocked

    def intervals(node: int) -> list[tuple[float, float]]:
        ivs = safe.get(node)
        if ivs is None:
            ivs = table.safe_intervals(node, ignore=me)
            safe[node] = ivs
        return ivs

    start_ivs = intervals(req.start)
    start_idx = next((i for i, (s, e) in enumerate(start_ivs)
                      if s <= req.start_time < e), None)
    if start_idx is None:
        return None

    # state: (node, heading, interval index); heading -1 = initial free orientation
    start_state = (req.start, -1, start_idx)
    g: dict[tuple[int, int, int], float] = {start_state: req.start_time}
    parent: dict[tuple[int, int, int], tuple[tuple[int, int, int], float]] = {}
    open_heap = [(req.start_time + hops[req.start] * dt_edge, 0, start_state,
                  req.start_time)]
    tie = 0
    closed: set[tuple[int, int, int]] = set()
    expansions = 0
    goal = req.goal

    while open_heap:
        _f, _tie, state, arr = heapq.heappop(open_heap)
        if state in closed or arr > g.get(state, inf):
            continue
        closed.add(state)
        node, heading, idx = state
        if node == goal and intervals(node)[idx][1] == inf:
            return _reconstruct(req, state, arr, g, parent)
        expansions += 1
        if expansions > req.max_expansions:
            return None
        cur_end = intervals(node)[idx][1]
        for h, nxt in moves[node]:
            if nxt in blocked:
                continue
            if heading < 0:
                rot = turn_time(kin, angle_diff(req.orientation, HEADING_ANGLES[h]))
            else:
                quarter = (h - heading) % 4
                if quarter == 0:
                    rot = 0.0
                elif quarter == 2:
                    rot = turn_unit * 2.0
                else:
                    rot = turn_unit
            ready = arr + rot
            edge_busy = edge_iv.get((node, nxt) if node < nxt else (nxt, node))
            for j, (js, je) in enumerate(intervals(nxt)):
                # depart no earlier than rotation allows and no earlier than
                # needed to land inside the target safe interval
                dep = ready if ready > js - dt_edge else js - dt_edge
                if edge_busy:
                    for es, ee, erb, _dir in sorted(edge_busy):
                        if erb != me and es < dep + dt_edge and dep < ee:
                            dep = ee
                t_arr = dep + dt_edge
                if dep > cur_end or t_arr >= je:
                    continue
                nstate = (nxt, h, j)
                if t_arr < g.get(nstate, inf):
                    g[nstate] = t_arr
                    parent[nstate] = (state, dep)
                    tie += 1
                    heapq.heappush(open_heap,
                                   (t_arr + hops[nxt] * dt_edge, tie, nstate, t_arr))
    return None


def _reconstruct(req: PlanRequest, goal_state: tuple[int, int, int], goal_arr: float,
                 g: dict, parent: dict) -> TimedPath:
    chain: list[tuple[int, int, float, float]] = []  # node, heading, arrival, departure
    state, arr = goal_state, goal_arr
    dep = math.inf
    while True:
        chain.append((state[0], state[1], arr, dep))
        prev = parent.get(state)
        if prev is None:
            break
        state, dep = prev
        arr = g[state]
    chain.reverse()
    nodes = []
    for node, heading, arrival, departure in chain:
        angle = req.orientation if heading < 0 else HEADING_ANGLES[heading]
        nodes.append(PathNode(node, arrival, departure, angle))
    # orientation at a node is the heading used to leave it
    fixed = []
    for i, pn in enumerate(nodes):
        if i + 1 < len(nodes):
            fixed.append(PathNode(pn.node, pn.arrival, pn.departure,
                                  nodes[i + 1].orientation))
        else:
            fixed.append(PathNode(pn.node, pn.arrival, pn.departure,
                                  nodes[i].orientation))
    return TimedPath(req.robot, tuple(fixed))
