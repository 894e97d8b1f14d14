"""Grid world model: layout, stations, pods, robots and inventory state."""

from __future__ import annotations

import hashlib
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum


class ConfigError(ValueError):
    """Raised for invalid layout or scenario configuration."""


class WaypointKind(Enum):
    STORAGE = "storage"
    HIGHWAY = "highway"
    DWELLING = "dwelling"
    PICK_QUEUE = "pick_queue"
    REPLENISH_QUEUE = "replenish_queue"


Coord = tuple[int, int]  # (row, col)

PICK = "pick"
REPLENISH = "replenish"


def stable_rng(seed: int, label: str) -> random.Random:
    """Independent RNG stream derived from the run seed and a fixed label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class Station:
    id: int
    kind: str  # PICK or REPLENISH
    cell: Coord
    capacity: int = 2  # max pods queued or inbound
    order_slots: int = 4  # max concurrently assigned orders/bundles


@dataclass(frozen=True)
class LayoutConfig:
    rows: int
    cols: int
    spacing_m: float = 1.0
    stations: tuple[Station, ...] = ()
    storage: tuple[Coord, ...] = ()
    dwelling: tuple[Coord, ...] = ()


class Layout:
    """Immutable 4-connected grid of waypoints with station annotations.

    Waypoint ids are row-major ints (r * cols + c).
    """

    def __init__(self, config: LayoutConfig):
        rows, cols = config.rows, config.cols
        if rows < 2 or cols < 2:
            raise ConfigError(f"grid must be at least 2x2, got {rows}x{cols}")
        if config.spacing_m <= 0:
            raise ConfigError("spacing_m must be positive")
        if not config.stations:
            raise ConfigError("no stations")
        kinds_present = {s.kind for s in config.stations}
        if kinds_present != {PICK, REPLENISH}:
            raise ConfigError("no stations of kind "
                              + " and ".join(sorted({PICK, REPLENISH} - kinds_present)))
        ids = [s.id for s in config.stations]
        if len(ids) != len(set(ids)):
            raise ConfigError("duplicate station ids")

        self.rows = rows
        self.cols = cols
        self.spacing_m = config.spacing_m
        self.stations = tuple(sorted(config.stations, key=lambda s: s.id))
        self.station_by_id = {s.id: s for s in self.stations}

        kinds = [WaypointKind.HIGHWAY] * (rows * cols)
        for cell in config.storage:
            kinds[self._check_cell(cell)] = WaypointKind.STORAGE
        for cell in config.dwelling:
            kinds[self._check_cell(cell)] = WaypointKind.DWELLING
        for s in self.stations:
            node = self._check_cell(s.cell)
            if kinds[node] is not WaypointKind.HIGHWAY:
                raise ConfigError(f"station {s.id} cell {s.cell} already assigned {kinds[node].value}")
            kinds[node] = (WaypointKind.PICK_QUEUE if s.kind == PICK
                           else WaypointKind.REPLENISH_QUEUE)
        self.kinds: tuple[WaypointKind, ...] = tuple(kinds)

        self.neighbors: tuple[tuple[int, ...], ...] = tuple(
            tuple(self.node(r + dr, c + dc)
                  for dr, dc in ((0, 1), (-1, 0), (0, -1), (1, 0))
                  if 0 <= r + dr < rows and 0 <= c + dc < cols)
            for r in range(rows) for c in range(cols)
        )
        # (heading index, neighbor) pairs; heading order matches pathing.HEADING_DELTAS
        self.heading_moves: tuple[tuple[tuple[int, int], ...], ...] = tuple(
            tuple((h, self.node(r + dr, c + dc))
                  for h, (dr, dc) in enumerate(((0, 1), (-1, 0), (0, -1), (1, 0)))
                  if 0 <= r + dr < rows and 0 <= c + dc < cols)
            for r in range(rows) for c in range(cols)
        )
        self.station_node = {s.id: self.node(*s.cell) for s in self.stations}
        self._dist_cache: dict[int, list[int]] = {}
        self._check_connected()

    def _check_cell(self, cell: Coord) -> int:
        r, c = cell
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise ConfigError(f"cell {cell} outside {self.rows}x{self.cols} grid")
        return r * self.cols + c

    def _check_connected(self) -> None:
        start = self.station_node[self.stations[0].id]
        seen = self.hops_from(start)
        unreachable = [self.coord(n) for n, d in enumerate(seen) if d < 0]
        if unreachable:
            raise ConfigError(f"unreachable waypoints: {unreachable}")

    def node(self, r: int, c: int) -> int:
        return r * self.cols + c

    def coord(self, node: int) -> Coord:
        return divmod(node, self.cols)

    def kind(self, node: int) -> WaypointKind:
        return self.kinds[node]

    def storage_nodes(self) -> list[int]:
        return [n for n, k in enumerate(self.kinds) if k is WaypointKind.STORAGE]

    def dwelling_nodes(self) -> list[int]:
        return [n for n, k in enumerate(self.kinds) if k is WaypointKind.DWELLING]

    def hops_from(self, start: int) -> list[int]:
        """BFS hop distances from start to every node (-1 if unreachable)."""
        cached = self._dist_cache.get(start)
        if cached is not None:
            return cached
        dist = [-1] * (self.rows * self.cols)
        dist[start] = 0
        q = deque([start])
        while q:
            n = q.popleft()
            for m in self.neighbors[n]:
                if dist[m] < 0:
                    dist[m] = dist[n] + 1
                    q.append(m)
        self._dist_cache[start] = dist
        return dist


def build_layout(config: LayoutConfig) -> Layout:
    return Layout(config)


def graph_distance(layout: Layout, a: int, b: int) -> int:
    """Shortest-path hop count between waypoints a and b."""
    d = layout.hops_from(a)[b]
    if d < 0:
        raise ConfigError(f"waypoints {layout.coord(a)} and {layout.coord(b)} unreachable")
    return d


def random_layout(rows: int, cols: int, n_pick: int, n_replenish: int,
                  n_storage: int, n_dwelling: int, seed: int) -> LayoutConfig:
    """Seeded random placement of stations, storage and dwelling cells."""
    rng = stable_rng(seed, "layout")
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    rng.shuffle(cells)
    need = n_pick + n_replenish + n_storage + n_dwelling
    if need > len(cells):
        raise ConfigError(f"{need} placements requested on {len(cells)} cells")
    it = iter(cells)
    stations = []
    for i in range(n_pick):
        stations.append(Station(id=i + 1, kind=PICK, cell=next(it)))
    for i in range(n_replenish):
        stations.append(Station(id=n_pick + i + 1, kind=REPLENISH, cell=next(it)))
    storage = tuple(next(it) for _ in range(n_storage))
    dwelling = tuple(next(it) for _ in range(n_dwelling))
    return LayoutConfig(rows=rows, cols=cols, stations=tuple(stations),
                        storage=storage, dwelling=dwelling)


# --- inventory-carrying entities ---

@dataclass
class Compartment:
    sku: str | None
    count: int
    capacity: int

    def free(self) -> int:
        return self.capacity - self.count


class InventoryError(ValueError):
    """Raised when an inventory delta would under- or overflow a compartment."""


# Pod location is a tagged pair: ("storage", node) | ("robot", robot_id) | ("station", station_id)
Location = tuple[str, int]


@dataclass
class Pod:
    id: int
    comp_rows: int
    comp_cols: int
    compartments: dict[Coord, Compartment]
    location: Location
    home: int  # storage node the pod started at

    def compartment(self, index: Coord) -> Compartment:
        if index not in self.compartments:
            raise InventoryError(f"pod {self.id} has no compartment {index}")
        return self.compartments[index]

    def total(self, sku: str | None = None) -> int:
        return sum(c.count for c in self.compartments.values()
                   if sku is None or c.sku == sku)

    def stock(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.compartments.values():
            if c.sku is not None and c.count > 0:
                out[c.sku] = out.get(c.sku, 0) + c.count
        return out

    def free_for(self, sku: str) -> int:
        """Largest single-compartment room available for sku (no splitting)."""
        room = [c.free() for c in self.compartments.values()
                if c.sku == sku or c.sku is None]
        return max(room, default=0)

    def pick_compartment(self, sku: str, qty: int) -> Coord | None:
        """Compartment to pick from: most stocked feasible one, lowest index tie-break."""
        best = None
        for idx in sorted(self.compartments):
            c = self.compartments[idx]
            if c.sku == sku and c.count >= qty:
                if best is None or c.count > self.compartments[best].count:
                    best = idx
        return best

    def simulate_picks(self, wants: list[tuple[str, int]]) -> list[bool]:
        """Feasibility of a pick sequence, one compartment per pick (no splits).

        Mirrors serve-time behaviour: each want takes the fullest feasible
        compartment; infeasible wants are skipped without consuming stock.
        """
        counts = {idx: c.count for idx, c in self.compartments.items()}
        out = []
        for sku, qty in wants:
            best = None
            for idx in sorted(self.compartments):
                c = self.compartments[idx]
                if c.sku == sku and counts[idx] >= qty:
                    if best is None or counts[idx] > counts[best]:
                        best = idx
            if best is None:
                out.append(False)
            else:
                counts[best] -= qty
                out.append(True)
        return out

    def replenish_compartments(self, sku: str, qty: int) -> list[Coord]:
        """Feasible compartments for stowing qty of sku, best (most room) first."""
        feasible = [idx for idx in sorted(self.compartments)
                    if (self.compartments[idx].sku in (sku, None))
                    and self.compartments[idx].free() >= qty]
        feasible.sort(key=lambda idx: (-self.compartments[idx].free(), idx))
        return feasible


def apply_inventory_delta(pod: Pod, index: Coord, delta: int, sku: str | None = None) -> Pod:
    """Apply a count change to one compartment; rejects under/overflow untouched."""
    comp = pod.compartment(index)
    if delta > 0 and comp.sku is None:
        if sku is None:
            raise InventoryError(f"pod {pod.id} compartment {index} has no sku bound")
    elif sku is not None and comp.sku is not None and comp.sku != sku:
        raise InventoryError(
            f"pod {pod.id} compartment {index} holds {comp.sku}, not {sku}")
    new = comp.count + delta
    if new < 0:
        raise InventoryError(
            f"pod {pod.id} compartment {index}: count {comp.count} {delta:+d} underflows")
    if new > comp.capacity:
        raise InventoryError(
            f"pod {pod.id} compartment {index}: count {comp.count} {delta:+d} "
            f"exceeds capacity {comp.capacity}")
    if comp.sku is None and delta > 0:
        comp.sku = sku
    comp.count = new
    return pod


# --- orders ---

@dataclass(frozen=True)
class OrderLine:
    sku: str
    quantity: int


@dataclass(frozen=True)
class PickOrder:
    id: int
    lines: tuple[OrderLine, ...]


@dataclass(frozen=True)
class ReplenishmentBundle:
    id: int
    sku: str
    quantity: int


ROBOT_IDLE = "idle"
ROBOT_MOVING = "moving"
ROBOT_TURNING = "turning"
ROBOT_PICKING_UP = "picking_up"
ROBOT_SETTING_DOWN = "setting_down"
ROBOT_AT_STATION = "at_station"


@dataclass
class Robot:
    id: int
    node: int
    orientation: float  # radians in [0, 2*pi)
    carrying: int | None = None  # pod id
    state: str = ROBOT_IDLE
    available: bool = True  # False once a wire connection drops


@dataclass
class SkuInfo:
    name: str
    optimum: int = 10
    maximum: int = 10
    min_presentation: int = 1


class World:
    """Mutable simulation state: single logical owner is the engine."""

    def __init__(self, layout: Layout, pods: list[Pod], robots: list[Robot],
                 skus: dict[str, SkuInfo] | None = None):
        self.layout = layout
        self.pods = {p.id: p for p in pods}
        self.robots = {r.id: r for r in robots}
        if len(self.pods) != len(pods):
            raise ConfigError("duplicate pod ids")
        if len(self.robots) != len(robots):
            raise ConfigError("duplicate robot ids")
        self.skus = dict(skus) if skus else {}
        for pod in pods:
            for comp in pod.compartments.values():
                if comp.sku is not None and comp.sku not in self.skus:
                    self.skus[comp.sku] = SkuInfo(name=comp.sku)
        # flow counters for conservation checks
        self.picked: dict[str, int] = {}
        self.replenished: dict[str, int] = {}
        self._check_placement()

    def _check_placement(self) -> None:
        seen: dict[int, int] = {}
        for pod in self.pods.values():
            where, ref = pod.location
            if where != "storage":
                continue
            if self.layout.kind(ref) is not WaypointKind.STORAGE:
                raise ConfigError(f"pod {pod.id} placed on non-storage cell {self.layout.coord(ref)}")
            if ref in seen:
                raise ConfigError(f"pods {seen[ref]} and {pod.id} share cell {self.layout.coord(ref)}")
            seen[ref] = pod.id

    def pod_at(self, node: int) -> Pod | None:
        for pod in self.pods.values():
            if pod.location == ("storage", node):
                return pod
        return None

    def occupied_storage(self) -> set[int]:
        return {ref for p in self.pods.values()
                for kind, ref in [p.location] if kind == "storage"}

    def free_storage(self) -> list[int]:
        taken = self.occupied_storage()
        return [n for n in self.layout.storage_nodes() if n not in taken]

    def sku_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for pod in self.pods.values():
            for sku, count in pod.stock().items():
                totals[sku] = totals.get(sku, 0) + count
        return totals

    def count_picked(self, sku: str, qty: int) -> None:
        self.picked[sku] = self.picked.get(sku, 0) + qty

    def count_replenished(self, sku: str, qty: int) -> None:
        self.replenished[sku] = self.replenished.get(sku, 0) + qty

    def conservation_balance(self) -> dict[str, int]:
        """Per sku: stored + picked - replenished; constant over any event sequence."""
        totals = self.sku_totals()
        skus = set(totals) | set(self.picked) | set(self.replenished)
        return {s: totals.get(s, 0) + self.picked.get(s, 0) - self.replenished.get(s, 0)
                for s in skus}
