"""Deterministic agent-based discrete-event core.

A single logical owner processes events in (time, seq) order, mediates
decision requests to the bound policies after every event, and drives robots
either through the in-process kinematic simulator or over the agent wire.
Identical seed and configuration produce a byte-identical event log.
"""

from __future__ import annotations

import heapq
import math
import time as _wallclock
from dataclasses import dataclass, field

from . import wire as wiremod
from .ledger import EpochTracker
from .orders import (EXTRACT, INSERT, NewOrder, OrderGateway, OrderGenerator,
                     Receipt, Request)
from .pathing import (PICKUP, SETDOWN, Kinematics, PlanRequest, ReservationTable,
                      plan)
from .policies import (DecisionError, OrderView, PluginBinding, RequestView,
                       StationView, resolve_binding)
from .world import (PICK, REPLENISH, ROBOT_AT_STATION, ROBOT_IDLE, ROBOT_MOVING,
                    ROBOT_PICKING_UP, ROBOT_SETTING_DOWN, OrderLine, PickOrder,
                    ReplenishmentBundle, World, graph_distance, stable_rng)

EV_ROBOT_ARRIVED = "RobotArrived"
EV_ROTATION_DONE = "RotationDone"
EV_LIFT_DONE = "LiftDone"
EV_ORDER_ARRIVAL = "OrderArrival"
EV_BUNDLE_RECEIPT = "BundleReceipt"
EV_STATION_CONFIRM = "StationConfirm"
EV_DECISION_DUE = "DecisionDue"
EV_FEED_POLL = "FeedPoll"


class SchedulingError(ValueError):
    pass


class SimulationAborted(RuntimeError):
    def __init__(self, cause: BaseException):
        super().__init__(f"simulation aborted: {cause}")
        self.cause = cause


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[tuple[float, int, str, tuple]] = []
        self._seq = 0
        self.clock = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def take_seq(self) -> int:
        seq = self._seq
        self._seq += 1
        return seq

    def schedule(self, time: float, kind: str, payload: tuple) -> int:
        if time < self.clock:
            raise SchedulingError(
                f"event {kind} at {time} is in the past (clock {self.clock})")
        seq = self.take_seq()
        heapq.heappush(self._heap, (time, seq, kind, payload))
        return seq

    def peek_time(self) -> float:
        return self._heap[0][0]

    def pop(self) -> tuple[float, int, str, tuple]:
        event = heapq.heappop(self._heap)
        self.clock = event[0]
        return event


class EventLog:
    """Newline-delimited tab-separated records: time, seq, kind, payload."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.lines: list[str] = []

    def record(self, time: float, seq: int, kind: str, payload: str) -> None:
        if self.enabled:
            self.lines.append(f"{time:.6f}\t{seq}\t{kind}\t{payload}")

    def to_text(self) -> str:
        return "\n".join(self.lines) + ("\n" if self.lines else "")

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


@dataclass
class MetricsReport:
    horizon: float = 0.0
    completed_orders: int = 0
    completed_bundles: int = 0
    throughput_per_hour: float = 0.0
    pile_on: float = 0.0
    robot_utilization: float = 0.0
    parked_orders: int = 0
    error_replies: int = 0
    ledger_epochs: int = 0
    ledger_direct: float = 0.0
    ledger_shifted: float = 0.0
    ledger_decomposed: float = 0.0
    ledger_residual: float = 0.0
    ledger_c_max: float = 0.0

    FIELDS = ("horizon", "completed_orders", "completed_bundles",
              "throughput_per_hour", "pile_on", "robot_utilization",
              "parked_orders", "error_replies", "ledger_epochs",
              "ledger_direct", "ledger_shifted", "ledger_decomposed",
              "ledger_residual", "ledger_c_max")

    def to_csv(self) -> str:
        header = ",".join(self.FIELDS)
        vals = []
        for name in self.FIELDS:
            v = getattr(self, name)
            vals.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        return header + "\n" + ",".join(vals) + "\n"


TASK_EXTRACTION = "extraction"
TASK_INSERTION = "insertion"
TASK_REST = "rest"

PH_OPEN = "open"
PH_FETCH = "fetch"
PH_LIFT_UP = "lift_up"
PH_HAUL = "haul"
PH_SERVE = "serve"
PH_STORE_WAIT = "store_wait"
PH_STORE = "store"
PH_LIFT_DOWN = "lift_down"
PH_REST_MOVE = "rest_move"
PH_DONE = "done"


@dataclass
class RobotTask:
    id: int
    kind: str
    pod: int | None = None
    station: int | None = None
    serve_queue: list[Request] = field(default_factory=list)
    robot: int | None = None
    phase: str = PH_OPEN
    leg: int = 0
    goal: int | None = None
    store_node: int | None = None
    served_this_visit: int = 0
    plan_fails: int = 0
    lift_attempts: int = 0
    store_request: Request | None = None
    last_served: Request | None = None
    epoch_done: bool = False
    retreat_to: int | None = None


@dataclass
class StationState:
    id: int
    kind: str
    node: int
    capacity: int
    order_slots: int
    queue: list[Request] = field(default_factory=list)  # unserved, not yet in a task
    assigned_orders: list[int] = field(default_factory=list)
    assigned_bundles: list[int] = field(default_factory=list)
    inbound: int = 0  # tasks bound for or serving at this station
    scripted_verdicts: list[str] = field(default_factory=list)


class Simulation:
    def __init__(self, world: World, binding: PluginBinding, *, seed: int = 0,
                 kin: Kinematics | None = None,
                 generator: OrderGenerator | None = None,
                 tracker: EpochTracker | None = None,
                 t_pick_line: float = 5.0,
                 log_events: bool = True,
                 hub: "wiremod.WireHub | None" = None,
                 wire_robots: set[int] | None = None,
                 scripted_verdicts: dict[int, list[str]] | None = None,
                 feed_poll_interval: float = 1.0,
                 replenish_lowest_stock: bool = False):
        self.world = world
        self.binding = binding
        self.pol = resolve_binding(binding)
        self.seed = seed
        self.kin = kin or Kinematics()
        self.generator = generator
        self.tracker = tracker
        self.t_pick_line = t_pick_line
        self.hub = hub
        self.wire_robots = wire_robots or set()
        self.feed_poll_interval = feed_poll_interval
        self.replenish_lowest_stock = replenish_lowest_stock

        self.queue = EventQueue()
        self.log = EventLog(log_events)
        self.table = ReservationTable()
        self.gateway = OrderGateway(world)
        self.rng_pr = stable_rng(seed, "pr")

        layout = world.layout
        self.stations: dict[int, StationState] = {}
        for st in layout.stations:
            self.stations[st.id] = StationState(
                id=st.id, kind=st.kind, node=layout.station_node[st.id],
                capacity=st.capacity, order_slots=st.order_slots,
                scripted_verdicts=list((scripted_verdicts or {}).get(st.id, [])))

        self.backlog_orders: list[PickOrder] = []
        self.backlog_bundles: list[ReplenishmentBundle] = []
        self.parked: list[PickOrder] = []
        self.order_transfer: dict[int, int] = {}
        self.bundle_requests: dict[int, Request] = {}
        self.bundles_by_id: dict[int, ReplenishmentBundle] = {}
        self.unassigned_bundles: dict[int, ReplenishmentBundle] = {}
        self.open_tasks: list[RobotTask] = []
        self.pending_stores: list[RobotTask] = []
        self.robot_tasks: dict[int, RobotTask | None] = {rid: None
                                                         for rid in world.robots}
        self.reserved_pods: set[int] = set()
        self.reserved_slots: set[int] = set()
        self.rest_targets: dict[int, int] = {}
        self.stalled_moves: dict[int, tuple[int, int, bool, int]] = {}
        self.inventory_version = 0
        self._rps_blocked: dict[int, int] = {}  # bundle id -> inventory version
        self._dwellings = frozenset(layout.dwelling_nodes())
        self._next_task = 1
        self._cmd_ids: dict[int, int] = {}
        self._wire_stash: list[tuple] = []
        self._wall_clock = False

        self.sims: dict[int, wiremod.RobotSim] = {}
        for rid, robot in sorted(world.robots.items()):
            self.sims[rid] = wiremod.RobotSim(
                robot_id=rid, kin=self.kin, spacing_m=layout.spacing_m,
                node=robot.node, orientation=robot.orientation)
            self.table.release(rid, 0.0, robot.node)

        self.completed_orders = 0
        self.completed_bundles = 0
        self.pileon_samples: list[int] = []
        self._busy_since: dict[int, float] = {}
        self._busy_total: dict[int, float] = {rid: 0.0 for rid in world.robots}
        self._prune_at = 600.0

    # --- logging helpers ---

    def _log(self, kind: str, payload: str) -> None:
        if self.log.enabled:
            self.log.record(self.queue.clock, self.queue.take_seq(), kind, payload)

    # --- public API ---

    def schedule(self, time: float, kind: str, payload: tuple) -> int:
        return self.queue.schedule(time, kind, payload)

    def run(self, horizon: float, max_epochs: int | None = None,
            wall_clock: bool = False, speedup: float = 1.0):
        """Process events in (time, seq) order until the horizon or epoch target."""
        self._wall_clock = wall_clock
        self._write_init_records()
        if self.generator is not None:
            self._schedule_next_order()
            self._schedule_next_receipt()
        if self.hub is not None:
            self.queue.schedule(0.0, EV_FEED_POLL, ())
        wall_start = _wallclock.monotonic()
        try:
            while len(self.queue):
                if (max_epochs is not None and self.tracker is not None
                        and self.tracker.epochs_recorded >= max_epochs):
                    break
                t = self.queue.peek_time()
                if t > horizon:
                    break
                if wall_clock:
                    target = wall_start + t / speedup
                    delay = target - _wallclock.monotonic()
                    if delay > 0:
                        _wallclock.sleep(min(delay, 0.2))
                        self._drain_wire_feed()
                        continue
                time_, seq, kind, payload = self.queue.pop()
                self._handle(time_, seq, kind, payload)
                self._decision_pass()
                if self.queue.clock >= self._prune_at:
                    self.table.prune(self.queue.clock)
                    self._prune_at = self.queue.clock + 600.0
        except Exception as exc:  # noqa: BLE001 - abort contract: flush with marker
            self._log("Abort", f"error={exc!r}")
            raise SimulationAborted(exc) from exc
        final_clock = min(max(self.queue.clock, 0.0), horizon)
        return self.log, self._metrics(final_clock)

    # --- init / arrivals ---

    def _write_init_records(self) -> None:
        lay = self.world.layout
        self._log("Init", f"grid={lay.rows}x{lay.cols} spacing={lay.spacing_m:.3f} "
                          f"stations={len(lay.stations)} pods={len(self.world.pods)} "
                          f"robots={len(self.world.robots)} seed={self.seed}")
        for st in lay.stations:
            self._log("Init", f"station={st.id} kind={st.kind} "
                              f"node={lay.station_node[st.id]}")
        for pid, pod in sorted(self.world.pods.items()):
            self._log("Init", f"pod={pid} at={pod.location[0]}:{pod.location[1]}")
        for rid, robot in sorted(self.world.robots.items()):
            self._log("Init", f"robot={rid} node={robot.node} "
                              f"orientation={robot.orientation:.6f}")

    def _schedule_next_order(self) -> None:
        nxt = self.generator.next_order()
        if nxt is not None:
            self.queue.schedule(nxt[0], EV_ORDER_ARRIVAL, (nxt[1],))

    def _schedule_next_receipt(self) -> None:
        nxt = self.generator.next_receipt()
        if nxt is not None:
            self.queue.schedule(nxt[0], EV_BUNDLE_RECEIPT, (nxt[1],))

    # --- event handling ---

    def _handle(self, time: float, seq: int, kind: str, payload: tuple) -> None:
        log = self.log
        if kind == EV_ROBOT_ARRIVED:
            rid, node, leg = payload
            task = self.robot_tasks.get(rid)
            if task is None or task.leg != leg:
                return
            self.world.robots[rid].node = node
            if log.enabled:
                log.record(time, seq, kind, f"robot={rid} node={node}")
            if node == task.goal:
                self._leg_complete(self.world.robots[rid], task)
        elif kind == EV_ROTATION_DONE:
            rid, orientation, leg = payload
            task = self.robot_tasks.get(rid)
            if task is None or task.leg != leg:
                return
            self.world.robots[rid].orientation = orientation
            if log.enabled:
                log.record(time, seq, kind,
                           f"robot={rid} orientation={orientation:.6f}")
        elif kind == EV_LIFT_DONE:
            rid, ok, lift_kind, leg = payload
            task = self.robot_tasks.get(rid)
            if task is None or task.leg != leg:
                return
            if log.enabled:
                log.record(time, seq, kind,
                           f"robot={rid} kind={lift_kind} ok={ok} pod={task.pod}")
            self._lift_done(self.world.robots[rid], task, lift_kind, ok)
        elif kind == EV_STATION_CONFIRM:
            sid, request_id, ok, error = payload
            self._station_confirm(time, seq, sid, request_id, ok, error)
        elif kind == EV_ORDER_ARRIVAL:
            order = payload[0]
            if log.enabled:
                lines = ",".join(f"{ln.sku}:{ln.quantity}" for ln in order.lines)
                log.record(time, seq, kind, f"order={order.id} lines={lines}")
            self._ingest_order(order)
            if self.generator is not None:
                self._schedule_next_order()
        elif kind == EV_BUNDLE_RECEIPT:
            bundles = payload[0]
            if log.enabled:
                summary = ",".join(f"{b.id}:{b.sku}:{b.quantity}" for b in bundles)
                log.record(time, seq, kind, f"bundles={summary}")
            self._ingest_receipt(bundles)
            if self.generator is not None:
                self._schedule_next_receipt()
        elif kind == EV_FEED_POLL:
            self._drain_wire_feed()
            self.queue.schedule(time + self.feed_poll_interval, EV_FEED_POLL, ())
        elif kind == EV_DECISION_DUE:
            if log.enabled:
                log.record(time, seq, kind, "")
        else:
            raise SchedulingError(f"unknown event kind {kind}")

    def _ingest_order(self, order: PickOrder) -> None:
        self.gateway.ingest(NewOrder(order=order))
        for tr in self.gateway.poll_feed():
            self.order_transfer[order.id] = tr.id
        if self.gateway.order_feasible(order):
            self.backlog_orders.append(order)
        else:
            self.parked.append(order)
            self.gateway.metrics["parked_orders"] += 1
            self._log("Parked", f"order={order.id}")

    def _ingest_receipt(self, bundles: tuple[ReplenishmentBundle, ...]) -> None:
        if self.replenish_lowest_stock:
            # purchasing replaces what sold: restock the emptiest sku
            totals = self.world.sku_totals()
            for sku in self.world.skus:
                totals.setdefault(sku, 0)
            bundles = tuple(
                ReplenishmentBundle(
                    id=b.id,
                    sku=min(sorted(totals), key=lambda s: (totals[s], s)),
                    quantity=b.quantity)
                for b in bundles)
        self.gateway.ingest(Receipt(bundles=bundles))
        for tr in self.gateway.poll_feed():
            requests = self.gateway.transfer_to_requests(tr, now=self.queue.clock)
            for bundle, request in zip(self.gateway.transfer_bundles[tr.id], requests):
                self.bundle_requests[bundle.id] = request
                self.bundles_by_id[bundle.id] = bundle
                self.unassigned_bundles[bundle.id] = bundle
                self.backlog_bundles.append(bundle)

    # --- decision cascade ---

    def _decision_pass(self) -> None:
        for _ in range(8):
            changed = False
            if self.backlog_orders:
                changed |= self._poa_pass()
            if self.backlog_bundles:
                changed |= self._roa_pass()
            if self.unassigned_bundles:
                changed |= self._rps_pass()
            changed |= self._pps_pass()
            changed |= self._insert_task_pass()
            if self.pending_stores:
                changed |= self._pr_pass()
            if self.open_tasks:
                changed |= self._ta_pass()
            if self.stalled_moves:
                changed |= self._retry_moves()
            if not changed:
                break
        self._rest_pass()

    def _retry_moves(self) -> bool:
        """Re-plan moves that found no conflict-free path, once the table changed."""
        changed = False
        for rid in sorted(self.stalled_moves):
            task_id, goal, laden, version = self.stalled_moves[rid]
            task = self.robot_tasks.get(rid)
            if task is None or task.id != task_id:
                del self.stalled_moves[rid]
                continue
            if self.table.version == version:
                continue
            del self.stalled_moves[rid]
            self._dispatch_move(self.world.robots[rid], task, goal, laden)
            if rid not in self.stalled_moves:
                changed = True
        return changed

    def _station_views(self, kind: str) -> list[StationView]:
        out = []
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if st.kind != kind:
                continue
            assigned = len(st.assigned_orders) if kind == PICK else len(st.assigned_bundles)
            out.append(StationView(id=sid, kind=kind, assigned=assigned,
                                   order_slots=st.order_slots))
        return out

    def _poa_pass(self) -> bool:
        views = [OrderView(id=o.id, skus=frozenset(ln.sku for ln in o.lines))
                 for o in self.backlog_orders]
        station_skus = {}
        for sid, st in self.stations.items():
            if st.kind == PICK:
                station_skus[sid] = frozenset(r.sku for r in st.queue if r.sku)
        try:
            pairs = self.pol["poa"](views, self._station_views(PICK), station_skus)
        except Exception as exc:
            raise DecisionError(f"poa plugin failed: {exc}") from exc
        if not pairs:
            return False
        by_id = {o.id: o for o in self.backlog_orders}
        for order_id, sid in pairs:
            order = by_id[order_id]
            st = self.stations[sid]
            if st.kind != PICK or len(st.assigned_orders) >= st.order_slots:
                self._log("DecisionRejected", f"POA order={order_id} station={sid}")
                continue
            self._log("Decision", f"POA order={order_id} station={sid}")
            st.assigned_orders.append(order_id)
            self.backlog_orders.remove(order)
            transfer = self.gateway.transfers[self.order_transfer[order_id]]
            requests = self.gateway.transfer_to_requests(
                transfer, now=self.queue.clock, station=sid)
            for req in requests:
                st.queue.append(req)
                self._log("Request", f"extract request={req.id} order={order_id} "
                                     f"sku={req.sku} qty={req.quantity} station={sid}")
        return True

    def _roa_pass(self) -> bool:
        eligible = [b for b in self.backlog_bundles
                    if self._rps_blocked.get(b.id) != self.inventory_version]
        if not eligible:
            return False
        try:
            pairs = self.pol["roa"](eligible, self._station_views(REPLENISH))
        except Exception as exc:
            raise DecisionError(f"roa plugin failed: {exc}") from exc
        if not pairs:
            return False
        by_id = {b.id: b for b in self.backlog_bundles}
        for bundle_id, sid in pairs:
            bundle = by_id[bundle_id]
            st = self.stations[sid]
            if st.kind != REPLENISH or len(st.assigned_bundles) >= st.order_slots:
                self._log("DecisionRejected", f"ROA bundle={bundle_id} station={sid}")
                continue
            self._log("Decision", f"ROA bundle={bundle_id} station={sid}")
            st.assigned_bundles.append(bundle_id)
            self.backlog_bundles.remove(bundle)
            self.bundle_requests[bundle_id].station = sid
        return True

    def _rps_pass(self) -> bool:
        changed = False
        for bundle_id in sorted(self.unassigned_bundles):
            request = self.bundle_requests[bundle_id]
            if request.station is None:
                continue  # still awaiting ROA
            bundle = self.unassigned_bundles[bundle_id]
            candidates = self._candidate_pods()
            try:
                pod_id = self.pol["rps"](bundle, candidates)
            except Exception as exc:
                raise DecisionError(f"rps plugin failed: {exc}") from exc
            if pod_id is None:
                # no feasible pod: give the station slot back and retry
                # after the next inventory change
                st = self.stations[request.station]
                if bundle_id in st.assigned_bundles:
                    st.assigned_bundles.remove(bundle_id)
                request.station = None
                self._rps_blocked[bundle_id] = self.inventory_version
                self.gateway.metrics["infeasible_bundles"] += 1
                self.backlog_bundles.append(bundle)
                self._log("Decision", f"RPSDeferred bundle={bundle_id}")
                changed = True
                continue
            pod = self.world.pods[pod_id]
            if pod.free_for(bundle.sku) < bundle.quantity or pod_id in self.reserved_pods:
                self._log("DecisionRejected", f"RPS bundle={bundle_id} pod={pod_id}")
                continue
            self._log("Decision", f"RPS bundle={bundle_id} pod={pod_id}")
            request.pod = pod_id
            st = self.stations[request.station]
            st.queue.append(request)
            self._log("Request", f"insert request={request.id} bundle={bundle_id} "
                                 f"sku={request.sku} qty={request.quantity} "
                                 f"station={request.station} pod={pod_id}")
            del self.unassigned_bundles[bundle_id]
            changed = True
        return changed

    def _candidate_pods(self) -> list:
        out = []
        for pid in sorted(self.world.pods):
            pod = self.world.pods[pid]
            if pod.location[0] == "storage" and pid not in self.reserved_pods:
                out.append(pod)
        return out

    def _pps_pass(self) -> bool:
        changed = False
        lay = self.world.layout
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if st.kind != PICK or st.inbound >= st.capacity or not st.queue:
                continue
            unbound = [r for r in st.queue if r.kind == EXTRACT and r.pod is None]
            if not unbound:
                continue
            candidates = self._candidate_pods()
            if not candidates:
                continue
            views = [RequestView(id=r.id, sku=r.sku, quantity=r.quantity)
                     for r in unbound]
            node = st.node
            dist = lambda pod: graph_distance(lay, pod.location[1], node)
            try:
                groups = self.pol["pps"](views, candidates, dist)
            except Exception as exc:
                raise DecisionError(f"pps plugin failed: {exc}") from exc
            by_id = {r.id: r for r in unbound}
            for pod_id, covered in groups:
                if st.inbound >= st.capacity:
                    break
                pod = self.world.pods[pod_id]
                if pod.location[0] != "storage" or pod_id in self.reserved_pods:
                    self._log("DecisionRejected", f"PPS pod={pod_id} station={sid}")
                    continue
                requests = [by_id[rid] for rid in covered]
                task = RobotTask(id=self._next_task, kind=TASK_EXTRACTION,
                                 pod=pod_id, station=sid)
                self._next_task += 1
                for req in requests:
                    req.pod = pod_id
                    st.queue.remove(req)
                    task.serve_queue.append(req)
                self.reserved_pods.add(pod_id)
                st.inbound += 1
                self.open_tasks.append(task)
                self._log("Decision",
                          f"PPS station={sid} pod={pod_id} "
                          f"requests={','.join(str(r.id) for r in requests)} "
                          f"task={task.id}")
                changed = True
        return changed

    def _insert_task_pass(self) -> bool:
        changed = False
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if st.kind != REPLENISH or st.inbound >= st.capacity or not st.queue:
                continue
            queued = [r for r in st.queue if r.kind == INSERT and r.pod is not None]
            if not queued:
                continue
            pod_id = queued[0].pod
            if pod_id in self.reserved_pods or \
                    self.world.pods[pod_id].location[0] != "storage":
                continue
            batch = [r for r in queued if r.pod == pod_id]
            task = RobotTask(id=self._next_task, kind=TASK_INSERTION,
                             pod=pod_id, station=sid)
            self._next_task += 1
            for req in batch:
                st.queue.remove(req)
                task.serve_queue.append(req)
            self.reserved_pods.add(pod_id)
            st.inbound += 1
            self.open_tasks.append(task)
            self._log("Decision", f"InsertionTask station={sid} pod={pod_id} "
                                  f"requests={','.join(str(r.id) for r in batch)} "
                                  f"task={task.id}")
            changed = True
        return changed

    def _pr_pass(self) -> bool:
        changed = False
        for task in list(self.pending_stores):
            if self._try_store(task):
                self.pending_stores.remove(task)
                changed = True
        return changed

    def _ta_pass(self) -> bool:
        idle = [(rid, r.node) for rid, r in sorted(self.world.robots.items())
                if r.available and self.robot_tasks[rid] is None]
        if not idle:
            return False
        lay = self.world.layout
        starts = []
        for task in self.open_tasks:
            pod = self.world.pods[task.pod]
            if pod.location[0] != "storage":
                continue
            starts.append((task.id, pod.location[1]))
        if not starts:
            return False
        dist = lambda a, b: graph_distance(lay, a, b)
        try:
            pairs = self.pol["ta"](starts, idle, dist)
        except Exception as exc:
            raise DecisionError(f"ta plugin failed: {exc}") from exc
        if not pairs:
            return False
        by_id = {t.id: t for t in self.open_tasks}
        changed = False
        for task_id, rid in pairs:
            task = by_id[task_id]
            robot = self.world.robots[rid]
            if not robot.available or self.robot_tasks[rid] is not None:
                self._log("DecisionRejected", f"TA task={task_id} robot={rid}")
                continue
            self._log("Decision", f"TA task={task_id} robot={rid} kind={task.kind}")
            self.open_tasks.remove(task)
            self.robot_tasks[rid] = task
            task.robot = rid
            task.phase = PH_FETCH
            self.rest_targets.pop(rid, None)
            self._busy_since[rid] = self.queue.clock
            pod = self.world.pods[task.pod]
            self._dispatch_move(robot, task, pod.location[1], laden=False)
            changed = True
        return changed

    def _rest_pass(self) -> None:
        lay = self.world.layout
        for rid in sorted(self.world.robots):
            robot = self.world.robots[rid]
            if not robot.available or self.robot_tasks[rid] is not None:
                continue
            if robot.node in self._dwellings:
                continue
            claimed = set(self.rest_targets.values())
            occupied = {r.node for r in self.world.robots.values() if r.id != rid}
            free = [n for n in sorted(self._dwellings) if n not in claimed
                    and n not in occupied]
            if not free:
                continue
            target = min(free, key=lambda n: (graph_distance(lay, robot.node, n), n))
            task = RobotTask(id=self._next_task, kind=TASK_REST)
            self._next_task += 1
            task.robot = rid
            task.phase = PH_REST_MOVE
            self.robot_tasks[rid] = task
            self.rest_targets[rid] = target
            self._log("Decision", f"TA task={task.id} robot={rid} kind=rest "
                                  f"node={target}")
            self._dispatch_move(robot, task, target, laden=False)

    # --- movement and lifting ---

    def _dispatch_move(self, robot, task: RobotTask, goal: int, laden: bool) -> None:
        if robot.node != goal and self.table.parked(goal, ignore=robot.id):
            # goal is someone's current stand or destination: wait, and close
            # the distance to a staging node next to the goal meanwhile
            self.stalled_moves[robot.id] = (task.id, goal, laden,
                                            self.table.version)
            if (task.phase in (PH_HAUL, PH_STORE) and task.retreat_to is None
                    and graph_distance(self.world.layout, robot.node, goal) > 1):
                stage = self._staging_node(robot, goal)
                if stage is not None:
                    task.retreat_to = stage
                    self._dispatch_move(robot, task, stage, laden)
            return
        req = PlanRequest(robot=robot.id, start=robot.node,
                          orientation=robot.orientation, goal=goal,
                          start_time=self.queue.clock)
        path = plan(self.world.layout, req, self.table, self.kin)
        if path is None:
            task.plan_fails += 1
            self.stalled_moves[robot.id] = (task.id, goal, laden,
                                            self.table.version)
            if task.plan_fails >= 5:
                self._plan_fallback(robot, task)
            return
        task.plan_fails = 0
        self.stalled_moves.pop(robot.id, None)
        task.goal = goal
        task.leg += 1
        self.table.reserve(path)
        self._log("Decision", f"PP robot={robot.id} task={task.id} goal={goal} "
                              f"arrival={path.end_time:.6f} hops={len(path.nodes) - 1}")
        robot.state = ROBOT_MOVING
        cmds = wiremod.path_to_commands(path, robot.orientation,
                                        self._cmd_id(robot.id))
        if not cmds:
            self.queue.schedule(self.queue.clock, EV_ROBOT_ARRIVED,
                                (robot.id, goal, task.leg))
            return
        msgs = self._exec_commands(robot.id, cmds)
        if msgs is None:
            return  # robot lost mid-dispatch
        self._schedule_status(robot.id, task, msgs)

    def _plan_fallback(self, robot, task: RobotTask) -> None:
        """After 5 failed plans the robot yields: fetch tasks are re-queued,
        laden robots retreat toward a free dwelling to break circular waits."""
        self._log("Decision", f"PPFallback robot={robot.id} task={task.id} "
                              f"phase={task.phase}")
        task.plan_fails = 0
        if task.kind == TASK_REST:
            self.stalled_moves.pop(robot.id, None)
            self.robot_tasks[robot.id] = None
            self.rest_targets.pop(robot.id, None)
            return
        if task.phase == PH_FETCH:
            self.stalled_moves.pop(robot.id, None)
            self.robot_tasks[robot.id] = None
            task.robot = None
            task.phase = PH_OPEN
            task.leg += 1
            self.open_tasks.append(task)
            self._close_busy(robot.id)
            return
        if task.phase in (PH_HAUL, PH_STORE) and task.retreat_to is None:
            target = self._retreat_node(robot)
            if target is not None:
                task.retreat_to = target
                self.stalled_moves.pop(robot.id, None)
                self._dispatch_move(robot, task, target, laden=True)
        # otherwise keep the stalled entry and retry when the table changes

    def _staging_node(self, robot, goal: int) -> int | None:
        """Free node as close to the (occupied) goal as possible to queue at."""
        lay = self.world.layout
        avoid = set(lay.station_node.values()) | self.reserved_slots
        avoid |= self.world.occupied_storage()
        avoid |= set(self.rest_targets.values())
        goal_hops = lay.hops_from(goal)
        robot_hops = lay.hops_from(robot.node)
        best = None
        for n in range(lay.rows * lay.cols):
            if n == robot.node or n == goal or n in avoid:
                continue
            if self._slot_parked(n, ignore=robot.id):
                continue
            key = (goal_hops[n], robot_hops[n], n)
            if best is None or key < best:
                best = key
        return None if best is None else best[2]

    def _retreat_node(self, robot) -> int | None:
        """Nearest yieldable node: free dwelling first, then any open cell."""
        lay = self.world.layout
        avoid = self.world.occupied_storage() | self.reserved_slots
        avoid |= set(lay.station_node.values())
        avoid |= set(self.rest_targets.values())
        candidates = []
        for n in range(lay.rows * lay.cols):
            if n == robot.node or n in avoid:
                continue
            if self._slot_parked(n, ignore=robot.id):
                continue
            pri = 0 if n in self._dwellings else 1
            candidates.append((pri, graph_distance(lay, robot.node, n), n))
        if not candidates:
            return None
        return min(candidates)[2]

    def _slot_parked(self, n: int, ignore: int | None = None) -> bool:
        """True when some robot holds or will hold an open-ended pin on n."""
        for _s, e, rb in self.table.node_iv.get(n, ()):
            if e == math.inf and rb != ignore:
                return True
        return False

    def _cmd_id(self, rid: int):
        def alloc() -> int:
            self._cmd_ids[rid] = self._cmd_ids.get(rid, 0) + 1
            return self._cmd_ids[rid]
        return alloc

    def _exec_commands(self, rid: int, cmds: list) -> list | None:
        if rid in self.wire_robots and self.hub is not None:
            return self._wire_exec(rid, cmds)
        sim = self.sims[rid]
        out = []
        for cmd in cmds:
            out.extend(sim.handle(cmd))
        return out

    def _wire_exec(self, rid: int, cmds: list) -> list | None:
        try:
            for cmd in cmds:
                self.hub.send("robot", rid, cmd)
        except ConnectionError:
            self._on_robot_disconnect(rid)
            return None
        expected = sum(wiremod.expected_replies(c) for c in cmds)
        out: list = []
        while len(out) < expected:
            item = self._wire_next(rid)
            if item is None:
                self._on_robot_disconnect(rid)
                return None
            out.append(item)
        return out

    def _wire_next(self, rid: int):
        pending: list[tuple] = []
        try:
            while True:
                if self._wire_stash:
                    item = self._wire_stash.pop(0)
                else:
                    try:
                        item = self.hub.wait(timeout=30.0)
                    except Exception:
                        return None
                kind, role, peer, msg = item
                if kind == "msg" and role == "robot" and peer == rid and \
                        isinstance(msg, wiremod.STATUS_MESSAGES):
                    return msg
                if kind == wiremod.DISCONNECT and role == "robot":
                    if peer == rid:
                        return None
                    self._on_robot_disconnect(peer)
                    continue
                if kind == wiremod.DISCONNECT:
                    continue  # stations/feeds may drop silently
                pending.append(item)
        finally:
            self._wire_stash = pending + self._wire_stash

    def _schedule_status(self, rid: int, task: RobotTask, msgs: list) -> None:
        if not self.log.enabled:
            # Intermediate pose updates are only read once the leg completes,
            # so without a log only the final arrival needs a heap entry.
            last_tag = None
            for m in msgs:
                if isinstance(m, wiremod.WaypointTag):
                    last_tag = m
                elif isinstance(m, wiremod.Orientation):
                    self.world.robots[rid].orientation = m.radians
                elif isinstance(m, wiremod.PickupSuccess):
                    self.queue.schedule(m.time, EV_LIFT_DONE,
                                        (rid, m.ok, PICKUP, task.leg))
                elif isinstance(m, wiremod.SetdownSuccess):
                    self.queue.schedule(m.time, EV_LIFT_DONE,
                                        (rid, m.ok, SETDOWN, task.leg))
            if last_tag is not None:
                self.queue.schedule(last_tag.time, EV_ROBOT_ARRIVED,
                                    (rid, last_tag.waypoint, task.leg))
            return
        for m in msgs:
            if isinstance(m, wiremod.WaypointTag):
                self.queue.schedule(m.time, EV_ROBOT_ARRIVED,
                                    (rid, m.waypoint, task.leg))
            elif isinstance(m, wiremod.Orientation):
                self.queue.schedule(m.time, EV_ROTATION_DONE,
                                    (rid, m.radians, task.leg))
            elif isinstance(m, wiremod.PickupSuccess):
                self.queue.schedule(m.time, EV_LIFT_DONE,
                                    (rid, m.ok, PICKUP, task.leg))
            elif isinstance(m, wiremod.SetdownSuccess):
                self.queue.schedule(m.time, EV_LIFT_DONE,
                                    (rid, m.ok, SETDOWN, task.leg))

    def _dispatch_lift(self, robot, task: RobotTask, kind: str) -> None:
        task.leg += 1
        robot.state = ROBOT_PICKING_UP if kind == PICKUP else ROBOT_SETTING_DOWN
        cmd_cls = wiremod.Pickup if kind == PICKUP else wiremod.Setdown
        cmd = cmd_cls(robot.id, self._cmd_id(robot.id)(), time=self.queue.clock)
        msgs = self._exec_commands(robot.id, [cmd])
        if msgs is None:
            return
        self._schedule_status(robot.id, task, msgs)

    def _leg_complete(self, robot, task: RobotTask) -> None:
        if task.retreat_to is not None:
            if robot.node != task.retreat_to:
                return
            # yielded out of a circular wait; resume the real goal
            task.retreat_to = None
            goal = (self.stations[task.station].node if task.phase == PH_HAUL
                    else task.store_node)
            self._dispatch_move(robot, task, goal, laden=True)
            return
        if task.phase == PH_FETCH:
            task.phase = PH_LIFT_UP
            self._dispatch_lift(robot, task, PICKUP)
        elif task.phase == PH_HAUL:
            robot.state = ROBOT_AT_STATION
            task.phase = PH_SERVE
            task.served_this_visit = 0
            self._serve_next(task)
        elif task.phase == PH_STORE:
            task.phase = PH_LIFT_DOWN
            self._dispatch_lift(robot, task, SETDOWN)
        elif task.phase == PH_REST_MOVE:
            self.robot_tasks[robot.id] = None
            robot.state = ROBOT_IDLE
            self.rest_targets.pop(robot.id, None)

    def _lift_done(self, robot, task: RobotTask, lift_kind: str, ok: bool) -> None:
        if lift_kind == PICKUP:
            if not ok:
                task.lift_attempts += 1
                if task.lift_attempts >= 5:
                    self._abort_task(robot, task)
                    return
                self._dispatch_lift(robot, task, PICKUP)
                return
            task.lift_attempts = 0
            pod = self.world.pods[task.pod]
            place = pod.location[1]
            pod.location = ("robot", robot.id)
            robot.carrying = pod.id
            if self.tracker is not None:
                self.tracker.pod_departed(pod.id, place, task.station)
            task.phase = PH_HAUL
            self._dispatch_move(robot, task, self.stations[task.station].node,
                                laden=True)
        else:
            pod = self.world.pods[task.pod]
            pod.location = ("storage", task.store_node)
            robot.carrying = None
            self.reserved_slots.discard(task.store_node)
            task.phase = PH_DONE
            self.reserved_pods.discard(task.pod)
            self.robot_tasks[robot.id] = None
            robot.state = ROBOT_IDLE
            self._close_busy(robot.id)

    def _abort_task(self, robot, task: RobotTask) -> None:
        self._log("TaskAborted", f"task={task.id} robot={robot.id}")
        task.leg += 1
        task.lift_attempts = 0
        task.robot = None
        task.phase = PH_OPEN
        self.stalled_moves.pop(robot.id, None)
        self.robot_tasks[robot.id] = None
        robot.state = ROBOT_IDLE
        self._close_busy(robot.id)
        self.open_tasks.append(task)

    def _close_busy(self, rid: int) -> None:
        since = self._busy_since.pop(rid, None)
        if since is not None:
            self._busy_total[rid] += self.queue.clock - since

    # --- station serving ---

    def _serve_next(self, task: RobotTask) -> None:
        st = self.stations[task.station]
        while task.serve_queue:
            req = task.serve_queue.pop(0)
            pod = self.world.pods[task.pod]
            wire_station = (self.hub is not None
                            and self.hub.connected("station", st.id))
            if req.kind == EXTRACT:
                index = pod.pick_compartment(req.sku, req.quantity)
                if index is None:
                    req.pod = None
                    st.queue.append(req)
                    self._log("Requeue", f"request={req.id} reason=stock")
                    continue
                info = (self._picking_info(st, req, pod, index)
                        if wire_station or self.log.enabled else None)
            else:
                comps = pod.replenish_compartments(req.sku, req.quantity)
                if not comps:
                    # room vanished since RPS chose this pod; re-select
                    req.pod = None
                    self.unassigned_bundles[req.bundle_id] = \
                        self.bundles_by_id[req.bundle_id]
                    self._log("Requeue", f"request={req.id} reason=capacity")
                    continue
                info = (self._replenish_info(st, req, pod, comps)
                        if wire_station or self.log.enabled else None)
            task.last_served = req
            self.gateway.register_outstanding(req)
            self._send_robot_item_msg(task, req)
            if info is not None:
                self._log("StationInfo", self._info_summary(info))
            if wire_station:
                self.hub.send("station", st.id, info)
                if not self._wall_clock:
                    reply = self._wire_wait_station_reply(st.id, req.id)
                    when = reply.time if reply.time is not None else self.queue.clock
                    self.queue.schedule(max(when, self.queue.clock),
                                        EV_STATION_CONFIRM,
                                        (st.id, req.id, reply.ok, reply.error))
            else:
                verdict = st.scripted_verdicts.pop(0) if st.scripted_verdicts else "OK"
                ok = verdict == "OK"
                self.queue.schedule(self.queue.clock + self.t_pick_line,
                                    EV_STATION_CONFIRM,
                                    (st.id, req.id, ok, None if ok else verdict))
            return
        self._release_pod(task)

    def _send_robot_item_msg(self, task: RobotTask, req: Request) -> None:
        if task.robot in self.wire_robots and self.hub is not None:
            cls = wiremod.GetItem if req.kind == EXTRACT else wiremod.PutItem
            try:
                self.hub.send("robot", task.robot,
                              cls(task.robot, self._cmd_id(task.robot)(),
                                  request_id=req.id, time=self.queue.clock))
            except ConnectionError:
                pass

    @staticmethod
    def _compartment_rows(pod) -> tuple:
        rows = []
        for idx in sorted(pod.compartments):
            c = pod.compartments[idx]
            rows.append((idx[0], idx[1], c.sku, c.count))
        return tuple(rows)

    def _picking_info(self, st: StationState, req: Request, pod, index):
        sku = self.world.skus[req.sku]
        return wiremod.PickingInfo(
            station_id=st.id, msg_id=req.id, order_id=req.order_id,
            request_id=req.id, item_id=req.sku, name=sku.name,
            quantity=req.quantity, pod_rows=pod.comp_rows, pod_cols=pod.comp_cols,
            compartments=self._compartment_rows(pod),
            compartment_to_pick=(index[0], index[1]), time=self.queue.clock)

    def _replenish_info(self, st: StationState, req: Request, pod, comps: list):
        sku = self.world.skus[req.sku]
        best = comps[0]
        return wiremod.ReplenishInfo(
            station_id=st.id, msg_id=req.id, bundle_id=req.bundle_id,
            request_id=req.id, item_id=req.sku, name=sku.name,
            quantity=req.quantity, pod_rows=pod.comp_rows, pod_cols=pod.comp_cols,
            stock_levels=wiremod.StockLevels(optimum=sku.optimum,
                                             maximum=sku.maximum,
                                             min_presentation=sku.min_presentation),
            compartments=self._compartment_rows(pod),
            compartment_to_replenish=(best[0], best[1]),
            alternatives=tuple((r, c) for r, c in comps[1:]),
            time=self.queue.clock)

    @staticmethod
    def _info_summary(info) -> str:
        if isinstance(info, wiremod.PickingInfo):
            r, c = info.compartment_to_pick
            return (f"PickingInfo station={info.station_id} order={info.order_id} "
                    f"request={info.request_id} item={info.item_id} "
                    f"qty={info.quantity} compartment={r},{c}")
        r, c = info.compartment_to_replenish
        return (f"ReplenishInfo station={info.station_id} bundle={info.bundle_id} "
                f"request={info.request_id} item={info.item_id} "
                f"qty={info.quantity} compartment={r},{c}")

    def _wire_wait_station_reply(self, sid: int, request_id: int):
        pending: list[tuple] = []
        try:
            while True:
                if self._wire_stash:
                    item = self._wire_stash.pop(0)
                else:
                    item = self.hub.wait(timeout=30.0)
                kind, role, peer, msg = item
                if (kind == "msg" and role == "station" and peer == sid
                        and isinstance(msg, wiremod.StationReply)
                        and msg.request_id == request_id):
                    return msg
                if kind == wiremod.DISCONNECT and role == "robot":
                    self._on_robot_disconnect(peer)
                    continue
                pending.append(item)
        finally:
            self._wire_stash = pending + self._wire_stash

    def _station_confirm(self, time: float, seq: int, sid: int, request_id: int,
                         ok: bool, error: str | None) -> None:
        st = self.stations[sid]
        task = None
        for rid in sorted(self.world.robots):
            t = self.robot_tasks.get(rid)
            if t is not None and t.phase == PH_SERVE and t.station == sid:
                task = t
                break
        outcome = self.gateway.apply_station_reply(sid, request_id, ok, error)
        if self.log.enabled:
            self.log.record(time, seq, EV_STATION_CONFIRM,
                            f"station={sid} request={request_id} "
                            f"verdict={'OK' if ok else 'Error'} outcome={outcome}")
        if outcome == "ignored" or task is None:
            return
        req = task.last_served
        if req is None or req.id != request_id:
            return
        if outcome == "requeue":
            if req.kind == EXTRACT:
                req.pod = None
            st.queue.append(req)
            self._log("Requeue", f"request={request_id} reason=error "
                                 f"attempts={req.attempts}")
        else:
            task.served_this_visit += 1
            self.inventory_version += 1
            self._after_confirm(st, req)
        task.last_served = None
        self._serve_next(task)

    def _after_confirm(self, st: StationState, req: Request) -> None:
        transfer = self.gateway.transfers[req.transfer_id]
        if req.kind == EXTRACT:
            if transfer.state == "done" and req.order_id in st.assigned_orders:
                st.assigned_orders.remove(req.order_id)
                self.completed_orders += 1
                self._log("OrderDone", f"order={req.order_id} transfer={transfer.id}")
        else:
            if req.bundle_id in st.assigned_bundles:
                st.assigned_bundles.remove(req.bundle_id)
            self.completed_bundles += 1
            self._log("BundleDone", f"bundle={req.bundle_id} transfer={transfer.id}")
            if self.parked:
                self._revisit_parked()

    def _revisit_parked(self) -> None:
        still = []
        for order in self.parked:
            if self.gateway.order_feasible(order):
                self.backlog_orders.append(order)
                self._log("Unparked", f"order={order.id}")
            else:
                still.append(order)
        self.parked = still

    def _release_pod(self, task: RobotTask) -> None:
        st = self.stations[task.station]
        pod = self.world.pods[task.pod]
        self.pileon_samples.append(task.served_this_visit)
        verdict = self.gateway.pod_release_check(pod, st.queue)
        if verdict == "reuse":
            batch = self._reuse_batch(st, pod)
            if batch:
                self._log("Decision", f"Reuse station={st.id} pod={pod.id} "
                                      f"requests={','.join(str(r.id) for r in batch)}")
                task.serve_queue.extend(batch)
                task.served_this_visit = 0
                self._serve_next(task)
                return
        req = self.gateway.make_store_request(pod.id, st.id, self.queue.clock)
        task.store_request = req
        self._log("Request", f"store request={req.id} pod={pod.id} station={st.id}")
        task.phase = PH_STORE_WAIT
        if not self._try_store(task):
            self.pending_stores.append(task)

    def _reuse_batch(self, st: StationState, pod) -> list[Request]:
        extracts = [r for r in st.queue if r.kind == EXTRACT and r.pod is None]
        flags = pod.simulate_picks([(r.sku, r.quantity) for r in extracts])
        batch = []
        for req, flag in zip(extracts, flags):
            if flag:
                req.pod = pod.id
                st.queue.remove(req)
                batch.append(req)
        for req in list(st.queue):
            if req.kind == INSERT and req.pod == pod.id:
                st.queue.remove(req)
                batch.append(req)
        return batch

    def _try_store(self, task: RobotTask) -> bool:
        st = self.stations[task.station]
        robot = self.world.robots[task.robot]
        lay = self.world.layout
        pod = self.world.pods[task.pod]
        candidates = sorted(n for n in self.world.free_storage()
                            if n not in self.reserved_slots
                            and not self._slot_parked(n, ignore=task.robot))
        dist = lambda a, b: graph_distance(lay, a, b)
        try:
            node = self.pol["pr"](pod, st.node, candidates, dist, self.rng_pr)
        except Exception as exc:
            raise DecisionError(f"pr plugin failed: {exc}") from exc
        if node is None:
            return False
        if node not in candidates:
            self._log("DecisionRejected", f"PR pod={pod.id} node={node}")
            return False
        self._log("Decision", f"PR pod={pod.id} station={st.id} node={node}")
        self.reserved_slots.add(node)
        task.store_node = node
        if self.tracker is not None and not task.epoch_done:
            self.tracker.pod_stored(pod.id, st.id, node)
            task.epoch_done = True
        task.phase = PH_STORE
        st.inbound -= 1
        self._dispatch_move(robot, task, node, laden=True)
        return True

    # --- wire plumbing ---

    def _drain_wire_feed(self) -> None:
        if self.hub is None:
            return
        items = self._wire_stash + self.hub.poll()
        self._wire_stash = []
        for kind, role, peer, msg in items:
            if kind == wiremod.DISCONNECT and role == "robot":
                self._on_robot_disconnect(peer)
            elif kind == "msg" and role == "feed":
                self._ingest_feed_msg(msg)
            elif kind == "msg" and role == "station" and \
                    isinstance(msg, wiremod.StationReply):
                self.queue.schedule(self.queue.clock, EV_STATION_CONFIRM,
                                    (msg.station_id, msg.request_id, msg.ok,
                                     msg.error))
            elif kind == wiremod.BAD_FRAME:
                self._log("WireError", f"role={role} id={peer} frame dropped")

    def _ingest_feed_msg(self, msg) -> None:
        if isinstance(msg, wiremod.NewOrder):
            order = PickOrder(id=msg.order_id,
                              lines=tuple(OrderLine(sku=s, quantity=q)
                                          for s, q in msg.lines))
            self.queue.schedule(self.queue.clock, EV_ORDER_ARRIVAL, (order,))
        elif isinstance(msg, wiremod.Receipt):
            bundles = tuple(ReplenishmentBundle(id=b, sku=s, quantity=q)
                            for b, s, q in msg.bundles)
            self.queue.schedule(self.queue.clock, EV_BUNDLE_RECEIPT, (bundles,))

    def _on_robot_disconnect(self, rid: int) -> None:
        robot = self.world.robots.get(rid)
        if robot is None or not robot.available:
            return
        robot.available = False
        self._log("RobotLost", f"robot={rid}")
        task = self.robot_tasks.get(rid)
        self.table.remove(rid)
        self.stalled_moves.pop(rid, None)
        self.rest_targets.pop(rid, None)
        if task is None:
            return
        self.robot_tasks[rid] = None
        self._close_busy(rid)
        task.leg += 1
        if task.phase in (PH_FETCH, PH_LIFT_UP):
            task.robot = None
            task.phase = PH_OPEN
            task.lift_attempts = 0
            self.open_tasks.append(task)
            self._log("TaskRequeued", f"task={task.id}")
        else:
            self._log("TaskDropped", f"task={task.id} pod={task.pod}")
            if task.station is not None and task.phase in (PH_HAUL, PH_SERVE,
                                                           PH_STORE_WAIT):
                self.stations[task.station].inbound -= 1
            if task.store_node is not None:
                self.reserved_slots.discard(task.store_node)

    # --- metrics ---

    def _metrics(self, final_clock: float) -> MetricsReport:
        horizon = max(final_clock, 1e-9)
        for rid, since in list(self._busy_since.items()):
            self._busy_total[rid] += max(0.0, final_clock - since)
            self._busy_since[rid] = final_clock
        busy = sum(self._busy_total.values())
        util = busy / (horizon * max(1, len(self.world.robots)))
        report = MetricsReport(
            horizon=final_clock,
            completed_orders=self.completed_orders,
            completed_bundles=self.completed_bundles,
            throughput_per_hour=self.completed_orders / horizon * 3600.0,
            pile_on=(sum(self.pileon_samples) / len(self.pileon_samples)
                     if self.pileon_samples else 0.0),
            robot_utilization=util,
            parked_orders=self.gateway.metrics["parked_orders"],
            error_replies=self.gateway.metrics["error_replies"],
        )
        if self.tracker is not None and len(self.tracker.ledger):
            led = self.tracker.ledger.report()
            report.ledger_epochs = led.n
            report.ledger_direct = led.direct_avg
            report.ledger_shifted = led.shifted_avg
            report.ledger_decomposed = led.decomposed_est
            report.ledger_residual = led.residual_part
            report.ledger_c_max = self.tracker.ledger.costs.c_max
        return report

    # --- direct decision access (the mediation point of the decision loop) ---

    def dispatch_decision(self, kind: str, context: dict):
        """Run one optimizer slot against an explicit context snapshot.

        Returns the policy's decision, or the string "deferred" when the slot
        has nothing feasible to decide right now.
        """
        if kind == "PR":
            node = self.pol["pr"](context["pod"], context["station_node"],
                                  context["free_nodes"], context["dist"],
                                  self.rng_pr)
            return node if node is not None else "deferred"
        if kind == "TA":
            pairs = self.pol["ta"](context["tasks"], context["robots"],
                                   context["dist"])
            return pairs if pairs else "deferred"
        if kind == "POA":
            pairs = self.pol["poa"](context["orders"], context["stations"],
                                    context.get("station_skus", {}))
            return pairs if pairs else "deferred"
        if kind == "ROA":
            pairs = self.pol["roa"](context["bundles"], context["stations"])
            return pairs if pairs else "deferred"
        if kind == "RPS":
            pod = self.pol["rps"](context["bundle"], context["pods"])
            return pod if pod is not None else "deferred"
        if kind == "PPS":
            groups = self.pol["pps"](context["requests"], context["pods"],
                                     context["dist"])
            return groups if groups else "deferred"
        raise DecisionError(f"unknown decision kind {kind}")
