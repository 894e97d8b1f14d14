"""Order flow: feed events, transfers, pick/insert requests and station replies."""

from __future__ import annotations

from dataclasses import dataclass

from .world import (OrderLine, PickOrder, Pod, ReplenishmentBundle, World,
                    apply_inventory_delta, stable_rng)


class GatewayError(ValueError):
    pass


TRANSFER_OUTGOING = "outgoing_planned"
TRANSFER_REPLENISH = "internal_replenish"

EXTRACT = "extract"
INSERT = "insert"
STORE = "store"


@dataclass
class Move:
    sku: str
    quantity: int
    done_quantity: int = 0
    source: int | None = None  # pod id the units came from / went to


@dataclass
class Transfer:
    id: int
    kind: str
    moves: list[Move]
    state: str = "planned"  # planned | done

    def complete(self) -> bool:
        return all(m.done_quantity >= m.quantity for m in self.moves)


@dataclass(frozen=True)
class NewOrder:
    order: PickOrder


@dataclass(frozen=True)
class Receipt:
    bundles: tuple[ReplenishmentBundle, ...]


FeedEvent = NewOrder | Receipt


@dataclass
class Request:
    """One unit of station work: pick a line, stow a bundle, or store a pod."""
    id: int
    kind: str                 # EXTRACT | INSERT | STORE
    created: float
    sku: str | None = None
    quantity: int = 0
    order_id: int | None = None
    bundle_id: int | None = None
    transfer_id: int | None = None
    move_index: int | None = None
    station: int | None = None
    pod: int | None = None    # bound at RPS (insert) / PPS (extract)
    attempts: int = 0


class OrderGateway:
    """Converts feed events to transfers and requests, applies station replies."""

    def __init__(self, world: World):
        self.world = world
        self._feed_buffer: list[FeedEvent] = []
        self._next_transfer = 1
        self._next_request = 1
        self.transfers: dict[int, Transfer] = {}
        self.transfer_order: dict[int, PickOrder] = {}  # transfer id -> order
        self.transfer_bundles: dict[int, tuple[ReplenishmentBundle, ...]] = {}
        self.outstanding: dict[tuple[int, int], Request] = {}  # (station, msg ref) -> request
        self.parked_orders: list[int] = []  # transfers waiting on system-wide stock
        self.metrics = {"infeasible_bundles": 0, "parked_orders": 0,
                        "error_replies": 0, "duplicate_replies": 0}

    def ingest(self, event: FeedEvent) -> None:
        self._feed_buffer.append(event)

    def poll_feed(self) -> list[Transfer]:
        """Convert buffered feed events to planned transfers; idempotent."""
        out = []
        for event in self._feed_buffer:
            tid = self._next_transfer
            self._next_transfer += 1
            if isinstance(event, NewOrder):
                moves = [Move(sku=line.sku, quantity=line.quantity)
                         for line in event.order.lines]
                transfer = Transfer(id=tid, kind=TRANSFER_OUTGOING, moves=moves)
                self.transfer_order[tid] = event.order
            else:
                moves = [Move(sku=b.sku, quantity=b.quantity) for b in event.bundles]
                transfer = Transfer(id=tid, kind=TRANSFER_REPLENISH, moves=moves)
                self.transfer_bundles[tid] = event.bundles
            self.transfers[tid] = transfer
            out.append(transfer)
        self._feed_buffer.clear()
        return out

    def transfer_to_requests(self, transfer: Transfer, now: float = 0.0,
                             station: int | None = None) -> list[Request]:
        """One extract request per order line, or one insert request per bundle."""
        if not transfer.moves:
            raise GatewayError(f"transfer {transfer.id} has no moves")
        out = []
        if transfer.kind == TRANSFER_OUTGOING:
            order = self.transfer_order[transfer.id]
            for i, move in enumerate(transfer.moves):
                out.append(Request(id=self._take_request_id(), kind=EXTRACT,
                                   created=now, sku=move.sku, quantity=move.quantity,
                                   order_id=order.id, transfer_id=transfer.id,
                                   move_index=i, station=station))
        elif transfer.kind == TRANSFER_REPLENISH:
            bundles = self.transfer_bundles[transfer.id]
            for i, (move, bundle) in enumerate(zip(transfer.moves, bundles)):
                out.append(Request(id=self._take_request_id(), kind=INSERT,
                                   created=now, sku=move.sku, quantity=move.quantity,
                                   bundle_id=bundle.id, transfer_id=transfer.id,
                                   move_index=i, station=station))
        else:
            raise GatewayError(f"unknown transfer kind {transfer.kind!r}")
        return out

    def _take_request_id(self) -> int:
        rid = self._next_request
        self._next_request += 1
        return rid

    def make_store_request(self, pod: int, station: int, now: float) -> Request:
        return Request(id=self._take_request_id(), kind=STORE, created=now,
                       station=station, pod=pod)

    def register_outstanding(self, request: Request) -> None:
        key = (request.station, request.id)
        self.outstanding[key] = request

    def apply_station_reply(self, station: int, request_id: int, ok: bool,
                            error: str | None = None) -> str:
        """Apply a station verdict; returns 'done', 'requeue' or 'ignored'."""
        key = (station, request_id)
        request = self.outstanding.pop(key, None)
        if request is None:
            self.metrics["duplicate_replies"] += 1
            return "ignored"
        if not ok:
            self.metrics["error_replies"] += 1
            request.attempts += 1
            return "requeue"
        pod = self.world.pods[request.pod]
        if request.kind == EXTRACT:
            index = pod.pick_compartment(request.sku, request.quantity)
            if index is None:
                raise GatewayError(f"pod {pod.id} cannot supply {request.quantity} "
                                   f"of {request.sku}")
            apply_inventory_delta(pod, index, -request.quantity, sku=request.sku)
            self.world.count_picked(request.sku, request.quantity)
        elif request.kind == INSERT:
            feasible = pod.replenish_compartments(request.sku, request.quantity)
            if not feasible:
                raise GatewayError(f"pod {pod.id} has no room for {request.quantity} "
                                   f"of {request.sku}")
            apply_inventory_delta(pod, feasible[0], request.quantity, sku=request.sku)
            self.world.count_replenished(request.sku, request.quantity)
        else:
            raise GatewayError(f"station replied to a {request.kind} request")
        transfer = self.transfers[request.transfer_id]
        move = transfer.moves[request.move_index]
        move.done_quantity += request.quantity
        move.source = pod.id
        if transfer.complete():
            transfer.state = "done"
        return "done"

    def pod_release_check(self, pod: Pod, queued: list[Request]) -> str:
        """'reuse' iff the next queued request at this station is fulfillable from pod."""
        if queued:
            nxt = queued[0]
            if nxt.kind == EXTRACT and \
                    pod.simulate_picks([(nxt.sku, nxt.quantity)])[0]:
                return "reuse"
            if nxt.kind == INSERT and nxt.pod == pod.id:
                return "reuse"
        return "store"

    def order_feasible(self, order: PickOrder) -> bool:
        totals = self.world.sku_totals()
        need: dict[str, int] = {}
        for line in order.lines:
            need[line.sku] = need.get(line.sku, 0) + line.quantity
        return all(totals.get(sku, 0) >= qty for sku, qty in need.items())


def _truncated_geometric_p(mean: float, max_k: int) -> float:
    """Success probability so a geometric truncated at max_k has the given mean."""
    if mean <= 1.0:
        return 1.0
    lo, hi = 1e-9, 1.0

    def mean_of(p: float) -> float:
        weights = [p * (1 - p) ** (k - 1) for k in range(1, max_k + 1)]
        total = sum(weights)
        return sum(k * w for k, w in zip(range(1, max_k + 1), weights)) / total

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mean_of(mid) > mean:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class OrderGenerator:
    """Poisson order/receipt source standing in for an external ERP feed.

    Pick orders and replenishment receipts draw from two independent RNG
    streams derived from the run seed, so they can be generated lazily in
    any interleaving without losing determinism.
    """

    def __init__(self, rate_per_hour: float, sku_weights: dict[str, float],
                 seed: int, mean_lines: float = 1.8, max_lines: int = 4,
                 qty_min: int = 1, qty_max: int = 3,
                 replenish_rate_per_hour: float = 0.0, replenish_qty: int = 3):
        if not sku_weights or any(w < 0 for w in sku_weights.values()):
            raise GatewayError("sku_weights must be a non-empty map of "
                               "nonnegative weights")
        self.rate = rate_per_hour / 3600.0
        self.replenish_rate = replenish_rate_per_hour / 3600.0
        self.skus = sorted(sku_weights)
        self.weights = [sku_weights[s] for s in self.skus]
        self.mean_lines = mean_lines
        self.max_lines = max_lines
        self.qty_min = qty_min
        self.qty_max = qty_max
        self.replenish_qty = replenish_qty
        self._p_lines = _truncated_geometric_p(mean_lines, max_lines)
        self._rng_pick = stable_rng(seed, "orders.pick")
        self._rng_repl = stable_rng(seed, "orders.replenish")
        self._t_pick = 0.0
        self._t_repl = 0.0
        self._next_order_id = 1
        self._next_bundle_id = 1

    def _lines_count(self) -> int:
        u = self._rng_pick.random()
        p = self._p_lines
        weights = [p * (1 - p) ** (k - 1) for k in range(1, self.max_lines + 1)]
        total = sum(weights)
        acc = 0.0
        for k, w in zip(range(1, self.max_lines + 1), weights):
            acc += w / total
            if u <= acc:
                return k
        return self.max_lines

    def next_order(self) -> tuple[float, PickOrder] | None:
        if self.rate <= 0:
            return None
        self._t_pick += self._rng_pick.expovariate(self.rate)
        lines = []
        for _ in range(self._lines_count()):
            sku = self._rng_pick.choices(self.skus, weights=self.weights)[0]
            qty = self._rng_pick.randint(self.qty_min, self.qty_max)
            lines.append(OrderLine(sku=sku, quantity=qty))
        order = PickOrder(id=self._next_order_id, lines=tuple(lines))
        self._next_order_id += 1
        return self._t_pick, order

    def next_receipt(self) -> tuple[float, tuple[ReplenishmentBundle, ...]] | None:
        if self.replenish_rate <= 0:
            return None
        self._t_repl += self._rng_repl.expovariate(self.replenish_rate)
        sku = self._rng_repl.choices(self.skus, weights=self.weights)[0]
        bundle = ReplenishmentBundle(id=self._next_bundle_id, sku=sku,
                                     quantity=self.replenish_qty)
        self._next_bundle_id += 1
        return self._t_repl, (bundle,)
