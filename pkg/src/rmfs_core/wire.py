"""Agent wire protocol: newline-delimited JSON frames over TCP.

One UTF-8 JSON object per line, LF-terminated, with a canonical key order
(type, robot_id/station_id, msg_id, payload fields, optional time).  The
"time" field carries simulated seconds in virtual-time runs and is omitted
in wall-clock operation.

The same command-timing simulator backs both the in-process robot driver and
the loopback emulator, so a run driven over the wire reproduces the exact
event times of an in-process run.
"""

from __future__ import annotations

import json
import math
import os
import queue
import socket
import threading
from dataclasses import dataclass, field, fields

from .pathing import Kinematics, TimedPath, angle_diff, edge_time, signed_turn

TWO_PI = 2.0 * math.pi


class WireDecodeError(ValueError):
    def __init__(self, reason: str, line: bytes | str):
        super().__init__(f"{reason}: {line!r}")
        self.line = line


# --- message types (field order below is the canonical wire order) ---

@dataclass(frozen=True)
class Go:
    robot_id: int
    msg_id: int
    waypoints: tuple[int, ...]
    time: float | None = None


@dataclass(frozen=True)
class Turn:
    robot_id: int
    msg_id: int
    degrees: float  # positive turns left (counter-clockwise)
    time: float | None = None


@dataclass(frozen=True)
class Rest:
    robot_id: int
    msg_id: int
    time: float | None = None


@dataclass(frozen=True)
class Pickup:
    robot_id: int
    msg_id: int
    time: float | None = None


@dataclass(frozen=True)
class Setdown:
    robot_id: int
    msg_id: int
    time: float | None = None


@dataclass(frozen=True)
class GetItem:
    robot_id: int
    msg_id: int
    request_id: int
    time: float | None = None


@dataclass(frozen=True)
class PutItem:
    robot_id: int
    msg_id: int
    request_id: int
    time: float | None = None


@dataclass(frozen=True)
class Error:
    robot_id: int
    msg_id: int
    text: str
    time: float | None = None


@dataclass(frozen=True)
class WaypointTag:
    robot_id: int
    msg_id: int
    waypoint: int
    time: float | None = None


@dataclass(frozen=True)
class Orientation:
    robot_id: int
    msg_id: int
    radians: float
    time: float | None = None


@dataclass(frozen=True)
class PickupSuccess:
    robot_id: int
    msg_id: int
    ok: bool
    time: float | None = None


@dataclass(frozen=True)
class SetdownSuccess:
    robot_id: int
    msg_id: int
    ok: bool
    time: float | None = None


@dataclass(frozen=True)
class StockLevels:
    optimum: int
    maximum: int
    min_presentation: int


@dataclass(frozen=True)
class PickingInfo:
    station_id: int
    msg_id: int
    order_id: int
    request_id: int
    item_id: str
    name: str
    quantity: int
    pod_rows: int
    pod_cols: int
    compartments: tuple[tuple[int, int, str | None, int], ...]  # (row, col, item, count)
    compartment_to_pick: tuple[int, int]
    time: float | None = None


@dataclass(frozen=True)
class ReplenishInfo:
    station_id: int
    msg_id: int
    bundle_id: int
    request_id: int
    item_id: str
    name: str
    quantity: int
    pod_rows: int
    pod_cols: int
    stock_levels: StockLevels
    compartments: tuple[tuple[int, int, str | None, int], ...]
    compartment_to_replenish: tuple[int, int]
    alternatives: tuple[tuple[int, int], ...]
    time: float | None = None


@dataclass(frozen=True)
class StationReply:
    station_id: int
    msg_id: int
    ok: bool
    error: str | None
    order_id: int | None
    bundle_id: int | None
    item_id: str | None
    request_id: int
    time: float | None = None


@dataclass(frozen=True)
class Register:
    role: str  # robot | station | feed
    id: int
    time: float | None = None


@dataclass(frozen=True)
class Ping:
    seq: int = 0


@dataclass(frozen=True)
class Pong:
    seq: int = 0


@dataclass(frozen=True)
class NewOrder:
    order_id: int
    lines: tuple[tuple[str, int], ...]
    time: float | None = None


@dataclass(frozen=True)
class Receipt:
    bundles: tuple[tuple[int, str, int], ...]  # (bundle id, sku, qty)
    time: float | None = None


@dataclass(frozen=True)
class TransferState:
    transfer_id: int
    state: str
    moves: tuple[tuple[str, int, int], ...]  # (sku, qty, done)
    time: float | None = None


MESSAGE_TYPES = {
    cls.__name__: cls for cls in (
        Go, Turn, Rest, Pickup, Setdown, GetItem, PutItem,
        Error, WaypointTag, Orientation, PickupSuccess, SetdownSuccess,
        PickingInfo, ReplenishInfo, StationReply,
        Register, Ping, Pong, NewOrder, Receipt, TransferState,
    )
}

TASK_MESSAGES = (Go, Turn, Rest, Pickup, Setdown, GetItem, PutItem)
STATUS_MESSAGES = (Error, WaypointTag, Orientation, PickupSuccess, SetdownSuccess)


def _to_jsonable(value):
    if isinstance(value, StockLevels):
        return {"optimum": value.optimum, "maximum": value.maximum,
                "min_presentation": value.min_presentation}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def encode(msg) -> bytes:
    cls = type(msg)
    if cls.__name__ not in MESSAGE_TYPES:
        raise WireDecodeError("not a wire message", repr(msg))
    payload: dict = {"type": cls.__name__}
    for f in fields(cls):
        value = getattr(msg, f.name)
        if f.name == "time" and value is None:
            continue
        payload[f.name] = _to_jsonable(value)
    return json.dumps(payload, separators=(",", ":")).encode("utf-8") + b"\n"


def _from_jsonable(cls, name: str, value):
    ann = {f.name: f.type for f in fields(cls)}[name]
    if name == "stock_levels":
        return StockLevels(**value)
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def decode(line: bytes | str):
    raw = line.decode("utf-8", errors="replace") if isinstance(line, bytes) else line
    raw = raw.strip()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise WireDecodeError(f"malformed frame ({exc.msg})", line) from None
    if not isinstance(data, dict) or "type" not in data:
        raise WireDecodeError("frame has no type", line)
    cls = MESSAGE_TYPES.get(data["type"])
    if cls is None:
        raise WireDecodeError(f"unknown type {data['type']!r}", line)
    kwargs = {}
    names = {f.name for f in fields(cls)}
    for key, value in data.items():
        if key == "type":
            continue
        if key not in names:
            raise WireDecodeError(f"unknown field {key!r} for {data['type']}", line)
        kwargs[key] = _from_jsonable(cls, key, value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise WireDecodeError(str(exc), line) from None


# --- command translation and timing (shared by driver and emulator) ---

def path_to_commands(path: TimedPath, start_orientation: float,
                     next_msg_id) -> list:
    """Decompose a timed path into Turn/Go commands with virtual start times."""
    cmds = []
    nodes = path.nodes
    incoming = start_orientation
    i = 0
    n = len(nodes)
    while i < n:
        pn = nodes[i]
        if angle_diff(incoming, pn.orientation) > 1e-12:
            deg = math.degrees(signed_turn(incoming, pn.orientation))
            cmds.append(Turn(path.robot, next_msg_id(), degrees=deg, time=pn.arrival))
            incoming = pn.orientation
        if i == n - 1:
            break
        j = i + 1
        wps = [nodes[j].node]
        while (j < n - 1 and nodes[j].departure == nodes[j].arrival
               and nodes[j].orientation == incoming):
            j += 1
            wps.append(nodes[j].node)
        cmds.append(Go(path.robot, next_msg_id(), waypoints=tuple(wps),
                       time=nodes[i].departure))
        i = j
    return cmds


def expected_replies(cmd) -> int:
    if isinstance(cmd, Go):
        return len(cmd.waypoints)
    if isinstance(cmd, (Turn, Pickup, Setdown)):
        return 1
    return 0


@dataclass
class RobotSim:
    """Kinematic state machine answering task commands with timed status messages."""

    robot_id: int
    kin: Kinematics
    spacing_m: float
    node: int
    orientation: float
    fault_pickup: float = 0.0
    rng: object = None  # random.Random when fault injection is on
    _msg_id: int = 0

    def _next_id(self) -> int:
        self._msg_id += 1
        return self._msg_id

    def handle(self, cmd) -> list:
        out = []
        if isinstance(cmd, Go):
            t = cmd.time
            dt = edge_time(self.kin, self.spacing_m)
            for wp in cmd.waypoints:
                t = t + dt
                self.node = wp
                out.append(WaypointTag(self.robot_id, self._next_id(),
                                       waypoint=wp, time=t))
        elif isinstance(cmd, Turn):
            dur = self.kin.t_full_turn * abs(cmd.degrees) / 360.0
            self.orientation = math.fmod(
                self.orientation + math.radians(cmd.degrees), TWO_PI)
            if self.orientation < 0:
                self.orientation += TWO_PI
            out.append(Orientation(self.robot_id, self._next_id(),
                                   radians=self.orientation, time=cmd.time + dur))
        elif isinstance(cmd, Pickup):
            ok = True
            if self.fault_pickup > 0 and self.rng is not None:
                ok = self.rng.random() >= self.fault_pickup
            out.append(PickupSuccess(self.robot_id, self._next_id(), ok=ok,
                                     time=cmd.time + self.kin.t_lift_pickup))
        elif isinstance(cmd, Setdown):
            out.append(SetdownSuccess(self.robot_id, self._next_id(), ok=True,
                                      time=cmd.time + self.kin.t_lift_setdown))
        # Rest, GetItem, PutItem produce no reply
        return out


# --- TCP hub ---

class FrameConn:
    def __init__(self, sock: socket.socket, log_file=None):
        self.sock = sock
        self.buffer = b""
        self.lock = threading.Lock()
        self.log_file = log_file
        self.alive = True

    def send(self, msg) -> None:
        frame = encode(msg)
        if self.log_file:
            self.log_file.write(b"> " + frame)
        with self.lock:
            self.sock.sendall(frame)

    def recv_frames(self):
        """Yield complete frames; returns when the peer closes."""
        while True:
            try:
                data = self.sock.recv(65536)
            except OSError:
                return
            if not data:
                return
            self.buffer += data
            while b"\n" in self.buffer:
                line, self.buffer = self.buffer.split(b"\n", 1)
                if self.log_file:
                    self.log_file.write(b"< " + line + b"\n")
                yield line

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


DISCONNECT = "disconnect"
BAD_FRAME = "bad_frame"


class WireHub:
    """Listener routing registered robot/station/feed connections to the engine.

    Inbound frames are decoded on the connection's reader thread and posted
    to a serialized queue; the engine drains it at safe points.  A malformed
    frame is reported but the connection survives.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.inbound: "queue.Queue[tuple[str, str, int, object]]" = queue.Queue()
        self.conns: dict[tuple[str, int], FrameConn] = {}
        self._lock = threading.Lock()
        self._log_file = None
        log_path = os.environ.get("RMFS_WIRE_LOG")
        if log_path:
            self._log_file = open(log_path, "ab")
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._running = True
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, _addr = self._server.accept()
            except OSError:
                return
            conn = FrameConn(sock, self._log_file)
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn: FrameConn) -> None:
        role_id: tuple[str, int] | None = None
        for line in conn.recv_frames():
            try:
                msg = decode(line)
            except WireDecodeError:
                if role_id:
                    self.inbound.put((BAD_FRAME, role_id[0], role_id[1], bytes(line)))
                continue
            if isinstance(msg, Ping):
                conn.send(Pong(seq=msg.seq))
                continue
            if role_id is None:
                if not isinstance(msg, Register):
                    conn.send(Error(robot_id=0, msg_id=0,
                                    text="first frame must be Register"))
                    continue
                key = (msg.role, msg.id)
                with self._lock:
                    if key in self.conns and self.conns[key].alive:
                        conn.send(Error(robot_id=0, msg_id=0,
                                        text=f"{msg.role} {msg.id} already registered"))
                        conn.close()
                        return
                    self.conns[key] = conn
                role_id = key
                self.inbound.put(("register", key[0], key[1], msg))
                continue
            self.inbound.put(("msg", role_id[0], role_id[1], msg))
        if role_id is not None:
            with self._lock:
                if self.conns.get(role_id) is conn:
                    del self.conns[role_id]
            self.inbound.put((DISCONNECT, role_id[0], role_id[1], None))

    def connected(self, role: str, id: int) -> bool:
        with self._lock:
            conn = self.conns.get((role, id))
            return conn is not None and conn.alive

    def send(self, role: str, id: int, msg) -> None:
        with self._lock:
            conn = self.conns.get((role, id))
        if conn is None or not conn.alive:
            raise ConnectionError(f"{role} {id} not connected")
        conn.send(msg)

    def poll(self) -> list[tuple[str, str, int, object]]:
        out = []
        while True:
            try:
                out.append(self.inbound.get_nowait())
            except queue.Empty:
                return out

    def wait(self, timeout: float = 10.0) -> tuple[str, str, int, object]:
        return self.inbound.get(timeout=timeout)

    def close(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass
        with self._lock:
            for conn in list(self.conns.values()):
                conn.close()
            self.conns.clear()
        if self._log_file:
            self._log_file.close()


# --- loopback clients ---

class WireClient:
    """Minimal blocking client used by emulators, station apps and feeds."""

    def __init__(self, host: str, port: int, role: str, id: int):
        self.sock = socket.create_connection((host, port))
        self.conn = FrameConn(self.sock)
        self.role = role
        self.id = id
        self.conn.send(Register(role=role, id=id))
        self._frames = self.conn.recv_frames()

    def send(self, msg) -> None:
        self.conn.send(msg)

    def recv(self):
        for line in self._frames:
            msg = decode(line)
            if isinstance(msg, Ping):
                self.conn.send(Pong(seq=msg.seq))
                continue
            return msg
        return None

    def close(self) -> None:
        self.conn.close()


class RobotEmulator:
    """Loopback robot: consumes task messages, answers with simulated timing."""

    def __init__(self, host: str, port: int, robot_id: int, kin: Kinematics,
                 spacing_m: float, node: int, orientation: float,
                 fault_pickup: float = 0.0, rng=None,
                 die_after: int | None = None):
        self.client = WireClient(host, port, "robot", robot_id)
        self.sim = RobotSim(robot_id=robot_id, kin=kin, spacing_m=spacing_m,
                            node=node, orientation=orientation,
                            fault_pickup=fault_pickup, rng=rng)
        self.die_after = die_after
        self.handled = 0
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def _loop(self) -> None:
        while True:
            msg = self.client.recv()
            if msg is None:
                return
            if self.die_after is not None and self.handled >= self.die_after:
                self.client.close()
                return
            self.handled += 1
            for reply in self.sim.handle(msg):
                try:
                    self.client.send(reply)
                except OSError:
                    return

    def close(self) -> None:
        self.client.close()


class ScriptedStation:
    """Loopback station app replying to info messages from a verdict script."""

    def __init__(self, host: str, port: int, station_id: int,
                 verdicts: list | None = None, reply_delay: float = 0.0):
        self.client = WireClient(host, port, "station", station_id)
        self.station_id = station_id
        self.verdicts = list(verdicts or [])
        self.reply_delay = reply_delay
        self.seen: list = []
        self._msg_id = 0
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def _next_id(self) -> int:
        self._msg_id += 1
        return self._msg_id

    def _loop(self) -> None:
        while True:
            msg = self.client.recv()
            if msg is None:
                return
            if not isinstance(msg, (PickingInfo, ReplenishInfo)):
                continue
            self.seen.append(msg)
            verdict = self.verdicts.pop(0) if self.verdicts else "OK"
            ok = verdict == "OK"
            reply = StationReply(
                station_id=self.station_id, msg_id=self._next_id(),
                ok=ok, error=None if ok else str(verdict),
                order_id=getattr(msg, "order_id", None),
                bundle_id=getattr(msg, "bundle_id", None),
                item_id=msg.item_id, request_id=msg.request_id,
                time=None if msg.time is None else msg.time + self.reply_delay)
            try:
                self.client.send(reply)
            except OSError:
                return

    def close(self) -> None:
        self.client.close()
