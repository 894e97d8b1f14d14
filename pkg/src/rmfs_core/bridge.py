"""Websocket bridge for browser station consoles.

Browsers cannot open raw TCP, so serve mode exposes ws://host:port/station/{id}.
Each websocket connection is piped onto a plain TCP connection to the wire
hub; one JSON message per websocket text frame, byte-identical to the TCP
framing minus the trailing newline.  Only RFC 6455 text frames without
extensions are supported, which is all the console needs.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class WsError(ValueError):
    pass


def accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def read_http_request(sock: socket.socket) -> tuple[str, dict[str, str]]:
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise WsError("connection closed during handshake")
        data += chunk
        if len(data) > 65536:
            raise WsError("oversized handshake")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    parts = lines[0].split(" ")
    if len(parts) < 2:
        raise WsError(f"bad request line: {lines[0]!r}")
    path = parts[1]
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            headers[name.strip().lower()] = value.strip()
    return path, headers


def send_handshake(sock: socket.socket, key: str) -> None:
    response = ("HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n")
    sock.sendall(response.encode("ascii"))


def _read_exact(sock: socket.socket, n: int) -> bytes:
    data = b""
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            raise WsError("connection closed mid-frame")
        data += chunk
    return data


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame; returns (opcode, payload). Client frames must be masked."""
    head = _read_exact(sock, 2)
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        length = struct.unpack(">H", _read_exact(sock, 2))[0]
    elif length == 127:
        length = struct.unpack(">Q", _read_exact(sock, 8))[0]
    if not masked:
        raise WsError("client frame not masked")
    mask = _read_exact(sock, 4)
    payload = bytearray(_read_exact(sock, length))
    for i in range(length):
        payload[i] ^= mask[i % 4]
    return opcode, bytes(payload)


def write_frame(sock: socket.socket, payload: bytes, opcode: int = 0x1) -> None:
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 65536:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    sock.sendall(header + payload)


class WsBridge:
    """Accepts websocket station consoles and pipes them to the wire hub."""

    def __init__(self, hub, host: str = "127.0.0.1", port: int = 0):
        self.hub = hub
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()
        self._running = True
        threading.Thread(target=self._accept_loop, daemon=True).start()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, _addr = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_one, args=(sock,),
                             daemon=True).start()

    def _serve_one(self, ws_sock: socket.socket) -> None:
        tcp = None
        try:
            path, headers = read_http_request(ws_sock)
            key = headers.get("sec-websocket-key")
            if key is None or not path.startswith("/station/"):
                ws_sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
                return
            station_id = int(path.split("/station/", 1)[1].split("?")[0])
            send_handshake(ws_sock, key)
            tcp = socket.create_connection(
                (self.hub.address[0], self.hub.address[1]))
            tcp.sendall(b'{"type":"Register","role":"station","id":%d}\n'
                        % station_id)
            threading.Thread(target=self._pump_tcp_to_ws,
                             args=(tcp, ws_sock), daemon=True).start()
            while True:
                opcode, payload = read_frame(ws_sock)
                if opcode == 0x8:  # close
                    return
                if opcode == 0x9:  # ping
                    write_frame(ws_sock, payload, opcode=0xA)
                    continue
                if opcode in (0x1, 0x2) and payload:
                    tcp.sendall(payload.rstrip(b"\n") + b"\n")
        except (WsError, OSError, ValueError):
            pass
        finally:
            for s in (tcp, ws_sock):
                if s is not None:
                    try:
                        s.close()
                    except OSError:
                        pass

    @staticmethod
    def _pump_tcp_to_ws(tcp: socket.socket, ws_sock: socket.socket) -> None:
        buffer = b""
        try:
            while True:
                data = tcp.recv(65536)
                if not data:
                    break
                buffer += data
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if line:
                        write_frame(ws_sock, line)
        except OSError:
            pass
        finally:
            try:
                ws_sock.close()
            except OSError:
                pass

    def close(self) -> None:
        self._running = False
        try:
            self._server.close()
        except OSError:
            pass
