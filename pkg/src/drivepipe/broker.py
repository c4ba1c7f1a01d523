"""TCP pub/sub broker for frame and control traffic.

Connections declare themselves with one Subscribe envelope: role publish or
subscribe plus a topic.  Publishers then stream envelopes; subscribers pull
with credit envelopes (role 2), one message per credit.  Pull delivery is
what makes the backpressure policy exact rather than dependent on socket
buffering: image topics keep only the newest undelivered message per
subscriber, the control and metrics topics keep an ordered queue.
"""

from __future__ import annotations

import os
import select
import socket
import threading
from collections import deque

from . import wire
from .pipeline import LatestCell
from .wire import Envelope

DEFAULT_BROKER_PORT = 7071
BROKER_ADDR_ENV = "DRIVE_BROKER_ADDR"


def broker_address(flag_value: str | None = None) -> tuple[str, int]:
    """Resolve host:port from a flag, the DRIVE_BROKER_ADDR env var, or defaults."""
    text = flag_value or os.environ.get(BROKER_ADDR_ENV) or f"127.0.0.1:{DEFAULT_BROKER_PORT}"
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


class _Mailbox:
    """Per-subscriber delivery state: latest-value for images, FIFO otherwise."""

    def __init__(self, coalesce: bool):
        self.coalesce = coalesce
        if coalesce:
            self._cell = LatestCell()
        else:
            self._cond = threading.Condition()
            self._queue: deque[Envelope] = deque()
        self.closed = threading.Event()

    def offer(self, env: Envelope) -> None:
        if self.coalesce:
            self._cell.offer(env)
        else:
            with self._cond:
                self._queue.append(env)
                self._cond.notify()

    def take(self, timeout: float) -> Envelope | None:
        if self.coalesce:
            return self._cell.take_wait(timeout)
        with self._cond:
            if not self._queue:
                self._cond.wait_for(lambda: bool(self._queue), timeout)
            return self._queue.popleft() if self._queue else None


class Broker:
    """Threaded pub/sub broker; one handler thread per connection."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_BROKER_PORT):
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._subscribers: dict[str, list[_Mailbox]] = {t: [] for t in wire.TOPICS}
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._accept_thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "Broker":
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="broker-accept", daemon=True
        )
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            for boxes in self._subscribers.values():
                for box in boxes:
                    box.closed.set()

    def publish(self, topic: str, env: Envelope) -> None:
        """Fan out to current subscribers; never blocks on any of them."""
        if topic not in wire.TOPICS:
            raise ValueError(f"unknown topic {topic!r}")
        with self._lock:
            boxes = list(self._subscribers[topic])
        for box in boxes:
            box.offer(env)

    # -- connection handling ----------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        try:
            hello = wire.recv_envelope(conn)
            if hello.msg_type != wire.MSG_SUBSCRIBE:
                self._send_error(conn, wire.ERR_MALFORMED, "expected subscribe")
                return
            role, topic = wire.decode_subscribe_payload(hello.payload)
            if topic not in wire.TOPICS:
                self._send_error(conn, wire.ERR_INVALID_TOPIC, topic)
                return
            if role == wire.ROLE_PUBLISH:
                self._serve_publisher(conn, topic)
            elif role == wire.ROLE_SUBSCRIBE:
                self._serve_subscriber(conn, topic)
            else:
                self._send_error(conn, wire.ERR_MALFORMED, "credit before subscribe")
        except (wire.DecodeError, ConnectionError, OSError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _send_error(self, conn: socket.socket, code: int, detail: str) -> None:
        try:
            wire.send_envelope(
                conn, wire.MSG_ERROR, wire.encode_error_payload(code, detail)
            )
        except OSError:
            pass

    def _serve_publisher(self, conn: socket.socket, topic: str) -> None:
        while not self._stop.is_set():
            env = wire.recv_envelope(conn)
            self.publish(topic, env)

    def _serve_subscriber(self, conn: socket.socket, topic: str) -> None:
        box = _Mailbox(coalesce=topic in wire.IMAGE_TOPICS)
        with self._lock:
            self._subscribers[topic].append(box)
        try:
            while not self._stop.is_set() and not box.closed.is_set():
                credit = wire.recv_envelope(conn)  # one message per credit
                if credit.msg_type != wire.MSG_SUBSCRIBE:
                    self._send_error(conn, wire.ERR_MALFORMED, "expected credit")
                    return
                env = None
                while env is None:
                    if self._stop.is_set() or box.closed.is_set():
                        return
                    env = box.take(timeout=0.1)
                conn.sendall(wire.encode_envelope(env.msg_type, env.payload))
        finally:
            with self._lock:
                if box in self._subscribers[topic]:
                    self._subscribers[topic].remove(box)


class Publisher:
    """Client-side publishing handle bound to one topic."""

    def __init__(self, address: str | tuple[str, int], topic: str):
        host, port = address if isinstance(address, tuple) else broker_address(address)
        self.topic = topic
        self._sock = socket.create_connection((host, port), timeout=5.0)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._lock = threading.Lock()
        wire.send_envelope(
            self._sock,
            wire.MSG_SUBSCRIBE,
            wire.encode_subscribe_payload(wire.ROLE_PUBLISH, topic),
        )

    def publish(self, msg_type: int, payload: bytes) -> None:
        with self._lock:
            wire.send_envelope(self._sock, msg_type, payload)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class Subscription:
    """Client-side pull subscription bound to one topic.

    recv() sends a credit and blocks for the next message; on image topics
    intermediate messages may have been coalesced away broker-side.
    """

    def __init__(self, address: str | tuple[str, int], topic: str):
        host, port = address if isinstance(address, tuple) else broker_address(address)
        self.topic = topic
        self._sock = socket.create_connection((host, port), timeout=5.0)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.settimeout(None)
        self._credit = wire.encode_envelope(
            wire.MSG_SUBSCRIBE, wire.encode_subscribe_payload(wire.ROLE_CREDIT, topic)
        )
        self._credit_outstanding = False
        wire.send_envelope(
            self._sock,
            wire.MSG_SUBSCRIBE,
            wire.encode_subscribe_payload(wire.ROLE_SUBSCRIBE, topic),
        )

    def recv(self, timeout: float | None = None) -> Envelope | None:
        """Next message, or None on timeout.  Raises ConnectionError when closed.

        A credit is left outstanding across timeouts so the broker delivers at
        most one message per completed recv.
        """
        if not self._credit_outstanding:
            self._sock.sendall(self._credit)
            self._credit_outstanding = True
        readable, _, _ = select.select([self._sock], [], [], timeout)
        if not readable:
            return None
        # once the header is on the wire the rest follows promptly; allow a
        # grace period so a mid-envelope wait cannot desync the stream
        self._sock.settimeout(5.0)
        try:
            env = wire.recv_envelope(self._sock)
        finally:
            self._sock.settimeout(None)
        self._credit_outstanding = False
        return env

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
