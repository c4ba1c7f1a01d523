"""Worker protocol: dispatch stylize jobs to a remote process over envelopes.

One request is outstanding per connection at most; the pipeline's latest-value
scheduling makes deeper queues pointless.  A missed deadline drops the frame
and poisons the connection (a late reply would desync request/response
pairing); a lost connection switches the pipeline to passthrough until the
exponential-backoff reconnect succeeds.
"""

from __future__ import annotations

import socket
import threading
import time
from typing import Callable

from . import wire
from .pipeline import StylizerUnavailable, StylizeTimeout
from .stylizer import StyleRequest, StyleResult, mock_stylize

DEFAULT_TIMEOUT_S = 1.0
BACKOFF_INITIAL_S = 0.1
BACKOFF_MAX_S = 5.0


def _parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    return (host or "127.0.0.1", int(port))


def remote_stylize(
    endpoint: str, req: StyleRequest, timeout_s: float = DEFAULT_TIMEOUT_S
) -> StyleResult:
    """One-shot request against a worker; mostly useful for tests and tools."""
    with socket.create_connection(_parse_endpoint(endpoint), timeout=timeout_s) as sock:
        sock.settimeout(timeout_s)
        wire.send_envelope(
            sock, wire.MSG_STYLE_REQUEST, wire.encode_style_request_payload(req)
        )
        reply = wire.recv_envelope(sock)
    if reply.msg_type == wire.MSG_ERROR:
        code, detail = wire.decode_error_payload(reply.payload)
        raise StylizerUnavailable(f"worker error {code}: {detail}")
    if reply.msg_type != wire.MSG_STYLE_RESULT:
        raise wire.DecodeError("unknown type", f"reply type {reply.msg_type}")
    return wire.decode_style_result_payload(reply.payload)


class RemoteStylizer:
    """Persistent client handle usable as the pipeline's stylizer callable.

    Raises StylizeTimeout when the worker misses the deadline (frame dropped)
    and StylizerUnavailable while disconnected (pipeline falls back to
    passthrough so driving never freezes).
    """

    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self._addr = _parse_endpoint(endpoint)
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()
        self._backoff = BACKOFF_INITIAL_S
        self._next_attempt = 0.0

    def _connect_if_due(self) -> socket.socket:
        if self._sock is not None:
            return self._sock
        now = time.monotonic()
        if now < self._next_attempt:
            raise StylizerUnavailable(f"worker {self.endpoint} down, retry pending")
        try:
            sock = socket.create_connection(self._addr, timeout=0.25)
        except OSError as exc:
            self._next_attempt = now + self._backoff
            self._backoff = min(self._backoff * 2.0, BACKOFF_MAX_S)
            raise StylizerUnavailable(f"worker {self.endpoint}: {exc}") from None
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._backoff = BACKOFF_INITIAL_S
        return sock

    def _drop_connection(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def __call__(self, req: StyleRequest) -> StyleResult:
        with self._lock:
            sock = self._connect_if_due()
            try:
                sock.settimeout(self.timeout_s)
                wire.send_envelope(
                    sock, wire.MSG_STYLE_REQUEST, wire.encode_style_request_payload(req)
                )
                reply = wire.recv_envelope(sock)
            except (TimeoutError, socket.timeout):
                self._drop_connection()
                raise StylizeTimeout(f"worker {self.endpoint} missed {self.timeout_s}s deadline") from None
            except (ConnectionError, OSError) as exc:
                self._drop_connection()
                self._next_attempt = time.monotonic() + self._backoff
                raise StylizerUnavailable(f"worker {self.endpoint}: {exc}") from None
            if reply.msg_type == wire.MSG_ERROR:
                code, detail = wire.decode_error_payload(reply.payload)
                raise StylizerUnavailable(f"worker error {code}: {detail}")
            try:
                return wire.decode_style_result_payload(reply.payload)
            except wire.DecodeError:
                self._drop_connection()
                raise

    def close(self) -> None:
        with self._lock:
            self._drop_connection()


class WorkerServer:
    """Envelope server wrapping a stylize callable (the mock by default).

    Malformed requests get an Error envelope and the connection stays up;
    framing-level garbage closes the connection.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        stylize: Callable[[StyleRequest], StyleResult] = mock_stylize,
    ):
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self.stylize = stylize
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "WorkerServer":
        self._thread = threading.Thread(
            target=self._accept_loop, name="worker-accept", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass

    def serve_forever(self) -> None:
        self._accept_loop()

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
            while not self._stop.is_set():
                env = wire.recv_envelope(conn)
                if env.msg_type != wire.MSG_STYLE_REQUEST:
                    wire.send_envelope(
                        conn,
                        wire.MSG_ERROR,
                        wire.encode_error_payload(wire.ERR_MALFORMED, "expected style request"),
                    )
                    continue
                try:
                    req = wire.decode_style_request_payload(env.payload)
                    result = self.stylize(req)
                except (wire.DecodeError, ValueError) as exc:
                    wire.send_envelope(
                        conn,
                        wire.MSG_ERROR,
                        wire.encode_error_payload(wire.ERR_WORKER, str(exc)),
                    )
                    continue
                wire.send_envelope(
                    conn, wire.MSG_STYLE_RESULT, wire.encode_style_result_payload(result)
                )
        except (ConnectionError, OSError, wire.DecodeError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass
