"""Envelope server: one stylize request in flight per connection."""

from __future__ import annotations

import socket
import threading

from . import protocol
from .backends import LatentStubBackend


class WorkerServer:
    """Accepts connections and answers StyleRequest envelopes.

    A malformed request or a backend failure produces an Error envelope and
    the connection stays usable; garbage at the framing layer closes it.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 7073, backend=None):
        self.backend = backend if backend is not None else LatentStubBackend()
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> "WorkerServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
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
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        try:
            while not self._stop.is_set():
                msg_type, payload = protocol.read_envelope(conn)
                if msg_type != protocol.MSG_STYLE_REQUEST:
                    self._reply_error(conn, "expected a style request")
                    continue
                try:
                    job = protocol.decode_style_request(payload)
                    rgb, timings = self.backend.stylize(job)
                except (protocol.ProtocolError, ValueError, MemoryError) as exc:
                    self._reply_error(conn, str(exc))
                    continue
                conn.sendall(
                    protocol.encode_envelope(
                        protocol.MSG_STYLE_RESULT,
                        protocol.encode_style_result(job, rgb, timings, self.backend.name),
                    )
                )
        except (ConnectionError, OSError, protocol.ProtocolError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def _reply_error(self, conn: socket.socket, detail: str) -> None:
        conn.sendall(
            protocol.encode_envelope(
                protocol.MSG_ERROR, protocol.encode_error(protocol.ERR_WORKER, detail)
            )
        )
