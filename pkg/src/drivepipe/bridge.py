"""WebSocket bridge: the operator console speaks envelopes over one socket.

Each binary WebSocket message carries exactly one envelope.  Clients send
Subscribe envelopes to attach topics (the bridge opens matching broker
subscriptions and forwards messages as they arrive) and ControlUpdate
envelopes to drive; those are republished on the control topic.  Image-topic
coalescing happens broker-side, so a slow console sees fresh frames, never a
backlog.
"""

from __future__ import annotations

import threading

from websockets.exceptions import ConnectionClosed
from websockets.sync.server import Server, ServerConnection, serve

from . import wire
from .broker import Publisher, Subscription

DEFAULT_BRIDGE_PORT = 7072


class ConsoleBridge:
    def __init__(
        self,
        broker_addr: tuple[str, int],
        host: str = "127.0.0.1",
        port: int = DEFAULT_BRIDGE_PORT,
    ):
        self.broker_addr = broker_addr
        self._server: Server = serve(self._handle, host, port)
        self.host, self.port = self._server.socket.getsockname()[:2]
        self._thread: threading.Thread | None = None
        self._control_pub: Publisher | None = None
        self._control_lock = threading.Lock()

    def start(self) -> "ConsoleBridge":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="bridge-serve", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        with self._control_lock:
            if self._control_pub is not None:
                self._control_pub.close()
                self._control_pub = None

    def _publish_control(self, env: wire.Envelope) -> None:
        with self._control_lock:
            if self._control_pub is None:
                self._control_pub = Publisher(self.broker_addr, wire.TOPIC_CONTROL)
            self._control_pub.publish(env.msg_type, env.payload)

    def _handle(self, ws: ServerConnection) -> None:
        send_lock = threading.Lock()
        stop = threading.Event()
        subs: list[Subscription] = []

        def forward(sub: Subscription) -> None:
            try:
                while not stop.is_set():
                    env = sub.recv(timeout=0.25)
                    if env is None:
                        continue
                    with send_lock:
                        ws.send(wire.encode_envelope(env.msg_type, env.payload))
            except (ConnectionError, ConnectionClosed, OSError):
                pass

        try:
            while True:
                message = ws.recv()
                if isinstance(message, str):
                    continue  # text frames carry nothing in this protocol
                try:
                    env = wire.decode_envelope(message)
                except wire.DecodeError as exc:
                    with send_lock:
                        ws.send(
                            wire.encode_envelope(
                                wire.MSG_ERROR,
                                wire.encode_error_payload(wire.ERR_MALFORMED, str(exc)),
                            )
                        )
                    continue
                if env.msg_type == wire.MSG_SUBSCRIBE:
                    try:
                        _, topic = wire.decode_subscribe_payload(env.payload)
                    except wire.DecodeError:
                        topic = ""
                    if topic not in wire.TOPICS:
                        with send_lock:
                            ws.send(
                                wire.encode_envelope(
                                    wire.MSG_ERROR,
                                    wire.encode_error_payload(wire.ERR_INVALID_TOPIC, topic),
                                )
                            )
                        continue
                    sub = Subscription(self.broker_addr, topic)
                    subs.append(sub)
                    threading.Thread(
                        target=forward, args=(sub,), name=f"bridge-{topic}", daemon=True
                    ).start()
                elif env.msg_type == wire.MSG_CONTROL:
                    self._publish_control(env)
                # other message types from a console are ignored
        except (ConnectionClosed, ConnectionError, OSError):
            pass
        finally:
            stop.set()
            for sub in subs:
                sub.close()
