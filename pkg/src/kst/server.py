"""WebSocket host around a streaming session.

Division of labor per the concurrency contract: client reader threads only
parse text and hand it to the session's ingestion path (mailbox writes and
command queueing, both lock-guarded); the tick loop runs in the thread that
called run() and never blocks on the network. Outbound traffic goes through
one bounded queue per client drained by a writer thread; when a slow client
falls behind, the oldest queued message is dropped and counted.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
from collections import deque
from typing import Optional

from .config import SessionConfig
from .protocol import (
    accept_websocket,
    encode_envelope,
    joint_frame_payload,
    make_envelope,
)
from .runtime import RealClock, StreamingSession

log = logging.getLogger("kst.server")

OUTPUT_QUEUE_LIMIT = 256      # envelopes buffered per client before drop-oldest
METRICS_PERIOD_S = 1.0        # metrics_snapshot broadcast interval


class ClientHandle:
    """One accepted connection: reader thread, writer thread, bounded queue."""

    def __init__(self, conn, server: "SessionServer", name: str):
        self.conn = conn
        self.server = server
        self.name = name
        self._queue: deque = deque()
        self._lock = threading.Lock()
        self._ready = threading.Event()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop,
                                        name=f"{name}-reader", daemon=True)
        self._writer = threading.Thread(target=self._write_loop,
                                        name=f"{name}-writer", daemon=True)

    def start(self) -> None:
        self._reader.start()
        self._writer.start()

    def enqueue(self, text: str) -> None:
        if self._closed:
            return
        with self._lock:
            self._queue.append(text)
            while len(self._queue) > OUTPUT_QUEUE_LIMIT:
                self._queue.popleft()
                self.server.session.metrics.output_drops += 1
            self._ready.set()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._ready.set()
        try:
            self.conn.close()
        except OSError:
            pass
        self.server._discard(self)

    def _read_loop(self) -> None:
        session = self.server.session
        clock = self.server.clock
        while not self._closed:
            try:
                text = self.conn.receive_text()
            except (OSError, ValueError):
                break
            if text is None:
                break
            for reply in session.ingest_text(text, clock.now()):
                self.enqueue(encode_envelope(reply))
        self.close()

    def _write_loop(self) -> None:
        while not self._closed:
            self._ready.wait(timeout=0.5)
            with self._lock:
                batch = list(self._queue)
                self._queue.clear()
                self._ready.clear()
            try:
                for text in batch:
                    self.conn.send_text(text)
            except OSError:
                break
        self.close()


class SessionServer:
    """Listens for clients and paces the session's tick loop in real time."""

    def __init__(self, config: SessionConfig,
                 session: Optional[StreamingSession] = None,
                 clock: Optional[RealClock] = None):
        self.config = config
        self.clock = clock if clock is not None else RealClock()
        self.session = session if session is not None else StreamingSession(
            config, clock=self.clock)
        self.clients: list = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._seq = itertools.count(1)
        self._sock: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self.port: Optional[int] = None
        self._client_counter = itertools.count(1)

    # -- lifecycle

    def start_listener(self) -> int:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((self.config.listen_host, self.config.listen_port))
        sock.listen(8)
        self._sock = sock
        self.port = sock.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="kst-accept", daemon=True)
        self._accept_thread.start()
        log.info("listening on %s:%d", self.config.listen_host, self.port)
        return self.port

    def stop(self) -> None:
        self._stop.set()

    def run(self) -> None:
        """Tick loop; blocks until stop() or KeyboardInterrupt."""
        if self._sock is None:
            self.start_listener()
        session = self.session
        dt = self.config.dt_tick
        broadcast_period = 1.0 / self.config.broadcast_rate
        next_broadcast = 0.0
        next_metrics = METRICS_PERIOD_S
        anchor = self.clock.now()
        slot = 0
        last_overrun_log = -1e9
        try:
            while not self._stop.is_set():
                frame = session.tick()
                if session.now >= next_broadcast - 1e-12:
                    self._broadcast("joint_frame", joint_frame_payload(
                        frame, session.model.joint_names))
                    next_broadcast += broadcast_period
                if session.now >= next_metrics - 1e-12:
                    self._broadcast("metrics_snapshot", session.metrics.snapshot())
                    next_metrics += METRICS_PERIOD_S
                slot += 1
                deadline = anchor + slot * dt
                now = self.clock.now()
                if now < deadline:
                    self.clock.sleep_until(deadline)
                elif now >= deadline + dt:
                    # a whole slot was lost: count it and resume from fresh
                    # time instead of firing burst ticks to catch up
                    session.metrics.overruns += 1
                    if now - last_overrun_log > 1.0:
                        log.warning("tick %d overran its slot by %.3f ms "
                                    "(%d overruns total)", session.tick_index,
                                    (now - deadline) * 1e3,
                                    session.metrics.overruns)
                        last_overrun_log = now
                    anchor = now - slot * dt
                # else: under one period late, ordinary jitter; run the next
                # tick immediately and keep the original cadence
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
        with self._clients_lock:
            clients = list(self.clients)
        for client in clients:
            client.close()
        self.session.close()
        if self.config.metrics_dir:
            self.session.metrics.write_csv(self.config.metrics_dir)

    # -- internals

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                raw, addr = self._sock.accept()
            except OSError:
                return
            try:
                conn = accept_websocket(raw)
            except (OSError, ValueError) as exc:
                log.warning("handshake with %s failed: %s", addr, exc)
                raw.close()
                continue
            client = ClientHandle(conn, self, f"client-{next(self._client_counter)}")
            with self._clients_lock:
                self.clients.append(client)
            log.info("%s connected from %s", client.name, addr)
            client.start()

    def _discard(self, client: ClientHandle) -> None:
        with self._clients_lock:
            if client in self.clients:
                self.clients.remove(client)

    def _broadcast(self, msg_type: str, payload) -> None:
        with self._clients_lock:
            clients = list(self.clients)
        if not clients:
            return
        text = encode_envelope(make_envelope(
            msg_type, next(self._seq), self.clock.now(), payload))
        for client in clients:
            client.enqueue(text)


def serve(config: SessionConfig) -> SessionServer:
    """Construct a server, start listening, run the tick loop until interrupted."""
    server = SessionServer(config)
    server.start_listener()
    server.run()
    return server
