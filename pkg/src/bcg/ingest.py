"""TCP ingest service: one session per sensor connection, JSONL per session.

Wire protocol: an ASCII hello line ``BCG1 <sensor_id>\\n`` followed by
back-to-back 1046-byte packets. The sensor half-closes when done; the
server finishes the session and closes the connection.
"""

from __future__ import annotations

import json
import logging
import os
import re
import signal
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .codec import PACKET_SIZE, PacketError, SamplePacket, decode, encode
from .pipeline import Calibration, StreamPipeline, block_from_packet
from .types import AnalysisConfig

log = logging.getLogger(__name__)

HELLO_RE = re.compile(rb"BCG1 ([A-Za-z0-9_.-]{1,64})\n\Z")
HELLO_MAX_BYTES = len(b"BCG1 ") + 64 + 1
SEQ_MOD = 1 << 32


class StorageError(OSError):
    pass


class ProtocolError(Exception):
    pass


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(eq=False)
class SensorSession:
    sensor_id: str
    remote_addr: tuple
    started_ms: int
    path: Path
    pipeline: StreamPipeline
    packets_received: int = 0
    last_seq: int | None = None
    gaps: int = 0
    _fh: object = field(default=None, repr=False)

    def open(self) -> None:
        # append mode: a restart never truncates earlier records
        self._fh = open(self.path, "a", encoding="utf-8")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def account(self, seq: int) -> None:
        if self.last_seq is not None:
            expected = (self.last_seq + 1) % SEQ_MOD
            missing = (seq - expected) % SEQ_MOD
            if missing and missing < SEQ_MOD // 2:
                log.warning("%s: seq gap %d -> %d", self.sensor_id, self.last_seq, seq)
                self.gaps += missing
            elif missing:
                log.warning("%s: seq went backwards %d -> %d", self.sensor_id, self.last_seq, seq)
        self.last_seq = seq
        self.packets_received += 1

    def write(self, record: Mapping) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()


def session_record(session: SensorSession, packet: SamplePacket,
                   arrival_ms: int | None = None) -> dict:
    """Run one packet through the session pipeline and persist the record."""
    frame = packet.sca10h
    session.account(frame.seq)
    out = session.pipeline.process(block_from_packet(packet))
    record = {
        "t_ms": now_ms() if arrival_ms is None else arrival_ms,
        "frame_ts_ms": frame.timestamp_ms,
        "sensor_id": session.sensor_id,
        "seq": frame.seq,
        "occupied": out["occupied"],
        "heart_bpm": out["heart_bpm"],
        "resp_bpm": out["resp_bpm"],
        "provisional": out["provisional"],
    }
    if out.get("uncalibrated"):
        record["uncalibrated"] = True
    record.update(
        gaps=session.gaps,
        sca10h_heart_bpm=frame.heart_rate_bpm,
        sca10h_resp_bpm=frame.respiration_rate_bpm,
        sca10h_occupied=bool(frame.occupancy),
    )
    session.write(record)
    return record


def check_storage(storage_dir: str | os.PathLike) -> Path:
    path = Path(storage_dir)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / f".probe-{os.getpid()}-{threading.get_ident()}"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise StorageError(f"storage dir {path} is not writable: {exc}") from exc
    return path


def _read_hello(rfile) -> str:
    line = rfile.readline(HELLO_MAX_BYTES)
    m = HELLO_RE.match(line)
    if m is None:
        raise ProtocolError(f"malformed hello {line[:HELLO_MAX_BYTES]!r}")
    return m.group(1).decode("ascii")


def _read_exact(rfile, n: int) -> bytes | None:
    """``n`` bytes, ``None`` at a clean EOF; a partial tail is a protocol error."""
    buf = rfile.read(n)
    if not buf:
        return None
    if len(buf) != n:
        raise ProtocolError(f"stream ended inside a packet ({len(buf)} of {n} bytes)")
    return buf


class _Handler(socketserver.StreamRequestHandler):
    def setup(self) -> None:
        self.request.settimeout(self.server.read_timeout_s)
        super().setup()

    def handle(self) -> None:
        self.server.run_session(self.rfile, self.client_address)


class IngestServer(socketserver.ThreadingTCPServer):
    """Threaded ingest server; each connection owns its own pipeline."""

    daemon_threads = True
    allow_reuse_address = True
    request_queue_size = 128

    def __init__(self, bind_addr: tuple[str, int], storage_dir: str | os.PathLike,
                 config: AnalysisConfig = AnalysisConfig(),
                 calibrations: Mapping[str, Calibration] | None = None,
                 read_timeout_s: float | None = 30.0,
                 clock: Callable[[], int] = now_ms):
        self.storage_dir = check_storage(storage_dir)
        self.config = config
        self.calibrations = dict(calibrations or {})
        self.read_timeout_s = read_timeout_s
        self.clock = clock
        self._cond = threading.Condition()
        self._live: dict[Path, SensorSession] = {}
        self.completed: list[dict] = []
        super().__init__(bind_addr, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def live_sessions(self) -> int:
        with self._cond:
            return len(self._live)

    def wait_idle(self, timeout: float | None = None) -> bool:
        with self._cond:
            return self._cond.wait_for(lambda: not self._live, timeout)

    def _register(self, sensor_id: str, remote) -> SensorSession:
        with self._cond:
            started = self.clock()
            path = self.storage_dir / f"{sensor_id}-{started}.jsonl"
            while path in self._live:
                started += 1
                path = self.storage_dir / f"{sensor_id}-{started}.jsonl"
            pipeline = StreamPipeline(self.config, self.calibrations.get(sensor_id))
            session = SensorSession(sensor_id, remote, started, path, pipeline)
            session.open()
            self._live[path] = session
            return session

    def _unregister(self, session: SensorSession, reason: str) -> None:
        session.close()
        with self._cond:
            self._live.pop(session.path, None)
            self.completed.append({
                "sensor_id": session.sensor_id,
                "path": str(session.path),
                "packets_received": session.packets_received,
                "gaps": session.gaps,
                "reason": reason,
            })
            self._cond.notify_all()

    def run_session(self, rfile, remote) -> None:
        try:
            sensor_id = _read_hello(rfile)
        except (ProtocolError, OSError) as exc:
            log.warning("%s: closing before session start: %s", remote, exc)
            return
        try:
            session = self._register(sensor_id, remote)
        except OSError as exc:
            log.error("%s: cannot open session file: %s", sensor_id, exc)
            return
        log.info("%s: session from %s -> %s", sensor_id, remote, session.path.name)
        reason = "eof"
        try:
            while (buf := _read_exact(rfile, PACKET_SIZE)) is not None:
                arrival = self.clock()
                session_record(session, decode(buf), arrival)
        except (ProtocolError, PacketError) as exc:
            reason = f"protocol error: {exc}"
            log.warning("%s: %s", sensor_id, reason)
        except OSError as exc:
            reason = f"i/o error: {exc}"
            log.error("%s: %s", sensor_id, reason)
        finally:
            self._unregister(session, reason)
        log.info("%s: session closed after %d packets (%s)",
                 sensor_id, session.packets_received, reason)


def make_server(bind_addr: tuple[str, int], storage_dir: str | os.PathLike,
                config: AnalysisConfig = AnalysisConfig(),
                calibrations: Mapping[str, Calibration] | None = None,
                **kwargs) -> IngestServer:
    return IngestServer(bind_addr, storage_dir, config, calibrations, **kwargs)


def serve(bind_addr: tuple[str, int], storage_dir: str | os.PathLike,
          config: AnalysisConfig = AnalysisConfig(),
          calibrations: Mapping[str, Calibration] | None = None,
          ready: Callable[[IngestServer], None] | None = None,
          stop: threading.Event | None = None) -> None:
    """Serve until SIGINT/SIGTERM (or ``stop`` is set), then drain live sessions."""
    server = make_server(bind_addr, storage_dir, config, calibrations)
    stop = stop or threading.Event()
    if threading.current_thread() is threading.main_thread():
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
    loop = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.2},
                            name="ingest-accept", daemon=True)
    loop.start()
    log.info("listening on %s:%d, storing to %s", *server.server_address[:2], server.storage_dir)
    if ready is not None:
        ready(server)
    try:
        while not stop.wait(0.5):
            pass
    finally:
        server.shutdown()
        server.wait_idle(timeout=5.0)
        server.server_close()
        log.info("stopped")


def emulate(host: str, port: int, sensor_id: str, packets: Iterable[SamplePacket],
            realtime: bool = True, period_s: float = 1.0,
            connect_timeout_s: float = 5.0) -> int:
    """Stream packets like a sensor would; return the number sent.

    Returns after the server has closed the connection, i.e. once every
    packet sent has been processed and persisted.
    """
    sent = 0
    with socket.create_connection((host, port), timeout=connect_timeout_s) as sock:
        sock.settimeout(None)
        sock.sendall(f"BCG1 {sensor_id}\n".encode("ascii"))
        start = time.monotonic()
        for k, packet in enumerate(packets):
            if realtime:
                delay = start + k * period_s - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            sock.sendall(encode(packet))
            sent += 1
        sock.shutdown(socket.SHUT_WR)
        while sock.recv(4096):
            pass
    return sent


def read_session_file(path: str | os.PathLike) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
