import json
import socket
import threading
import time
from dataclasses import replace

import numpy as np
import pytest

from bcg.codec import PACKET_SIZE, SamplePacket, Sca10hFrame, encode
from bcg.ingest import (
    HELLO_RE,
    SensorSession,
    StorageError,
    check_storage,
    emulate,
    make_server,
    read_session_file,
    serve,
    session_record,
)
from bcg.pipeline import Calibration, StreamPipeline
from bcg.synth import SynthParams, generate_packets

from conftest import VITALS_CH, bedding_down_thresholds


def calibration_for(sensor_id, params, seed):
    return Calibration(sensor_id, None, bedding_down_thresholds(params, seed), VITALS_CH)


@pytest.fixture
def running():
    """Start servers on ephemeral ports; shut them all down afterwards."""
    servers = []

    def start(storage, **kwargs):
        srv = make_server(("127.0.0.1", 0), storage, **kwargs)
        threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05},
                         daemon=True).start()
        servers.append(srv)
        return srv

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


def session_files(path):
    return sorted(path.glob("*.jsonl"))


def send_raw(port, payload, read_reply=True):
    with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
        s.sendall(payload)
        s.shutdown(socket.SHUT_WR)
        if read_reply:
            while s.recv(4096):
                pass


def test_hello_pattern():
    assert HELLO_RE.match(b"BCG1 bed-3.a_b\n")
    for bad in (b"BCG1 \n", b"BCG2 x\n", b"BCG1 a b\n", b"BCG1 x", b"BCG1 " + b"a" * 65 + b"\n"):
        assert not HELLO_RE.match(bad)


def test_sixty_second_session(tmp_path, running):
    params = SynthParams(heart_rate_bpm=70, seed=70)
    cal = calibration_for("bed1", params, seed=71)
    srv = running(tmp_path, calibrations={"bed1": cal})
    assert emulate("127.0.0.1", srv.port, "bed1", generate_packets(params, 60), realtime=False) == 60
    (path,) = session_files(tmp_path)
    assert path.name.startswith("bed1-")
    records = read_session_file(path)
    assert len(records) == 60
    assert [r["seq"] for r in records] == list(range(60))
    later = [r["heart_bpm"] for r in records[30:]]
    assert all(hr is not None and abs(hr - 70) <= 2 for hr in later)
    assert records[0]["heart_bpm"] is None  # too few peaks in the first second
    assert all(r["sca10h_heart_bpm"] == 70 and r["sca10h_occupied"] for r in records)
    assert all(r["sensor_id"] == "bed1" and r["gaps"] == 0 for r in records)
    assert records[0]["uncalibrated"] is True  # no occupancy part in this calibration


def test_garbage_hello_is_isolated(tmp_path, running):
    srv = running(tmp_path)
    send_raw(srv.port, b"HELLO there\n" + bytes(2 * PACKET_SIZE))
    assert session_files(tmp_path) == []
    emulate("127.0.0.1", srv.port, "ok", generate_packets(SynthParams(), 5), realtime=False)
    (path,) = session_files(tmp_path)
    assert len(read_session_file(path)) == 5
    assert srv.completed[-1]["reason"] == "eof"


def test_hello_timeout_closes_connection(tmp_path, running):
    srv = running(tmp_path, read_timeout_s=0.3)
    with socket.create_connection(("127.0.0.1", srv.port), timeout=5) as s:
        s.sendall(b"BCG1 sl")
        assert s.recv(10) == b""  # server gave up and closed
    assert session_files(tmp_path) == []


def test_two_concurrent_sessions_do_not_mix(tmp_path, running):
    p60 = SynthParams(heart_rate_bpm=60, seed=60)
    p90 = SynthParams(heart_rate_bpm=90, seed=90)
    cals = {"a": calibration_for("a", p60, 61), "b": calibration_for("b", p90, 91)}
    srv = running(tmp_path, calibrations=cals)
    threads = [
        threading.Thread(target=emulate, args=("127.0.0.1", srv.port, sid, list(generate_packets(p, 60))),
                         kwargs={"realtime": True, "period_s": 0.02})
        for sid, p in (("a", p60), ("b", p90))
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    files = {p.name.split("-")[0]: read_session_file(p) for p in session_files(tmp_path)}
    assert sorted(files) == ["a", "b"]
    for sid, truth in (("a", 60), ("b", 90)):
        recs = files[sid]
        assert len(recs) == 60 and all(r["sensor_id"] == sid for r in recs)
        assert all(abs(r["heart_bpm"] - truth) <= 2 for r in recs[30:])


def _run_pair(storage, inject_fault):
    """One clean stream plus one that may break mid-way; returns the clean file's bytes."""
    clean = list(generate_packets(SynthParams(heart_rate_bpm=65, seed=1), 30))
    other = [encode(p) for p in generate_packets(SynthParams(heart_rate_bpm=80, seed=2), 30)]
    if inject_fault:
        bad = bytearray(other[10])
        bad[16] = 9  # occupancy byte out of range
        other[10] = bytes(bad)
    srv = make_server(("127.0.0.1", 0), storage, clock=lambda: 0)
    threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
    try:
        t = threading.Thread(target=send_raw, args=(srv.port, b"BCG1 other\n" + b"".join(other)))
        t.start()
        emulate("127.0.0.1", srv.port, "clean", clean, realtime=True, period_s=0.005)
        t.join()
        srv.wait_idle(5)
    finally:
        srv.shutdown()
        srv.server_close()
    return (storage / "clean-0.jsonl").read_bytes(), read_session_file(storage / "other-0.jsonl")


def test_fault_in_one_session_leaves_others_byte_identical(tmp_path):
    ok_bytes, ok_other = _run_pair(tmp_path / "ok", inject_fault=False)
    bad_bytes, bad_other = _run_pair(tmp_path / "bad", inject_fault=True)
    assert ok_bytes == bad_bytes
    assert len(ok_other) == 30 and len(bad_other) == 10


def test_session_record_accounting(tmp_path):
    path = tmp_path / "s.jsonl"
    session = SensorSession("s", ("127.0.0.1", 1), 0, path, StreamPipeline())
    session.open()
    try:
        def packet(seq, occ=1):
            return SamplePacket(Sca10hFrame(seq=seq, timestamp_ms=1000 * seq, occupancy=occ,
                                            heart_rate_bpm=71, respiration_rate_bpm=14),
                                np.zeros((100, 2)), np.zeros((100, 3)))

        r5 = session_record(session, packet(5), arrival_ms=123)
        assert r5["sca10h_occupied"] is True and r5["sca10h_heart_bpm"] == 71
        assert r5["heart_bpm"] is None and r5["resp_bpm"] is None
        assert r5["uncalibrated"] is True and r5["t_ms"] == 123 and r5["frame_ts_ms"] == 5000
        r8 = session_record(session, packet(8), arrival_ms=124)
        assert r8["gaps"] == 2 and session.gaps == 2
        r9 = session_record(session, packet(9, occ=0), arrival_ms=125)
        assert r9["occupied"] is False and r9["sca10h_occupied"] is False
        assert session.packets_received == 3 and session.last_seq == 9
    finally:
        session.close()
    assert [json.loads(line)["seq"] for line in path.read_text().splitlines()] == [5, 8, 9]


def test_seq_wraparound_is_not_a_gap(tmp_path):
    session = SensorSession("s", None, 0, tmp_path / "w.jsonl", StreamPipeline())
    session.account(2**32 - 1)
    session.account(0)
    assert session.gaps == 0
    session.account(3)
    assert session.gaps == 2


def test_restart_appends(tmp_path, running):
    srv = running(tmp_path, clock=lambda: 42)
    (tmp_path / "bed-42.jsonl").write_text('{"earlier": true}\n')
    emulate("127.0.0.1", srv.port, "bed", generate_packets(SynthParams(), 3), realtime=False)
    lines = (tmp_path / "bed-42.jsonl").read_text().splitlines()
    assert lines[0] == '{"earlier": true}' and len(lines) == 4


def test_live_sessions_get_unique_files(tmp_path, running):
    srv = running(tmp_path, clock=lambda: 7)
    packets = list(generate_packets(SynthParams(), 20))
    threads = [threading.Thread(target=emulate, args=("127.0.0.1", srv.port, "same", packets),
                                kwargs={"realtime": True, "period_s": 0.01}) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    files = session_files(tmp_path)
    assert len(files) == 3
    assert all(len(read_session_file(f)) == 20 for f in files)


def test_truncated_stream_keeps_complete_packets(tmp_path, running):
    srv = running(tmp_path)
    data = b"".join(encode(p) for p in generate_packets(SynthParams(), 3))
    send_raw(srv.port, b"BCG1 cut\n" + data[:-100])
    srv.wait_idle(5)
    (path,) = session_files(tmp_path)
    assert len(read_session_file(path)) == 2
    assert "inside a packet" in srv.completed[-1]["reason"]


def test_storage_must_be_writable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(StorageError):
        check_storage(blocker)
    with pytest.raises(StorageError):
        make_server(("127.0.0.1", 0), blocker)


def test_bind_failure(tmp_path, running):
    srv = running(tmp_path)
    with pytest.raises(OSError):
        make_server(("127.0.0.1", srv.port), tmp_path)


def test_serve_runs_until_stopped(tmp_path):
    stop = threading.Event()
    started = {}
    t = threading.Thread(target=serve, args=(("127.0.0.1", 0), tmp_path),
                         kwargs={"ready": lambda s: started.setdefault("port", s.port), "stop": stop})
    t.start()
    deadline = time.monotonic() + 5
    while "port" not in started and time.monotonic() < deadline:
        time.sleep(0.01)
    emulate("127.0.0.1", started["port"], "x", generate_packets(SynthParams(), 2), realtime=False)
    stop.set()
    t.join(5)
    assert not t.is_alive()
    assert len(read_session_file(session_files(tmp_path)[0])) == 2


def test_emulate_connection_refused():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(ConnectionRefusedError):
        emulate("127.0.0.1", port, "x", generate_packets(SynthParams(), 1), realtime=False)


def test_uncalibrated_session_uses_frame_occupancy(tmp_path, running):
    srv = running(tmp_path)
    params = SynthParams(occupied_intervals_s=((3.0, 8.0),))
    emulate("127.0.0.1", srv.port, "u", generate_packets(params, 10), realtime=False)
    recs = read_session_file(session_files(tmp_path)[0])
    assert [r["occupied"] for r in recs] == [r["sca10h_occupied"] for r in recs]
    assert all(r["uncalibrated"] for r in recs)
    assert all(r["heart_bpm"] is None for r in recs if not r["occupied"])


def test_calibrated_occupancy_overrides_frame(tmp_path, running):
    from bcg.occupancy import OccupancyConfig
    occ = OccupancyConfig("SCA61T:X", baseline_mg=0.0, threshold_mg=25.0)
    cal = Calibration("c", occ, {}, VITALS_CH)
    srv = running(tmp_path, calibrations={"c": cal})
    params = replace(SynthParams(), occupied_intervals_s=((5.0, 20.0),))
    emulate("127.0.0.1", srv.port, "c", generate_packets(params, 20), realtime=False)
    recs = read_session_file(session_files(tmp_path)[0])
    occupied = [r["seq"] for r in recs if r["occupied"]]
    assert occupied[0] in (7, 8) and occupied[-1] == 19
    assert "uncalibrated" not in recs[0]
