"""Live teleoperation server.

One simulation thread owns the world and advances it at wall-clock rate
(1 ms of simulated time per 1 ms of wall time; when the host falls behind,
snapshot publishes are skipped but ticks never are). WebSocket handlers talk
to it only through a command queue (in) and published snapshot frames (out).

Multiple clients may watch; a single token holder commands. The first client
to connect receives the token; it moves on REQUEST_TOKEN / RELEASE_TOKEN or
when the holder disconnects.
"""

from __future__ import annotations

import asyncio
import itertools
from contextlib import asynccontextmanager
import json
import queue
import threading
import time
from collections import deque
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import protocol, sim

SNAPSHOT_HZ = 30.0


def scenario_catalog(directory: Path | None = None) -> dict[str, Path]:
    """Scenario fixtures in a directory (files with an initial_pose key)."""
    directory = directory or sim.fixtures_dir()
    catalog = {}
    for path in sorted(directory.glob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(doc, dict) and "initial_pose" in doc:
            catalog[doc.get("name", path.stem)] = path
    return catalog


class SimSession:
    """Owns the authoritative world; drains commands once per tick."""

    def __init__(self, scenario: sim.Scenario, realtime: bool = True):
        self._inbox: queue.Queue = queue.Queue()
        self._cond = threading.Condition()
        self._latest: dict | None = None
        self._seq = 0
        self._stop = threading.Event()
        self._realtime = realtime
        self._paused = False
        self._recent_events: deque = deque(maxlen=32)
        self._token_holder: int | None = None
        self._client_ids = itertools.count(1)
        self._token_lock = threading.Lock()
        self._install(scenario)
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="vasim-sim")

    def _install(self, scenario: sim.Scenario) -> None:
        self.scenario = scenario
        self.world = sim.initial_world(scenario)
        self.graph = sim.node_graph(self.world.network)
        self._snap_every = max(1, round(1.0 / (SNAPSHOT_HZ * scenario.dt)))
        self._recent_events.clear()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        if self._thread.is_alive():
            self._thread.join(timeout=2.0)

    # -- client side ---------------------------------------------------------

    def register_client(self) -> tuple[int, bool]:
        with self._token_lock:
            cid = next(self._client_ids)
            if self._token_holder is None:
                self._token_holder = cid
            return cid, self._token_holder == cid

    def unregister_client(self, cid: int) -> None:
        with self._token_lock:
            if self._token_holder == cid:
                self._token_holder = None

    def holds_token(self, cid: int) -> bool:
        with self._token_lock:
            return self._token_holder == cid

    def request_token(self, cid: int) -> bool:
        with self._token_lock:
            if self._token_holder is None:
                self._token_holder = cid
            return self._token_holder == cid

    def release_token(self, cid: int) -> None:
        with self._token_lock:
            if self._token_holder == cid:
                self._token_holder = None

    def enqueue_command(self, cmd: sim.Command) -> int:
        self._inbox.put(("cmd", cmd))
        return self.world.tick

    def set_paused(self, on: bool) -> None:
        self._inbox.put(("pause", on))

    def load_scenario(self, scenario: sim.Scenario) -> None:
        self._inbox.put(("load", scenario))

    def next_snapshot(self, after_seq: int, timeout: float = 1.0):
        """Block until a snapshot newer than after_seq exists (or timeout)."""
        with self._cond:
            if self._seq <= after_seq:
                self._cond.wait(timeout)
            if self._seq > after_seq and self._latest is not None:
                return self._seq, self._latest
            return after_seq, None

    # -- sim loop ------------------------------------------------------------

    def _publish(self) -> None:
        frame = protocol.snapshot_frame(self.world, self.scenario.view_basis,
                                        list(self._recent_events))
        with self._cond:
            self._latest = frame
            self._seq += 1
            self._cond.notify_all()

    def _drain(self) -> list[sim.Command]:
        cmds = []
        while True:
            try:
                kind, payload = self._inbox.get_nowait()
            except queue.Empty:
                return cmds
            if kind == "cmd":
                cmds.append(payload)
            elif kind == "pause":
                self._paused = payload
            elif kind == "load":
                self._install(payload)

    def _run(self) -> None:
        dt = self.scenario.dt
        self._publish()
        anchor = time.perf_counter()
        anchor_tick = self.world.tick
        while not self._stop.is_set():
            cmds = self._drain()
            if self._paused and not cmds:
                time.sleep(0.01)
                anchor = time.perf_counter()
                anchor_tick = self.world.tick
                continue
            if self.scenario.dt != dt:
                dt = self.scenario.dt
                anchor, anchor_tick = time.perf_counter(), self.world.tick
            try:
                self.world, events = sim.step(self.world, cmds, graph=self.graph)
            except sim.ScenarioError:
                continue  # commands validated at the boundary; keep ticking
            self._recent_events.extend(events)
            behind = (time.perf_counter() - anchor) - \
                (self.world.tick - anchor_tick) * dt
            if self.world.tick % self._snap_every == 0 and behind < 5 * dt:
                self._publish()
            if self._realtime:
                target = anchor + (self.world.tick - anchor_tick) * dt
                delay = target - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)


def create_app(session: SimSession,
               catalog: dict[str, Path] | None = None) -> FastAPI:
    catalog = catalog if catalog is not None else scenario_catalog()

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        if not session._thread.is_alive():
            session.start()
        yield
        session.stop()

    app = FastAPI(title="vasim teleoperation server", lifespan=lifespan)
    app.state.session = session

    @app.get("/healthz")
    async def healthz():
        return {"tick": session.world.tick, "scenario": session.scenario.name}

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        send_lock = asyncio.Lock()

        async def send(frame: dict) -> None:
            async with send_lock:
                await websocket.send_text(protocol.encode(frame))

        # handshake: first frame must be a matching HELLO
        try:
            first = protocol.decode(await websocket.receive_text())
            if first["type"] != "HELLO":
                await send(protocol.error_frame("handshake",
                                                "first frame must be HELLO"))
                await websocket.close()
                return
            if first.get("protocol") != protocol.PROTOCOL_VERSION:
                await send(protocol.error_frame(
                    "version-mismatch",
                    f"server speaks {protocol.PROTOCOL_VERSION}"))
                await websocket.close()
                return
        except protocol.ProtocolError as e:
            await send(protocol.error_frame(e.code, str(e)))
            await websocket.close()
            return
        except WebSocketDisconnect:
            return

        cid, token = session.register_client()
        await send(protocol.hello_ack(sorted(catalog), token))

        async def sender():
            seq = 0  # resume from the live tick: first wait returns the latest
            while True:
                seq, frame = await asyncio.to_thread(session.next_snapshot,
                                                     seq, 0.25)
                if frame is not None:
                    await send(frame)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                text = await websocket.receive_text()
                try:
                    frame = protocol.decode(text)
                    await _handle(frame, session, catalog, cid, send)
                except protocol.ProtocolError as e:
                    await send(protocol.error_frame(e.code, str(e)))
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            session.unregister_client(cid)

    return app


async def _handle(frame: dict, session: SimSession, catalog, cid: int, send):
    kind = frame["type"]
    if kind == "HELLO":
        await send(protocol.hello_ack(sorted(catalog), session.holds_token(cid)))
        return
    if kind == "REQUEST_TOKEN":
        granted = session.request_token(cid)
        await send({"type": "ACK", "for": kind, "tick": session.world.tick,
                    "token": granted})
        return
    if kind == "RELEASE_TOKEN":
        session.release_token(cid)
        await send({"type": "ACK", "for": kind, "tick": session.world.tick,
                    "token": False})
        return
    if not session.holds_token(cid):
        raise protocol.ProtocolError("not-token-holder",
                                     "another client holds the command token")
    if kind in ("SET_FIELD", "MOVE_ARM", "TOGGLE_ASPIRATION"):
        cmd = protocol.command_from_frame(frame)
        if isinstance(cmd, sim.ToggleAspiration) and session.world.sheath is None:
            raise protocol.ProtocolError("no-sheath",
                                         "scenario has no sheath defined")
        tick = session.enqueue_command(cmd)
        await send(protocol.ack_frame(kind, tick))
        return
    if kind == "PAUSE":
        if not isinstance(frame.get("on"), bool):
            raise protocol.ProtocolError("bad-value", "PAUSE needs boolean 'on'")
        session.set_paused(frame["on"])
        await send(protocol.ack_frame(kind, session.world.tick))
        return
    if kind == "SELECT_SCENARIO":
        name = frame.get("name")
        if name not in catalog:
            raise protocol.ProtocolError("unknown-scenario",
                                         f"no scenario named {name!r}")
        scenario = sim.load_scenario(catalog[name].read_text(),
                                     catalog[name].parent)
        session.load_scenario(scenario)
        await send(protocol.ack_frame(kind, session.world.tick))
        return
    if kind == "RESET":
        session.load_scenario(session.scenario)
        await send(protocol.ack_frame(kind, session.world.tick))
        return
    raise protocol.ProtocolError("unknown-type", f"unhandled frame {kind!r}")


def create_replay_app(rows: list[sim.TrajectoryRow], speed: float = 1.0) -> FastAPI:
    """Stream a recorded trajectory as snapshots; no world mutation."""
    app = FastAPI(title="vasim replay server")

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        try:
            first = protocol.decode(await websocket.receive_text())
        except protocol.ProtocolError as e:
            await websocket.send_text(protocol.encode(
                protocol.error_frame(e.code, str(e))))
            await websocket.close()
            return
        if first["type"] != "HELLO" or first.get("protocol") != \
                protocol.PROTOCOL_VERSION:
            await websocket.send_text(protocol.encode(
                protocol.error_frame("version-mismatch",
                                     f"server speaks {protocol.PROTOCOL_VERSION}")))
            await websocket.close()
            return
        await websocket.send_text(protocol.encode(
            protocol.hello_ack([], False)))
        prev_t = None
        try:
            for row in rows:
                if prev_t is not None and speed > 0:
                    await asyncio.sleep((row.time_s - prev_t) / speed)
                prev_t = row.time_s
                await websocket.send_text(protocol.encode(replay_frame(row)))
            await websocket.send_text(protocol.encode(
                {"type": "SCENARIO_END", "tick": rows[-1].tick if rows else 0}))
        except WebSocketDisconnect:
            return

    return app


def replay_frame(row: sim.TrajectoryRow) -> dict:
    return {
        "type": "SNAPSHOT",
        "tick": row.tick,
        "time_s": row.time_s,
        "mode": row.mode,
        "field": {"magnitude_mT": row.B_mT, "frequency_rpm": row.f_rpm},
        "spinner": {"segment": row.segment, "s_mm": row.s_m * 1e3,
                    "position_mm": [row.x * 1e3, row.y * 1e3, row.z * 1e3]},
        "metrics": {"released": row.released,
                    "occlusion": {str(k): v for k, v in row.occlusion.items()}},
        "events": [],
    }
