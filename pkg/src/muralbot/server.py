"""Operator console server: manual-mode joystick control, calibration point
capture, pause/resume/E-stop, and 10 Hz telemetry.

``ConsoleCore`` is the transport-free heart: it consumes decoded wire
messages, advances the simulation at the coordination rate, and emits
outbound frames.  ``serve`` wraps it in asyncio with two listeners --
newline-JSON over TCP for scripted clients, and a minimal WebSocket
endpoint (text frames, RFC 6455 server side) for the browser console.

Joystick handling follows the safety contract: commands without the
deadman flag are ignored entirely, and the velocity setpoint auto-zeros
after 250 ms (simulation time) without a valid command.  Full-rate
traces stay on the server; the console only ever sees the 10 Hz stream.
"""

from __future__ import annotations

import asyncio
import base64
import hashlib
from collections import deque
from pathlib import Path

import numpy as np

from .control import PidGains, PidState, SafetyState, TensionLimits, dual_space_pid, safety_monitor
from .coordination import EventLog
from .errors import PreconditionError
from .geometry import PlatformState, WinchModel
from .runner import estimate_state_from_measurement
from .scenario import Scenario
from .simulator import Simulator
from .wire import CLIENT_TYPES, SeqCounter, WireMessage, decode_message, encode_message

Array = np.ndarray

JOYSTICK_TIMEOUT_S = 0.25
CAPTURE_SPEED_LIMIT = 0.005  # m/s
TELEMETRY_PERIOD_S = 0.1


class ConsoleCore:
    """Transport-free console logic driven by tick()."""

    def __init__(
        self,
        scenario: Scenario,
        rng: np.random.Generator,
        manual_speed_limit: float = 0.10,
        expose_truth: bool = False,
        grid_shape: tuple[int, int] = (3, 3),
    ):
        self.sc = scenario
        self.sim = Simulator(scenario.geom, scenario.sim, scenario.home, rng)
        self.calibrated = scenario.calibrated
        self.limits = scenario.limits
        self.manual_speed_limit = manual_speed_limit
        self.expose_truth = expose_truth
        self.mode = "idle"
        self.session_state = "Idle"
        self.seq = SeqCounter()
        self.acked_seq = -1
        self.paused = False
        self.aborted = False
        self.log = EventLog()

        # manual-mode controller state
        self.pid = PidState()
        self.pid_gains = PidGains()
        self.target = self.sim.state.position.copy()
        self.setpoint = np.zeros(2)
        self.last_joy_time = -1e9
        self.estimate, self.est_velocity = estimate_state_from_measurement(
            self.sim, scenario.geom, self.calibrated
        )
        self.last_u = np.zeros(4)

        # capture grid: true mullion-style marks over the canvas region
        r, c = grid_shape
        gx = np.linspace(scenario.canvas_origin[0], scenario.canvas_origin[0] + scenario.canvas_width, c)
        gy = np.linspace(scenario.canvas_origin[1], scenario.canvas_origin[1] + scenario.canvas_height, r)
        self.grid_true = {
            i * c + j: np.array([gx[j], gy[i]]) for i in range(r) for j in range(c)
        }
        self.captured: dict[int, tuple[Array, Array]] = {}

        # drop-oldest joystick mailbox, everything else in arrival order
        self.joystick_box: deque[WireMessage] = deque(maxlen=1)
        self.command_box: deque[WireMessage] = deque()

    # -- inbound ----------------------------------------------------------

    def submit(self, msg: WireMessage) -> None:
        if msg.type not in CLIENT_TYPES:
            raise PreconditionError(f"client sent a server-only type {msg.type!r}")
        if msg.type == "JoystickCmd":
            self.joystick_box.append(msg)
        else:
            self.command_box.append(msg)

    def _make(self, msg_type: str, payload: dict) -> WireMessage:
        return WireMessage(msg_type, self.seq.take(), self.sim.time, payload)

    def _handle_command(self, msg: WireMessage) -> list[WireMessage]:
        out: list[WireMessage] = []
        self.acked_seq = msg.seq
        if msg.type == "SetMode":
            mode = msg.payload.get("mode")
            if mode not in ("manual", "auto", "idle"):
                out.append(self._make("ModeAck", {"ok": False, "error": f"unknown mode {mode!r}"}))
            elif mode == "auto":
                out.append(self._make("ModeAck", {"ok": False, "error": "no program loaded"}))
            elif self.aborted:
                out.append(self._make("ModeAck", {"ok": False, "error": "aborted; restart the server"}))
            else:
                self.mode = mode
                if mode == "manual":
                    self.target = self.estimate.copy()
                    self.pid = PidState()
                self.session_state = "Idle"
                out.append(self._make("ModeAck", {"ok": True, "mode": mode}))
                self.log.add(self.sim.time, "mode", mode)
        elif msg.type == "CapturePoint":
            out.append(self._capture(msg))
        elif msg.type == "Pause":
            self.paused = True
            self.session_state = "Paused"
            out.append(self._make("ModeAck", {"ok": True, "paused": True}))
        elif msg.type == "Resume":
            self.paused = False
            if not self.aborted:
                self.session_state = "Idle"
            out.append(self._make("ModeAck", {"ok": True, "paused": False}))
        elif msg.type == "EStop":
            self.aborted = True
            self.mode = "idle"
            self.session_state = "Aborted"
            self.log.add(self.sim.time, "estop", "operator")
            out.append(self._make("Alarm", {"reason": "estop", "seq": msg.seq}))
        return out

    def _capture(self, msg: WireMessage) -> WireMessage:
        if self.mode != "manual":
            return self._make("CaptureAck", {"ok": False, "error": "capture requires manual mode"})
        speed = float(np.linalg.norm(self.est_velocity))
        if speed > CAPTURE_SPEED_LIMIT:
            return self._make(
                "CaptureAck",
                {"ok": False, "error": f"robot moving at {speed * 1000:.1f} mm/s; hold still"},
            )
        payload = msg.payload
        if "grid_id" in payload:
            gid = int(payload["grid_id"])
            if gid not in self.grid_true:
                return self._make("CaptureAck", {"ok": False, "error": f"unknown grid id {gid}"})
            true_pos = self.grid_true[gid]
        else:
            gid = -1
            true_pos = np.array([float(payload["x"]), float(payload["y"])])
        overwrote = gid in self.captured
        self.captured[gid] = (true_pos.copy(), self.estimate.copy())
        self.log.add(self.sim.time, "capture", f"grid={gid} est={self.estimate.round(4).tolist()}")
        return self._make(
            "CaptureAck",
            {
                "ok": True,
                "grid_id": gid,
                "true": true_pos.tolist(),
                "estimate": self.estimate.tolist(),
                "overwrote": overwrote,
                "count": len(self.captured),
            },
        )

    # -- simulation tick ---------------------------------------------------

    def tick(self, dt: float) -> list[WireMessage]:
        """Process queued commands, advance dt of simulation, and return
        outbound frames (acks first, then telemetry when due)."""
        out: list[WireMessage] = []
        while self.command_box:
            out.extend(self._handle_command(self.command_box.popleft()))

        joy = self.joystick_box.pop() if self.joystick_box else None
        if joy is not None:
            self.acked_seq = joy.seq
            if bool(joy.payload.get("deadman")):
                v = np.array([float(joy.payload.get("vx", 0)), float(joy.payload.get("vy", 0))])
                speed = np.linalg.norm(v)
                if speed > self.manual_speed_limit:
                    v = v * (self.manual_speed_limit / speed)
                self.setpoint = v
                self.last_joy_time = self.sim.time
            # commands without the deadman are ignored entirely

        if self.sim.time - self.last_joy_time > JOYSTICK_TIMEOUT_S:
            self.setpoint = np.zeros(2)

        from .control import gravity_compensation

        steps = max(int(round(dt / self.sim.config.timestep)), 1)
        if self.aborted:
            # gently let the platform down, then hold at the floor
            landed = self.estimate[1] <= self.sc.geom.workspace_margin + 0.01
            u, _ = gravity_compensation(
                self.estimate, self.sc.geom, self.sim.config.platform_mass,
                self.limits, descent_force=0.0 if landed else 0.2,
                gravity=self.sim.config.gravity,
            )
            m = self.sim.measure()
            u = self.limits.clip(u + 30.0 * (m.cable_velocities / self.sc.geom.routing_ratio))
            self.last_u = u
            for _ in range(steps):
                self.sim.step(u, check_escape=False)
        elif self.paused:
            for _ in range(steps):
                self.sim.step(self.last_u)
        elif self.mode == "manual":
            lo, hi = self.sc.geom.workspace_bounds()
            self.target = np.clip(self.target + self.setpoint * dt, lo, hi)
            u, _ = dual_space_pid(
                self.target, self.setpoint, PlatformState(self.estimate, self.est_velocity),
                self.sc.geom, self.limits, self.pid_gains, self.pid, dt,
                self.sim.config.platform_mass, self.sim.config.gravity,
            )
            self.last_u = u
            for _ in range(steps):
                self.sim.step(u)
        else:  # idle: hold with gravity compensation
            u, _ = gravity_compensation(
                self.estimate, self.sc.geom, self.sim.config.platform_mass,
                self.limits, descent_force=0.0, gravity=self.sim.config.gravity,
            )
            self.last_u = u
            for _ in range(steps):
                self.sim.step(u)

        est, vel = estimate_state_from_measurement(
            self.sim, self.sc.geom, self.calibrated, x0=self.estimate
        )
        self.est_velocity = 0.5 * self.est_velocity + 0.5 * vel
        self.estimate = est
        self.sim.update_temps(False, dt)
        return out

    def telemetry(self) -> WireMessage:
        safety = safety_monitor(self.estimate, self.target if self.mode == "manual" else self.estimate)
        payload = {
            "mode": self.mode,
            "session": self.session_state,
            "estimate": self.estimate.round(6).tolist(),
            "velocity": self.est_velocity.round(6).tolist(),
            "tensions": self.last_u.round(3).tolist(),
            "temps": self.sim.servo_temps.round(2).tolist(),
            "safety": safety.value,
            "acked_seq": self.acked_seq,
            "captured": len(self.captured),
            "frame": [self.sc.geom.frame_width, self.sc.geom.frame_height],
            "canvas": [
                *self.sc.canvas_origin.tolist(),
                self.sc.canvas_width, self.sc.canvas_height,
            ],
            "grid": {str(k): v.tolist() for k, v in self.grid_true.items()},
        }
        if self.expose_truth:
            payload["true"] = self.sim.state.position.round(6).tolist()
        return self._make("StateUpdate", payload)

    def export_captures(self, path: str | Path) -> None:
        """Captured pairs in the calibration point-file format."""
        import csv

        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["grid_id", "true_x", "true_y", "est_x", "est_y"])
            for gid in sorted(self.captured):
                t, e = self.captured[gid]
                w.writerow([gid, f"{t[0]:.9f}", f"{t[1]:.9f}", f"{e[0]:.9f}", f"{e[1]:.9f}"])


# -- asyncio transports ---------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _ws_accept_key(key: str) -> str:
    return base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()


def _ws_encode_text(data: str) -> bytes:
    payload = data.encode()
    n = len(payload)
    if n < 126:
        return bytes([0x81, n]) + payload
    if n < 65536:
        return bytes([0x81, 126]) + n.to_bytes(2, "big") + payload
    return bytes([0x81, 127]) + n.to_bytes(8, "big") + payload


async def _ws_read_frame(reader: asyncio.StreamReader) -> str | None:
    head = await reader.readexactly(2)
    opcode = head[0] & 0x0F
    masked = bool(head[1] & 0x80)
    length = head[1] & 0x7F
    if length == 126:
        length = int.from_bytes(await reader.readexactly(2), "big")
    elif length == 127:
        length = int.from_bytes(await reader.readexactly(8), "big")
    mask = await reader.readexactly(4) if masked else b"\x00" * 4
    payload = bytearray(await reader.readexactly(length))
    if masked:
        for i in range(length):
            payload[i] ^= mask[i % 4]
    if opcode == 0x8:  # close
        return None
    if opcode in (0x1, 0x2):
        return payload.decode()
    return ""  # ping/pong/continuation: ignore


class ConsoleServer:
    """Asyncio wrapper: TCP on ``port``, WebSocket on ``port + 1``."""

    def __init__(self, core: ConsoleCore, host: str = "127.0.0.1", port: int = 8765, pace: float = 0.0):
        self.core = core
        self.host = host
        self.port = port
        self.pace = pace  # 0 = free-run, 1 = real time
        self.clients: set[asyncio.Queue] = set()
        self._stop = asyncio.Event()

    def broadcast(self, msg: WireMessage) -> None:
        line = encode_message(msg)
        for q in list(self.clients):
            if q.qsize() < 500:
                q.put_nowait(line)

    async def _sim_loop(self):
        dt = 1.0 / self.core.sc.session.coordination_rate
        last_telemetry = -1e9
        while not self._stop.is_set():
            for msg in self.core.tick(dt):
                self.broadcast(msg)
            if self.core.sim.time - last_telemetry >= TELEMETRY_PERIOD_S - 1e-9:
                self.broadcast(self.core.telemetry())
                last_telemetry = self.core.sim.time
            await asyncio.sleep(dt * self.pace if self.pace > 0 else 0)

    async def _handle_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        outbox: asyncio.Queue = asyncio.Queue()
        self.clients.add(outbox)

        async def pump_out():
            try:
                while True:
                    line = await outbox.get()
                    writer.write(line.encode())
                    await writer.drain()
            except (ConnectionError, asyncio.CancelledError):
                pass

        out_task = asyncio.create_task(pump_out())
        try:
            while True:
                line = await reader.readline()
                if not line:
                    break
                try:
                    self.core.submit(decode_message(line.decode()))
                except PreconditionError:
                    continue  # malformed frames are dropped, not fatal
        finally:
            self.clients.discard(outbox)
            out_task.cancel()
            writer.close()

    async def _handle_ws(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        # minimal HTTP upgrade handshake
        request = await reader.readuntil(b"\r\n\r\n")
        headers = {}
        for raw in request.decode().split("\r\n")[1:]:
            if ":" in raw:
                k, v = raw.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        key = headers.get("sec-websocket-key")
        if not key:
            writer.close()
            return
        writer.write(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n"
            ).encode()
        )
        await writer.drain()

        outbox: asyncio.Queue = asyncio.Queue()
        self.clients.add(outbox)

        async def pump_out():
            try:
                while True:
                    line = await outbox.get()
                    writer.write(_ws_encode_text(line.rstrip("\n")))
                    await writer.drain()
            except (ConnectionError, asyncio.CancelledError):
                pass

        out_task = asyncio.create_task(pump_out())
        try:
            while True:
                text = await _ws_read_frame(reader)
                if text is None:
                    break
                if text:
                    try:
                        self.core.submit(decode_message(text))
                    except PreconditionError:
                        continue
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            self.clients.discard(outbox)
            out_task.cancel()
            writer.close()

    async def run(self):
        tcp = await asyncio.start_server(self._handle_tcp, self.host, self.port)
        ws = await asyncio.start_server(self._handle_ws, self.host, self.port + 1)
        sim_task = asyncio.create_task(self._sim_loop())
        try:
            await self._stop.wait()
        finally:
            sim_task.cancel()
            tcp.close()
            ws.close()

    def stop(self):
        self._stop.set()
