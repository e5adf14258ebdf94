import numpy as np
import pytest

from muralbot.scenario import desk_scenario
from muralbot.server import CAPTURE_SPEED_LIMIT, ConsoleCore
from muralbot.wire import (
    SeqCounter,
    SeqValidator,
    WireMessage,
    decode_message,
    encode_message,
)
from muralbot.errors import PreconditionError


class TestWireFormat:
    def test_roundtrip(self):
        msg = WireMessage("JoystickCmd", 7, 1.25, {"vx": 0.1, "vy": -0.05, "deadman": True})
        line = encode_message(msg)
        assert line.endswith("\n")
        back = decode_message(line)
        assert back.type == msg.type
        assert back.seq == msg.seq
        assert back.payload["vx"] == pytest.approx(0.1)

    def test_malformed_rejected(self):
        with pytest.raises(PreconditionError):
            decode_message("not json\n")
        with pytest.raises(PreconditionError):
            decode_message('{"type": "Nope", "seq": 0, "t": 0}')
        with pytest.raises(PreconditionError):
            decode_message('{"type": "EStop", "seq": 0}')  # missing t

    def test_seq_counter_and_validator(self):
        c = SeqCounter()
        assert [c.take() for _ in range(3)] == [0, 1, 2]
        v = SeqValidator()
        assert v.check(0) and v.check(5)
        assert not v.check(5)
        assert not v.check(2)


def make_core(seed=0, **kwargs):
    sc = desk_scenario(seed=seed, noise_std=1e-4, disturbance_std=0.0)
    return ConsoleCore(sc, np.random.default_rng(seed), **kwargs)


def client_msg(seq, msg_type, payload=None):
    return WireMessage(msg_type, seq, 0.0, payload or {})


class TestConsoleCore:
    def test_mode_transitions_acked(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        out = core.tick(0.01)
        acks = [m for m in out if m.type == "ModeAck"]
        assert acks and acks[0].payload["ok"]
        assert core.mode == "manual"
        core.submit(client_msg(1, "SetMode", {"mode": "auto"}))
        out = core.tick(0.01)
        assert not [m for m in out if m.type == "ModeAck"][0].payload["ok"]

    def test_joystick_moves_platform(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        x0 = core.estimate.copy()
        seq = 1
        for _ in range(300):  # 3 s at full right stick, refreshed each tick
            core.submit(client_msg(seq, "JoystickCmd", {"vx": 0.1, "vy": 0.0, "deadman": True}))
            core.tick(0.01)
            seq += 1
        assert core.estimate[0] - x0[0] > 0.15

    def test_joystick_clamped_to_manual_limit(self):
        core = make_core(manual_speed_limit=0.1)
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        core.submit(client_msg(1, "JoystickCmd", {"vx": 5.0, "vy": 0.0, "deadman": True}))
        core.tick(0.01)
        assert np.linalg.norm(core.setpoint) <= 0.1 + 1e-12

    def test_no_deadman_ignored(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        core.submit(client_msg(1, "JoystickCmd", {"vx": 0.1, "vy": 0.0, "deadman": False}))
        core.tick(0.01)
        assert np.allclose(core.setpoint, 0.0)

    def test_autozero_after_250ms(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        core.submit(client_msg(1, "JoystickCmd", {"vx": 0.1, "vy": 0.0, "deadman": True}))
        core.tick(0.01)
        assert np.linalg.norm(core.setpoint) > 0
        for _ in range(26):  # 260 ms without fresh commands
            core.tick(0.01)
        assert np.allclose(core.setpoint, 0.0)

    def test_capture_requires_manual_and_stillness(self):
        core = make_core()
        core.submit(client_msg(0, "CapturePoint", {"grid_id": 0}))
        out = core.tick(0.01)
        ack = [m for m in out if m.type == "CaptureAck"][0]
        assert not ack.payload["ok"] and "manual" in ack.payload["error"]

        core.submit(client_msg(1, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        core.est_velocity = np.array([0.02, 0.0])  # moving
        core.submit(client_msg(2, "CapturePoint", {"grid_id": 0}))
        out = core.tick(0.01)
        ack = [m for m in out if m.type == "CaptureAck"][0]
        assert not ack.payload["ok"] and "still" in ack.payload["error"]

    def test_capture_stores_and_overwrites(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        for _ in range(50):
            core.tick(0.01)  # settle so velocity estimate is quiet
        core.submit(client_msg(1, "CapturePoint", {"grid_id": 4}))
        out = core.tick(0.01)
        ack = [m for m in out if m.type == "CaptureAck"][0]
        assert ack.payload["ok"] and not ack.payload["overwrote"]
        assert np.allclose(ack.payload["true"], core.grid_true[4])
        core.submit(client_msg(2, "CapturePoint", {"grid_id": 4}))
        out = core.tick(0.01)
        ack = [m for m in out if m.type == "CaptureAck"][0]
        assert ack.payload["ok"] and ack.payload["overwrote"]
        assert len(core.captured) == 1

    def test_estop_aborts_within_one_tick(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        core.submit(client_msg(1, "EStop", {}))
        out = core.tick(0.01)
        alarms = [m for m in out if m.type == "Alarm"]
        assert alarms and alarms[0].payload["reason"] == "estop"
        assert core.session_state == "Aborted"
        t = core.telemetry()
        assert t.payload["session"] == "Aborted"

    def test_estop_descends_gently(self):
        core = make_core()
        core.submit(client_msg(0, "EStop", {}))
        core.tick(0.01)
        h0 = core.sim.state.position[1]
        heights = []
        for _ in range(2000):  # 20 s
            core.tick(0.01)
            heights.append(core.sim.state.position[1])
        assert heights[-1] < h0  # descending
        # gentle: no free fall (bounded descent rate)
        rates = np.diff(np.asarray(heights)) / 0.01
        assert np.all(rates > -0.25)

    def test_telemetry_echoes_acked_seq(self):
        core = make_core()
        core.submit(client_msg(41, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        assert core.telemetry().payload["acked_seq"] == 41
        core.submit(client_msg(42, "JoystickCmd", {"vx": 0, "vy": 0, "deadman": True}))
        core.tick(0.01)
        assert core.telemetry().payload["acked_seq"] == 42

    def test_joystick_mailbox_drops_oldest(self):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        for seq, vx in ((1, 0.01), (2, 0.02), (3, 0.03)):
            core.submit(client_msg(seq, "JoystickCmd", {"vx": vx, "vy": 0, "deadman": True}))
        core.tick(0.01)
        # only the newest command is acted on
        assert core.setpoint[0] == pytest.approx(0.03)
        assert core.acked_seq == 3

    def test_export_captures(self, tmp_path):
        core = make_core()
        core.submit(client_msg(0, "SetMode", {"mode": "manual"}))
        core.tick(0.01)
        for _ in range(50):
            core.tick(0.01)
        core.submit(client_msg(1, "CapturePoint", {"grid_id": 0}))
        core.tick(0.01)
        path = tmp_path / "pts.csv"
        core.export_captures(path)
        text = path.read_text().splitlines()
        assert text[0] == "grid_id,true_x,true_y,est_x,est_y"
        assert len(text) == 2
