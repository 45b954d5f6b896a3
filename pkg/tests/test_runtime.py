import json
import math
import socket
import threading
import time

import numpy as np
import pytest

from personaloco.conditioning import PersonaSpec
from personaloco.config import desk_config
from personaloco.diffusion import make_schedule
from personaloco.kinematics import ShapeVector, default_skeleton
from personaloco.motion_data import FUTURE_LEN, NormStats
from personaloco.runtime import (
    ControllerState,
    InputState,
    Service,
    control_to_trajectory,
    generate_scripted_clip,
    open_loop_target,
    step_controller,
    warm_start,
)


class ZeroRng:
    def standard_normal(self, shape):
        return np.zeros(shape)


class PlaybackModel:
    """Stub denoiser that always predicts one fixed canonical gait block."""

    def __init__(self, window, stats, template, blend):
        self.stats = stats
        self.block = stats.normalize(window.future)
        self.schedule = make_schedule(4, 0.3, 0.95)
        self.template = template
        self.blend_matrix = blend

    def predict_x0(self, x_t, t, bundle, drop_past=False):
        return self.block.copy()


@pytest.fixture()
def playback_model(gait_windows, gait_stats, template_and_blend):
    tmpl, blend = template_and_blend
    return PlaybackModel(gait_windows[4], gait_stats, tmpl, blend)


@pytest.fixture()
def rt_cfg():
    return desk_config()


class TestControlToTrajectory:
    def test_idle_stays_at_origin(self, rt_cfg):
        pos, face, v, f = control_to_trajectory(
            [InputState()] * FUTURE_LEN, np.zeros(2), np.array([0.0, 1.0]), rt_cfg.runtime
        )
        assert np.abs(pos).max() == 0.0
        assert np.allclose(face, [0.0, 1.0])
        assert np.abs(v).max() == 0.0

    def test_steady_state_spacing(self, rt_cfg):
        rt = rt_cfg.runtime
        inp = [InputState(move=np.array([0.0, 1.0]))] * FUTURE_LEN
        pos, face, v, _ = control_to_trajectory(
            inp, np.array([0.0, rt.walk_speed]), np.array([0.0, 1.0]), rt
        )
        steps = np.diff(np.concatenate([[0.0], pos[:, 1]]))
        assert np.allclose(steps, rt.walk_speed / rt.fps, atol=1e-12)
        assert np.abs(pos[:, 0]).max() == 0.0

    def test_sprint_speed_approached(self, rt_cfg):
        rt = rt_cfg.runtime
        inp = [InputState(move=np.array([0.0, 1.0]), sprint=True)] * 90
        _, _, v, _ = control_to_trajectory(inp, np.zeros(2), np.array([0.0, 1.0]), rt, horizon=90)
        assert abs(np.linalg.norm(v) - rt.sprint_speed) < 0.02

    def test_facing_cmd_instant(self, rt_cfg):
        inp = [InputState(facing_deg=90.0)] * FUTURE_LEN
        pos, face, _, _ = control_to_trajectory(
            inp, np.zeros(2), np.array([0.0, 1.0]), rt_cfg.runtime
        )
        assert np.abs(pos).max() == 0.0
        assert np.allclose(face, [1.0, 0.0], atol=1e-12)

    def test_facing_follows_movement(self, rt_cfg):
        inp = [InputState(move=np.array([1.0, 0.0]))] * 120
        _, face, _, f_end = control_to_trajectory(
            inp, np.zeros(2), np.array([0.0, 1.0]), rt_cfg.runtime, horizon=120
        )
        assert np.allclose(f_end, [1.0, 0.0], atol=0.02)


class TestInputWire:
    def test_w_key(self):
        inp = InputState.from_wire({"type": "control", "move": [0, 1], "sprint": False})
        assert np.allclose(inp.move, [0, 1]) and not inp.sprint

    def test_diagonal_normalized(self):
        inp = InputState.from_wire({"move": [1, 1]})
        assert abs(np.linalg.norm(inp.move) - 1.0) < 1e-9

    def test_bad_move_shape(self):
        from personaloco.errors import PersonaLocoError

        with pytest.raises(PersonaLocoError):
            InputState.from_wire({"move": [1, 2, 3]})


class TestStepController:
    def test_deterministic(self, playback_model, persona_zero, rt_cfg):
        outs = []
        for _ in range(2):
            state = warm_start(playback_model, persona_zero, seed=3)
            poses, block, state = step_controller(
                state, playback_model, rt_cfg, [InputState(move=np.array([0.0, 1.0]))] * FUTURE_LEN
            )
            outs.append(np.stack([p.root_position for p in poses]))
        assert np.array_equal(outs[0], outs[1])

    def test_block_shape_and_state_roll(self, playback_model, persona_zero, rt_cfg):
        state = warm_start(playback_model, persona_zero, seed=0)
        poses, block, state2 = step_controller(state, playback_model, rt_cfg, [InputState()])
        assert len(poses) == FUTURE_LEN
        assert block.shape[0] == FUTURE_LEN
        assert state2.block_index == 1
        assert all(
            np.array_equal(a.root_position, b.root_position)
            for a, b in zip(state2.past_poses, poses[-10:])
        )

    def test_reanchoring_matches_displacement_integration(
        self, gait_stats, persona_zero, rt_cfg, template_and_blend
    ):
        """Composing canonical anchors over many blocks must equal direct
        integration of the block's root displacements by an independent
        2D oracle. An arc gait makes the yaw composition nontrivial."""
        from personaloco.kinematics import ShapeVector
        from personaloco.motion_data import (
            GaitSpec,
            decode_features,
            extract_windows,
            ground_facing,
            synth_gait,
        )

        tmpl, blend = template_and_blend
        clip, _ = synth_gait(GaitSpec(path="arc", arc_radius_m=2.5), n_frames=120)
        w = extract_windows(clip, 10, beta=ShapeVector.zeros(), text_key="p")[2]
        model = PlaybackModel(w, gait_stats, tmpl, blend)

        state = warm_start(model, persona_zero, seed=0)
        n_blocks = 100
        world_roots = []
        for _ in range(n_blocks):
            state.rng = ZeroRng()  # posterior-mean path: each block is exactly w.future
            poses, _, state = step_controller(state, model, rt_cfg, [InputState()])
            world_roots.extend(p.root_position for p in poses)
        world_roots = np.stack(world_roots)

        o_c, r_c = decode_features(w.future, tmpl.num_joints)
        f_end = ground_facing(r_c[-1, 0])
        yaw_step = math.atan2(f_end[0], f_end[1])
        pivot_offset = o_c[-1, [0, 2]]

        def m2(theta):
            return np.array([[math.cos(theta), math.sin(theta)],
                             [-math.sin(theta), math.cos(theta)]])

        theta = 0.0
        anchor = np.zeros(2)  # warm start: rest pose above the origin, facing +z
        expected = []
        for _ in range(n_blocks):
            rot = m2(theta)
            for i in range(FUTURE_LEN):
                xz = anchor + rot @ o_c[i, [0, 2]]
                expected.append([xz[0], o_c[i, 1], xz[1]])
            anchor = anchor + rot @ pivot_offset
            theta = theta + yaw_step
        expected = np.asarray(expected)
        drift = np.abs(world_roots - expected).max()
        assert drift < 1e-6

    def test_overlap_mode_keeps_22(self, playback_model, persona_zero, rt_cfg):
        from dataclasses import replace as dc_replace

        cfg = desk_config()
        cfg.runtime.overlap_mode = True
        state = warm_start(playback_model, persona_zero, seed=0)
        poses, block, state2 = step_controller(state, playback_model, cfg, [InputState()])
        assert len(poses) == 22
        assert block.shape[0] == 22
        assert all(
            np.array_equal(a.root_position, b.root_position)
            for a, b in zip(state2.past_poses, poses[-10:])
        )
        script = [InputState(move=np.array([0.0, 1.0]))] * 100
        clip = generate_scripted_clip(playback_model, persona_zero, script, cfg, seed=1)
        assert clip.num_frames == 100

    def test_scripted_clip_deterministic(self, playback_model, persona_zero, rt_cfg):
        script = [InputState(move=np.array([0.0, 1.0]))] * 135
        c1 = generate_scripted_clip(playback_model, persona_zero, script, rt_cfg, seed=9)
        c2 = generate_scripted_clip(playback_model, persona_zero, script, rt_cfg, seed=9)
        assert np.array_equal(c1.root_positions, c2.root_positions)
        assert c1.num_frames == 135

    def test_open_loop_target_idle(self, rt_cfg):
        pos, face = open_loop_target([InputState()] * 200, rt_cfg.runtime)
        assert np.abs(pos).max() == 0.0


class WireClient:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.f = self.sock.makefile("rwb")

    def send(self, doc):
        self.f.write((json.dumps(doc) + "\n").encode())
        self.f.flush()

    def send_raw(self, raw: bytes):
        self.f.write(raw)
        self.f.flush()

    def recv(self, timeout=5.0):
        self.sock.settimeout(timeout)
        line = self.f.readline()
        if not line:
            raise ConnectionError("closed")
        return json.loads(line)

    def close(self):
        self.sock.close()


@pytest.fixture()
def service(playback_model, persona_zero, rt_cfg):
    second = PersonaSpec(
        "p1", ShapeVector(np.eye(10)[0] * 0.5), "second persona",
        persona_zero.embedding,
    )
    svc = Service(playback_model, [persona_zero, second], rt_cfg)
    port = 7401 + int(np.random.default_rng().integers(0, 500))
    th = threading.Thread(
        target=svc.serve, args=("127.0.0.1", port),
        kwargs={"max_sessions": 1}, daemon=True,
    )
    th.start()
    time.sleep(0.2)
    yield svc, port
    svc.stop()
    th.join(timeout=3.0)


class TestService:
    def test_handshake_and_stream(self, service):
        _, port = service
        c = WireClient(port)
        first = c.recv()
        assert first["type"] == "skeleton" and len(first["joint_names"]) == 24
        second = c.recv()
        assert second["type"] == "presets" and len(second["personas"]) == 2
        seqs = [first["seq"], second["seq"]]
        frames = 0
        while frames < 50:
            msg = c.recv()
            seqs.append(msg["seq"])
            if msg["type"] == "frames":
                frames += 1
                assert len(msg["poses"]) == 1
                assert len(msg["poses"][0]["rot6d"]) == 24
        assert seqs == sorted(seqs)
        c.close()

    def test_persona_switch_and_errors(self, service):
        _, port = service
        c = WireClient(port)
        c.recv(), c.recv()
        c.send({"type": "persona", "beta": [0, 0]})  # bad length
        c.send({"type": "persona", "persona_id": "p1", "beta": list(np.zeros(10))})
        got_error = False
        switched = False
        deadline = time.time() + 15.0
        while time.time() < deadline and not (got_error and switched):
            msg = c.recv()
            if msg["type"] == "error" and msg["code"] == "bad_persona":
                got_error = True
            if msg["type"] == "status" and msg["persona_id"] == "p1":
                switched = True
        assert got_error and switched
        c.close()

    def test_malformed_json_closes_with_error(self, service):
        _, port = service
        c = WireClient(port)
        c.recv(), c.recv()
        c.send_raw(b"this is not json\n")
        saw_error = False
        try:
            deadline = time.time() + 5.0
            while time.time() < deadline:
                msg = c.recv(timeout=2.0)
                if msg["type"] == "error" and msg["code"] == "bad_json":
                    saw_error = True
                    break
        except (ConnectionError, OSError):
            pass
        assert saw_error
        c.close()
