"""Real-time autoregressive controller and the streaming service.

Block cadence: generate 45 frames, play them, keep the last 10 as the next
past window. The command state (velocity + facing, world frame) integrates a
critically damped first-order spring toward the input's target velocity
(walk 1.2 m/s, sprint 3.0 m/s, half-life 0.25 s); each block's desired
trajectory is that integration expressed in the canonical frame of the last
past frame, so the commanded path re-anchors to the character every block.

The service runs exactly two workers: a generation worker owning the model
and controller state, and an I/O worker owning the socket. They exchange
immutable block buffers and input snapshots through a bounded queue; a block
that is not ready when playback needs it counts as a deadline miss and the
stream holds the last pose instead of stalling.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .conditioning import (
    ConditionBundle,
    PersonaSpec,
    TextEmbedding,
    clamp_condition,
    get_provider,
)
from .config import Config, RuntimeConfig
from .denoiser import DenoiserModel
from .diffusion import sample_block
from .errors import NonFiniteActivation, PersonaLocoError
from .kinematics import Pose, ShapeVector, Skeleton, rest_pose, skeleton_from_shape
from .motion_data import (
    FUTURE_LEN,
    PAST_LEN,
    GroundFrame,
    MotionClip,
    canonicalize_window,
    decode_features,
    encode_feature_frames,
)

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class InputState:
    """One frame of control input, in world ground coordinates."""

    move: np.ndarray | None = None  # (2,) unit-ish direction or None for idle
    sprint: bool = False
    facing_deg: float | None = None

    @staticmethod
    def from_wire(doc: dict) -> "InputState":
        move = doc.get("move")
        if move is not None:
            move = np.asarray(move, dtype=np.float64)
            if move.shape != (2,):
                raise PersonaLocoError("move must be a 2-vector")
            n = np.linalg.norm(move)
            if n > 1.0:
                move = move / n
        facing = doc.get("facing")
        return InputState(
            move=move,
            sprint=bool(doc.get("sprint", False)),
            facing_deg=None if facing is None else float(facing),
        )

    @staticmethod
    def from_script_frame(doc: dict) -> "InputState":
        move = doc.get("move")
        facing = doc.get("facing_deg")
        return InputState(
            move=None if move is None else np.asarray(move, dtype=np.float64),
            sprint=bool(doc.get("sprint", False)),
            facing_deg=None if facing is None else float(facing),
        )


def _rot2d(gf: GroundFrame) -> np.ndarray:
    """Ground-plane 2x2 rotation of a GroundFrame (acts on (x, z))."""
    return np.array([[gf.yaw[0, 0], gf.yaw[0, 2]], [gf.yaw[2, 0], gf.yaw[2, 2]]])


def _wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def control_to_trajectory(
    inputs: list[InputState],
    init_vel: np.ndarray,
    init_facing: np.ndarray,
    rt: RuntimeConfig,
    horizon: int = FUTURE_LEN,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Integrate the command spring over `horizon` frames.

    All quantities live in one ground frame (the caller decides which).
    inputs shorter than the horizon are extended by holding the last state.
    Returns (positions (h,2), facings (h,2), end_vel (2,), end_facing (2,)).
    """
    dt = 1.0 / rt.fps
    k = 1.0 - 0.5 ** (dt / rt.spring_halflife_s)
    v = init_vel.astype(np.float64).copy()
    facing_ang = math.atan2(init_facing[0], init_facing[1])
    pos = np.zeros(2)
    out_pos = np.empty((horizon, 2))
    out_face = np.empty((horizon, 2))
    last = inputs[-1] if inputs else InputState()
    for i in range(horizon):
        inp = inputs[i] if i < len(inputs) else last
        if inp.move is None:
            v_tgt = np.zeros(2)
        else:
            v_tgt = inp.move * (rt.sprint_speed if inp.sprint else rt.walk_speed)
        v = v + (v_tgt - v) * k
        pos = pos + v * dt
        if inp.facing_deg is not None:
            facing_ang = math.radians(inp.facing_deg)
        elif np.linalg.norm(v) > 0.05:
            tgt = math.atan2(v[0], v[1])
            facing_ang = facing_ang + _wrap_angle(tgt - facing_ang) * k
        out_pos[i] = pos
        out_face[i] = (math.sin(facing_ang), math.cos(facing_ang))
    return out_pos, out_face, v, np.array([math.sin(facing_ang), math.cos(facing_ang)])


@dataclass
class ControllerState:
    """Everything the generation worker owns between blocks."""

    persona: PersonaSpec
    skeleton: Skeleton
    past_poses: list[Pose]           # last PAST_LEN world-frame poses
    rng: np.random.Generator
    cmd_vel: np.ndarray = field(default_factory=lambda: np.zeros(2))     # world m/s
    cmd_facing: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    block_index: int = 0
    last_block_ms: float = 0.0
    deadline_misses: int = 0


def warm_start(
    model: DenoiserModel, persona: PersonaSpec, seed: int
) -> ControllerState:
    """Initialize the past window from the persona's resting stance.

    The rest state of a locomotion model is standing (feet planted, knees
    soft), built with the same planted-feet kinematics the data uses; a
    zero-rotation T-pose would be outside every training distribution.
    """
    from .motion_data import GaitSpec, synth_gait

    skeleton = skeleton_from_shape(persona.beta, model.template, model.blend_matrix)
    idle, _ = synth_gait(
        GaitSpec(speed=0.0, bob_amp_m=0.0), n_frames=PAST_LEN, skeleton=skeleton
    )
    poses = [idle.pose(i) for i in range(PAST_LEN)]
    return ControllerState(
        persona=persona,
        skeleton=skeleton,
        past_poses=poses,
        rng=np.random.default_rng(seed),
    )


def step_controller(
    state: ControllerState,
    model: DenoiserModel,
    cfg: Config,
    inputs: list[InputState],
) -> tuple[list[Pose], np.ndarray, ControllerState]:
    """Generate one block in world space and roll the state forward.

    Returns the frames to play: the full 45 in normal cadence, or the first
    22 in the config-gated low-latency overlap mode (the tail is discarded
    and regenerated next block). On NonFiniteActivation the controller
    freezes on the last pose for a full block and returns empty features as
    the error signal.
    """
    t0 = time.perf_counter()
    past_pos = np.stack([p.root_position for p in state.past_poses])
    past_rot = np.stack([p.joint_rotations for p in state.past_poses])
    cpos, crot, gf = canonicalize_window(past_pos, past_rot, PAST_LEN - 1)
    past_feats = encode_feature_frames(cpos, crot)

    r2 = _rot2d(gf)
    canon_inputs = []
    for inp in inputs[:FUTURE_LEN]:
        move = None if inp.move is None else r2 @ inp.move
        facing = inp.facing_deg
        if facing is not None:
            fw = math.radians(facing)
            fv = r2 @ np.array([math.sin(fw), math.cos(fw)])
            facing = math.degrees(math.atan2(fv[0], fv[1]))
        canon_inputs.append(InputState(move=move, sprint=inp.sprint, facing_deg=facing))
    if not canon_inputs:
        canon_inputs = [InputState()]

    traj_pos, traj_face, end_vel, end_face = control_to_trajectory(
        canon_inputs, r2 @ state.cmd_vel, r2 @ state.cmd_facing, cfg.runtime
    )
    bundle = ConditionBundle(
        past=clamp_condition(model.stats.normalize(past_feats)),
        traj_pos=traj_pos,
        traj_facing=traj_face,
        beta=state.persona.beta.beta.copy(),
        text=state.persona.embedding.vec.copy(),
    )
    # warm-up block: the rest-pose past is no training past, so the first
    # block samples through the past-agnostic branch (gamma 0) and every
    # later block conditions on real generated motion
    gamma = 0.0 if state.block_index == 0 else cfg.diff.gamma
    try:
        block = sample_block(
            model, bundle, gamma, state.rng, model.schedule, cfg.diff.blend_M
        )
        o_c, r_c = decode_features(block, state.skeleton.num_joints)
    except NonFiniteActivation:
        hold = state.past_poses[-1]
        poses = [hold] * FUTURE_LEN
        new_state = replace(state, block_index=state.block_index + 1)
        new_state.last_block_ms = (time.perf_counter() - t0) * 1000.0
        return poses, np.empty((0, past_feats.shape[1])), new_state

    inv = gf.inverse()
    o_w = inv.apply_points(o_c)
    r_w = r_c.copy()
    r_w[:, 0, :] = inv.apply_rotations(r_c[:, 0, :])
    poses = [Pose(o_w[i].copy(), r_w[i].copy()) for i in range(FUTURE_LEN)]

    keep = 22 if cfg.runtime.overlap_mode else FUTURE_LEN
    kept = poses[:keep]
    if keep < FUTURE_LEN:
        # the command state must only advance as far as the kept frames
        tp, tf, end_vel, end_face = control_to_trajectory(
            canon_inputs, r2 @ state.cmd_vel, r2 @ state.cmd_facing,
            cfg.runtime, horizon=keep,
        )
    r2_inv = r2.T
    new_state = replace(
        state,
        past_poses=kept[-PAST_LEN:],
        cmd_vel=r2_inv @ end_vel,
        cmd_facing=r2_inv @ end_face,
        block_index=state.block_index + 1,
    )
    new_state.last_block_ms = (time.perf_counter() - t0) * 1000.0
    return kept, block[:keep], new_state


def generate_scripted_clip(
    model: DenoiserModel,
    persona: PersonaSpec,
    script_frames: list[InputState],
    cfg: Config,
    seed: int,
) -> MotionClip:
    """Offline controller run over a full input script (deterministic)."""
    state = warm_start(model, persona, seed)
    n = len(script_frames)
    poses: list[Pose] = []
    i = 0
    while i < n:
        inputs = script_frames[i : i + FUTURE_LEN]
        block, _, state = step_controller(state, model, cfg, inputs)
        poses.extend(block)
        i += len(block)
    poses = poses[:n]
    return MotionClip(
        skeleton_id=persona.persona_id,
        fps=cfg.runtime.fps,
        root_positions=np.stack([p.root_position for p in poses]),
        rotations=np.stack([p.joint_rotations for p in poses]),
        persona_id=persona.persona_id,
    )


def open_loop_target(
    script_frames: list[InputState], rt: RuntimeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """World-frame commanded trajectory for the whole script (the eval target)."""
    pos, face, _, _ = control_to_trajectory(
        script_frames,
        np.zeros(2),
        np.array([0.0, 1.0]),
        rt,
        horizon=len(script_frames),
    )
    return pos, face


# ---------------------------------------------------------------------------
# Streaming service: newline-delimited JSON over TCP, one client per session.

class _Session:
    def __init__(self, conn: socket.socket):
        self.conn = conn
        self.seq = 0
        self.lock = threading.Lock()

    def send(self, doc: dict) -> None:
        with self.lock:
            doc = dict(doc)
            doc["seq"] = self.seq
            self.seq += 1
            try:
                self.conn.sendall((json.dumps(doc) + "\n").encode("utf-8"))
            except OSError:
                raise ConnectionError("client went away")


class Service:
    """Long-running server around one model; accepts one client at a time."""

    def __init__(self, model: DenoiserModel, personas: list[PersonaSpec], cfg: Config):
        if not personas:
            raise PersonaLocoError("service needs at least one persona")
        self.model = model
        self.personas = personas
        self.cfg = cfg
        self._stop = threading.Event()
        self._provider = get_provider()

    def stop(self) -> None:
        self._stop.set()

    def serve(self, host: str, port: int, seed: int = 0, max_sessions: int | None = None) -> None:
        srv = socket.create_server((host, port))
        srv.settimeout(0.5)
        sessions = 0
        try:
            while not self._stop.is_set():
                if max_sessions is not None and sessions >= max_sessions:
                    break
                try:
                    conn, _ = srv.accept()
                except socket.timeout:
                    continue
                sessions += 1
                try:
                    self._run_session(conn, seed)
                finally:
                    conn.close()
        finally:
            srv.close()

    # -- session plumbing ---------------------------------------------------

    def _run_session(self, conn: socket.socket, seed: int) -> None:
        session = _Session(conn)
        input_lock = threading.Lock()
        shared = {
            "input": InputState(),
            "persona": self.personas[0],
            "persona_changed": False,
            "seed": None,
        }
        stop_session = threading.Event()

        def reader():
            buf = b""
            conn.settimeout(0.5)
            while not stop_session.is_set():
                try:
                    chunk = conn.recv(4096)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    try:
                        self._handle_message(json.loads(line), shared, input_lock, session)
                    except json.JSONDecodeError:
                        try:
                            session.send({"type": "error", "code": "bad_json",
                                          "detail": "malformed JSON"})
                        except ConnectionError:
                            pass
                        stop_session.set()
                        return
            stop_session.set()

        reader_t = threading.Thread(target=reader, daemon=True)
        reader_t.start()
        try:
            self._stream(session, shared, input_lock, stop_session, seed)
        except ConnectionError:
            pass
        finally:
            stop_session.set()
            reader_t.join(timeout=2.0)

    def _handle_message(self, doc, shared, lock, session) -> None:
        mtype = doc.get("type")
        if mtype == "control":
            try:
                inp = InputState.from_wire(doc)
            except PersonaLocoError as e:
                session.send({"type": "error", "code": "bad_control", "detail": str(e)})
                return
            with lock:
                shared["input"] = inp
        elif mtype == "persona":
            try:
                persona = self._persona_from_wire(doc)
            except PersonaLocoError as e:
                session.send({"type": "error", "code": "bad_persona", "detail": str(e)})
                return
            with lock:
                shared["persona"] = persona
                shared["persona_changed"] = True
        elif mtype == "seed":
            with lock:
                shared["seed"] = int(doc.get("value", 0))
        else:
            session.send({"type": "error", "code": "bad_type",
                          "detail": f"unknown message type {mtype!r}"})

    def _persona_from_wire(self, doc) -> PersonaSpec:
        beta = doc.get("beta")
        if beta is None or len(beta) != 10:
            raise PersonaLocoError("persona message needs beta[10]")
        pid = doc.get("persona_id", "custom")
        for p in self.personas:
            if p.persona_id == pid and doc.get("text") is None and doc.get("embedding") is None:
                return p
        text = doc.get("text") or "custom persona"
        if doc.get("embedding") is not None:
            emb = TextEmbedding(np.asarray(doc["embedding"], dtype=np.float64))
        else:
            emb = self._provider.embed_text(text)
        try:
            return PersonaSpec(
                persona_id=pid,
                beta=ShapeVector(np.asarray(beta, dtype=np.float64)),
                text=text,
                embedding=emb,
                identifier_token=doc.get("identifier"),
            )
        except ValueError as e:
            raise PersonaLocoError(str(e)) from e

    def _stream(self, session, shared, lock, stop_session, seed) -> None:
        cfg = self.cfg
        fps = cfg.runtime.fps
        with lock:
            persona = shared["persona"]
        state = warm_start(self.model, persona, seed)

        session.send({"type": "skeleton", "version": PROTOCOL_VERSION, "fps": fps,
                      "joint_names": list(state.skeleton.joint_names),
                      "parents": list(state.skeleton.parent_index),
                      "offsets": state.skeleton.rest_offsets.tolist(),
                      "foot_indices": list(state.skeleton.foot_joint_indices)})
        session.send({"type": "presets", "personas": [
            {"persona_id": p.persona_id, "beta": p.beta.beta.tolist(), "text": p.text}
            for p in self.personas
        ]})

        blocks: queue.Queue = queue.Queue(maxsize=1)

        def generator():
            gen_state = state
            while not stop_session.is_set():
                with lock:
                    inp = shared["input"]
                    if shared["persona_changed"]:
                        persona_new = shared["persona"]
                        shared["persona_changed"] = False
                        skel = skeleton_from_shape(
                            persona_new.beta, self.model.template, self.model.blend_matrix
                        )
                        # past buffer retained across the switch for continuity
                        gen_state = replace(gen_state, persona=persona_new, skeleton=skel)
                    if shared["seed"] is not None:
                        gen_state = replace(
                            gen_state, rng=np.random.default_rng(shared["seed"])
                        )
                        shared["seed"] = None
                poses, feats, gen_state = step_controller(
                    gen_state, self.model, cfg, [inp] * FUTURE_LEN
                )
                if feats.size == 0:
                    try:
                        session.send({"type": "error", "code": "nonfinite",
                                      "detail": "denoiser output non-finite; holding pose"})
                    except ConnectionError:
                        return
                while not stop_session.is_set():
                    try:
                        blocks.put((poses, gen_state.persona.persona_id,
                                    gen_state.last_block_ms), timeout=0.2)
                        break
                    except queue.Full:
                        continue

        gen_t = threading.Thread(target=generator, daemon=True)
        gen_t.start()

        current: list[Pose] = []
        current_pid = persona.persona_id
        frame_idx = 0
        misses = 0
        last_pose: Pose | None = None
        next_due = time.perf_counter()
        frame_period = 1.0 / fps
        try:
            while not stop_session.is_set():
                if not current:
                    try:
                        current, current_pid, block_ms = blocks.get_nowait()
                        session.send({"type": "status", "block_ms": block_ms,
                                      "persona_id": current_pid,
                                      "deadline_misses": misses})
                    except queue.Empty:
                        if last_pose is None:
                            time.sleep(frame_period / 4)
                            next_due = time.perf_counter()
                            continue
                        misses += 1
                        current = [last_pose]
                pose = current.pop(0)
                last_pose = pose
                session.send({
                    "type": "frames",
                    "start_index": frame_idx,
                    "fps": fps,
                    "poses": [{
                        "root": [round(v, 6) for v in pose.root_position.tolist()],
                        "rot6d": np.round(pose.joint_rotations, 6).tolist(),
                    }],
                })
                frame_idx += 1
                next_due += frame_period
                delay = next_due - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
        finally:
            stop_session.set()
            gen_t.join(timeout=2.0)
