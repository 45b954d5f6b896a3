import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from personaloco.errors import (
    DegenerateRotation,
    DegenerateShape,
    NotARotation,
    ParseError,
    VersionMismatch,
)
from personaloco.kinematics import (
    Pose,
    ShapeVector,
    Skeleton,
    default_skeleton,
    forward_kinematics,
    leg_length,
    load_skeleton,
    rot6d_decode,
    rot6d_encode,
    save_skeleton,
    skeleton_from_shape,
)


def axis_angle_rotation(axis, angle):
    """Independent rotation-matrix oracle (Rodrigues form)."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


class TestRot6d:
    def test_identity(self):
        assert np.allclose(rot6d_decode(np.array([1, 0, 0, 0, 1, 0.0])), np.eye(3))

    def test_90deg_about_z(self):
        # columns (0,1,0) and (-1,0,0): composed by hand this is Rz(90deg)
        m = rot6d_decode(np.array([0, 1, 0, -1, 0, 0.0]))
        expected = axis_angle_rotation([0, 0, 1], math.pi / 2)
        assert np.allclose(m, expected)
        assert np.allclose(m @ m.T, np.eye(3))

    def test_gram_schmidt_case(self):
        # [2,0,0, 1,1,0]: normalize -> (1,0,0); orthogonalize -> (0,1,0); cross -> (0,0,1)
        m = rot6d_decode(np.array([2, 0, 0, 1, 1, 0.0]))
        assert np.allclose(m, np.eye(3))

    def test_encode_identity(self):
        assert np.allclose(rot6d_encode(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_roundtrip_1000_random_rotations(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            axis = rng.normal(size=3)
            angle = rng.uniform(-math.pi, math.pi)
            m = axis_angle_rotation(axis, angle)
            m2 = rot6d_decode(rot6d_encode(m))
            worst = max(worst, np.abs(m2 - m).max())
        assert worst < 1e-6

    def test_reflection_rejected(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(NotARotation):
            rot6d_encode(m)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateRotation):
            rot6d_decode(np.array([0, 0, 0, 0, 1, 0.0]))
        with pytest.raises(DegenerateRotation):
            rot6d_decode(np.array([1, 0, 0, 2, 0, 0.0]))  # parallel columns

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_decode_always_orthonormal(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=6)
        try:
            m = rot6d_decode(r)
        except DegenerateRotation:
            return
        assert np.abs(m.T @ m - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(m) - 1.0) < 1e-9


def chain_skeleton(offsets):
    """Straight chain with the given per-joint offsets; joint 0 is root."""
    j = len(offsets)
    return Skeleton(
        joint_names=tuple(f"j{i}" for i in range(j)),
        parent_index=tuple([-1] + list(range(j - 1))),
        rest_offsets=np.asarray(offsets, dtype=np.float64),
        foot_joint_indices=(j - 1,),
        leg_upper_indices=(1,) if j > 1 else (0,),
        leg_lower_indices=(j - 1,) if j > 2 else (0,),
    )


def fk_oracle(pose, skeleton):
    """Brute-force FK: explicit prefix products along each joint's path."""
    j = skeleton.num_joints
    mats = [rot6d_decode(pose.joint_rotations[i]) for i in range(j)]
    out = np.zeros((j, 3))
    for i in range(j):
        path = []
        k = i
        while k != -1:
            path.append(k)
            k = skeleton.parent_index[k]
        path.reverse()  # root ... i
        pos = pose.root_position.copy()
        rot = np.eye(3)
        for depth, node in enumerate(path):
            if depth > 0:
                pos = pos + rot @ skeleton.rest_offsets[node]
            rot = rot @ mats[node]
        out[i] = pos
    return out


class TestForwardKinematics:
    def test_one_bone_identity(self):
        skel = chain_skeleton([[0, 0, 0], [0, -0.5, 0]])
        pose = Pose(np.zeros(3), np.tile([1, 0, 0, 0, 1, 0.0], (2, 1)))
        pos = forward_kinematics(pose, skel)
        assert np.allclose(pos[1], [0, -0.5, 0])

    def test_two_bone_root_rotated(self):
        # root rotated 90deg about z, offsets (1,0,0): manual composition puts
        # the children at (0,1,0) and (0,2,0)
        skel = chain_skeleton([[0, 0, 0], [1, 0, 0], [1, 0, 0]])
        rz = axis_angle_rotation([0, 0, 1], math.pi / 2)
        rots = np.tile([1, 0, 0, 0, 1, 0.0], (3, 1))
        rots[0] = rot6d_encode(rz)
        pos = forward_kinematics(Pose(np.zeros(3), rots), skel)
        assert np.allclose(pos[1], [0, 1, 0], atol=1e-12)
        assert np.allclose(pos[2], [0, 2, 0], atol=1e-12)

    def test_translation_equivariance(self):
        skel, _ = default_skeleton()
        rng = np.random.default_rng(1)
        rots = np.stack([
            rot6d_encode(axis_angle_rotation(rng.normal(size=3), rng.uniform(-1, 1)))
            for _ in range(skel.num_joints)
        ])
        t = np.array([1.5, -0.3, 2.0])
        p1 = forward_kinematics(Pose(np.zeros(3), rots), skel)
        p2 = forward_kinematics(Pose(t, rots), skel)
        assert np.allclose(p2, p1 + t)

    @given(st.integers(2, 5), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_fk_matches_bruteforce_oracle(self, n_joints, seed):
        rng = np.random.default_rng(seed)
        offsets = np.vstack([np.zeros(3), rng.normal(scale=0.4, size=(n_joints - 1, 3))])
        skel = chain_skeleton(offsets)
        rots = np.stack([
            rot6d_encode(axis_angle_rotation(rng.normal(size=3), rng.uniform(-math.pi, math.pi)))
            for _ in range(n_joints)
        ])
        pose = Pose(rng.normal(size=3), rots)
        assert np.abs(forward_kinematics(pose, skel) - fk_oracle(pose, skel)).max() < 1e-9


class TestShapeRegressor:
    def test_zero_shape_is_template(self, template_and_blend):
        skel, blend = template_and_blend
        out = skeleton_from_shape(ShapeVector.zeros(), skel, blend)
        assert np.allclose(out.rest_offsets, skel.rest_offsets)

    def test_leg_scaling_column(self, template_and_blend):
        skel, _ = template_and_blend
        j = skel.num_joints
        blend = np.zeros((3 * j, 10))
        for ji in (4, 5, 7, 8):
            blend[3 * ji : 3 * ji + 3, 0] = 0.10 * skel.rest_offsets[ji]
        out = skeleton_from_shape(ShapeVector(np.eye(10)[0]), skel, blend)
        l0, l1 = leg_length(skel), leg_length(out)
        assert math.isclose(l1["upper"], 1.1 * l0["upper"], rel_tol=1e-12)
        assert math.isclose(l1["lower"], 1.1 * l0["lower"], rel_tol=1e-12)

    def test_degenerate_shape_rejected(self, template_and_blend):
        skel, _ = template_and_blend
        j = skel.num_joints
        blend = np.zeros((3 * j, 10))
        blend[3 * 4 : 3 * 4 + 3, 0] = -skel.rest_offsets[4]  # beta=1 zeroes the thigh
        with pytest.raises(DegenerateShape):
            skeleton_from_shape(ShapeVector(np.eye(10)[0]), skel, blend)

    def test_linearity_in_beta(self, template_and_blend):
        skel, blend = template_and_blend
        rng = np.random.default_rng(2)
        b1, b2 = rng.normal(scale=0.3, size=10), rng.normal(scale=0.3, size=10)
        a, b = 0.7, -0.4
        f = lambda v: skeleton_from_shape(ShapeVector(v), skel, blend).rest_offsets
        lhs = f(a * b1 + b * b2)
        rhs = a * f(b1) + b * f(b2) - (a + b - 1) * f(np.zeros(10))
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestLegLength:
    def test_constructed_template(self):
        skel = chain_skeleton([[0, 0, 0], [0, -0.45, 0], [0, -0.42, 0]])
        ll = leg_length(skel)
        assert math.isclose(ll["upper"], 0.45) and math.isclose(ll["lower"], 0.42)

    def test_uniform_scale_doubles(self, template_and_blend):
        skel, _ = template_and_blend
        from dataclasses import replace

        scaled = replace(skel, rest_offsets=skel.rest_offsets * 2.0)
        l0, l1 = leg_length(skel), leg_length(scaled)
        assert math.isclose(l1["upper"], 2 * l0["upper"])
        assert math.isclose(l1["lower"], 2 * l0["lower"])

    def test_empty_segment_rejected(self):
        with pytest.raises(ValueError):
            Skeleton(
                joint_names=("a", "b"),
                parent_index=(-1, 0),
                rest_offsets=np.array([[0.0, 0, 0], [0, -1.0, 0]]),
                foot_joint_indices=(1,),
                leg_upper_indices=(),
                leg_lower_indices=(1,),
            )


class TestSkeletonFile:
    def test_roundtrip(self, template_and_blend, tmp_path):
        skel, blend = template_and_blend
        path = tmp_path / "skeleton.json"
        save_skeleton(path, skel, blend)
        skel2, blend2 = load_skeleton(path)
        assert skel2.joint_names == skel.joint_names
        assert np.array_equal(skel2.rest_offsets, skel.rest_offsets)
        assert np.array_equal(blend2, blend)

    def test_bad_version(self, template_and_blend, tmp_path):
        import json

        skel, blend = template_and_blend
        path = tmp_path / "skeleton.json"
        save_skeleton(path, skel, blend)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(VersionMismatch):
            load_skeleton(path)

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "skeleton.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_skeleton(path)
