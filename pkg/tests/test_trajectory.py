import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.errors import EmptyInputError, ParameterError
from sceneforge.geometry import BinaryMask, CameraIntrinsics, CameraPose, DepthMap
from sceneforge.trajectory import (
    Trajectory,
    collision_bound,
    interpolate,
    plan_orbit,
    plan_zoom_out,
    quat_to_rotation,
    rotation_to_quat,
    slerp,
)

from conftest import random_pose, random_rotation

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=32.0, width=64, height=64)


def rot_z(deg):
    a = np.deg2rad(deg)
    return np.array(
        [[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]]
    )


def geodesic_angle(Ra, Rb):
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


class TestQuaternions:
    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_quat_roundtrip(self, seed):
        R = random_rotation(np.random.default_rng(seed))
        np.testing.assert_allclose(quat_to_rotation(rotation_to_quat(R)), R, atol=1e-12)


class TestSlerp:
    def test_degenerate_endpoints(self):
        R = rot_z(33.0)
        for t in [0.0, 0.25, 0.8, 1.0]:
            np.testing.assert_allclose(slerp(R, R, t), R, atol=1e-12)

    def test_geodesic_midpoint(self):
        mid = slerp(np.eye(3), rot_z(90.0), 0.5)
        np.testing.assert_allclose(mid, rot_z(45.0), atol=1e-9)

    def test_antipodal_is_deterministic(self):
        a = slerp(np.eye(3), rot_z(180.0), 0.5)
        b = slerp(np.eye(3), rot_z(180.0), 0.5)
        np.testing.assert_array_equal(a, b)
        assert abs(geodesic_angle(np.eye(3), a) - np.pi / 2) < 1e-9

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_constant_angular_speed(self, seed):
        rng = np.random.default_rng(seed)
        R0, R1 = random_rotation(rng), random_rotation(rng)
        samples = [slerp(R0, R1, t) for t in np.linspace(0, 1, 9)]
        steps = [geodesic_angle(a, b) for a, b in zip(samples, samples[1:])]
        assert max(steps) - min(steps) < 1e-6


class TestInterpolate:
    def test_linear_positions(self):
        start = CameraPose.identity()
        end = CameraPose(np.eye(3), -np.array([0.0, 0.0, -8.0]))  # center (0,0,-8)
        traj = interpolate(start, end, 49, K)
        for k, pose in enumerate(traj):
            np.testing.assert_allclose(pose.camera_center[2], -8.0 * k / 48.0, atol=1e-12)

    def test_endpoints_bitwise(self, rng):
        start, end = random_pose(rng), random_pose(rng)
        traj = interpolate(start, end, 7, K, position_mode="cubic-spline")
        assert traj[0] is start and traj[6] is end

    def test_spline_passes_through_waypoints_smoothly(self):
        start = CameraPose(np.eye(3), np.zeros(3))
        end = CameraPose(np.eye(3), -np.array([4.0, 0.0, 0.0]))
        traj = interpolate(
            start, end, 9, K, position_mode="cubic-spline", waypoints=[np.array([2.0, 1.0, 0.0])]
        )
        mid = traj[4].camera_center
        np.testing.assert_allclose(mid, [2.0, 1.0, 0.0], atol=1e-9)

    def test_rejects_small_n(self):
        with pytest.raises(ParameterError):
            interpolate(CameraPose.identity(), CameraPose.identity(), 1, K)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_all_poses_orthonormal(self, seed):
        rng = np.random.default_rng(seed)
        traj = interpolate(random_pose(rng), random_pose(rng), 12, K)
        for pose in traj:
            assert np.abs(pose.rotation.T @ pose.rotation - np.eye(3)).max() < 1e-9


class TestZoomOut:
    def test_identity_final_translation(self):
        # Camera-center oracle: c = -R^T t. Backing an identity camera up by 2
        # moves the center to (0,0,-2), i.e. translation becomes (0,0,+2).
        traj = plan_zoom_out(CameraPose.identity(), travel=2.0, n=5, intrinsics=K)
        np.testing.assert_allclose(traj[-1].translation, [0.0, 0.0, 2.0], atol=1e-12)
        np.testing.assert_allclose(traj[-1].camera_center, [0.0, 0.0, -2.0], atol=1e-12)

    def test_two_frames(self, rng):
        start = random_pose(rng)
        traj = plan_zoom_out(start, travel=1.0, n=2, intrinsics=K)
        assert len(traj) == 2
        assert traj[0] is start

    def test_orientation_fixed(self, rng):
        start = random_pose(rng)
        traj = plan_zoom_out(start, travel=3.0, n=9, intrinsics=K)
        for pose in traj:
            np.testing.assert_array_equal(pose.rotation, start.rotation)

    def test_travel_matches_request(self, rng):
        start = random_pose(rng)
        traj = plan_zoom_out(start, travel=2.5, n=7, intrinsics=K)
        moved = np.linalg.norm(traj[-1].camera_center - start.camera_center)
        np.testing.assert_allclose(moved, 2.5, atol=1e-12)


class TestOrbit:
    def setup_method(self):
        self.start = CameraPose(np.eye(3), -np.array([0.0, 0.0, -2.0]))  # center (0,0,-2)
        self.pivot = np.zeros(3)

    def test_full_circle_periodicity(self):
        traj = plan_orbit(self.start, self.pivot, 360.0, 49, K)
        # Frame 48 is the 360 degree view and coincides with frame 0;
        # frame 24 is the 180 degree (far side) view.
        np.testing.assert_allclose(traj[48].camera_center, traj[0].camera_center, atol=1e-9)
        np.testing.assert_allclose(traj[24].camera_center, [0.0, 0.0, 2.0], atol=1e-9)

    def test_mirror_symmetry(self):
        left = plan_orbit(self.start, self.pivot, 180.0, 25, K)
        right = plan_orbit(self.start, self.pivot, -180.0, 25, K)
        # Reflection oracle: centers mirror across the plane spanned by the
        # up axis and the start offset (the x=0 plane here).
        for lp, rp in zip(left, right):
            lc, rc = lp.camera_center, rp.camera_center
            np.testing.assert_allclose(rc, [-lc[0], lc[1], lc[2]], atol=1e-9)

    def test_radius_constancy(self, rng):
        start = random_pose(rng)
        pivot = start.camera_center + rng.uniform(-1, 1, 3) + np.array([0.0, 0.0, 3.0])
        traj = plan_orbit(start, pivot, 270.0, 33, K)
        radii = [np.linalg.norm(p.camera_center - pivot) for p in traj]
        assert max(radii) - min(radii) < 1e-9

    def test_all_frames_aim_at_pivot(self):
        traj = plan_orbit(self.start, self.pivot, 180.0, 9, K)
        for pose in traj:
            to_pivot = self.pivot - pose.camera_center
            to_pivot /= np.linalg.norm(to_pivot)
            forward = pose.rotation[2, :]
            np.testing.assert_allclose(forward, to_pivot, atol=1e-9)

    def test_center_on_pivot_errors(self):
        start = CameraPose.identity()
        with pytest.raises(ParameterError):
            plan_orbit(start, start.camera_center, 90.0, 5, K)


class TestCollisionBound:
    def test_constant_depth(self):
        d = DepthMap.full(np.full((4, 4), 5.0))
        assert collision_bound(d, 0.8) == pytest.approx(4.0)

    def test_min_among_noise(self, rng):
        vals = rng.uniform(1.0, 9.0, (8, 8))
        vals[3, 5] = 1.0
        assert collision_bound(DepthMap.full(vals), 1.0) == pytest.approx(1.0)

    def test_invalid_only_errors(self):
        d = DepthMap(np.zeros((2, 2)), np.zeros((2, 2), bool))
        with pytest.raises(EmptyInputError):
            collision_bound(d, 0.5)

    def test_bad_safety(self):
        with pytest.raises(ParameterError):
            collision_bound(DepthMap.full(np.ones((2, 2))), 0.0)
