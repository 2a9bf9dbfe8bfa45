import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneforge.errors import ParameterError, ShapeError
from sceneforge.geometry import (
    BinaryMask,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    backproject,
    compose,
    invert,
    project,
    relative,
)

from conftest import random_pose


def identity_intrinsics():
    # fx=fy=1 with the principal point at pixel (0,0); 1x1 "image" is enough
    # for ray math since projection does not clip to bounds.
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1, height=1)


class TestTypes:
    def test_intrinsics_validation(self):
        with pytest.raises(ParameterError):
            CameraIntrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)
        with pytest.raises(ParameterError):
            CameraIntrinsics(fx=1.0, fy=1.0, cx=4.0, cy=0.0, width=4, height=4)

    def test_pose_rejects_non_rotation(self):
        with pytest.raises(ParameterError):
            CameraPose(np.eye(3) * 2.0, np.zeros(3))
        # Reflections (det = -1) are not rotations.
        with pytest.raises(ParameterError):
            CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_depth_map_sentinel(self):
        vals = np.array([[1.0, 7.0], [3.0, 4.0]])
        valid = np.array([[True, False], [True, True]])
        d = DepthMap(vals, valid)
        assert d.values[0, 1] == 0.0
        assert set(d.valid_values()) == {1.0, 3.0, 4.0}

    def test_depth_map_rejects_negative_valid(self):
        with pytest.raises(ParameterError):
            DepthMap(np.array([[-1.0]]), np.array([[True]]))
        # Negative values behind the invalid sentinel are fine.
        DepthMap(np.array([[-1.0]]), np.array([[False]]))

    def test_point_cloud_clamps_colors(self):
        from sceneforge.geometry import PointCloud

        pc = PointCloud(np.zeros((2, 3)), np.array([[2.0, -1.0, 0.5]] * 2))
        assert pc.colors.min() >= 0.0 and pc.colors.max() <= 1.0
        with pytest.raises(ShapeError):
            PointCloud(np.zeros((2, 3)), np.zeros((3, 3)))


class TestBackproject:
    def test_identity_camera_single_pixel(self):
        depth = DepthMap(np.ones((1, 1)), np.ones((1, 1), bool))
        mask = BinaryMask(np.ones((1, 1), bool))
        colors = np.zeros((1, 1, 3))
        pc = backproject(depth, mask, colors, identity_intrinsics(), CameraPose.identity())
        np.testing.assert_allclose(pc.positions, [[0.0, 0.0, 1.0]])

    def test_principal_point_ray(self):
        K = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=101, height=101)
        vals = np.zeros((101, 101))
        vals[50, 50] = 2.0
        valid = vals > 0
        depth = DepthMap(vals, valid)
        mask = BinaryMask(valid)
        pc = backproject(depth, mask, np.zeros((101, 101, 3)), K, CameraPose.identity())
        np.testing.assert_allclose(pc.positions, [[0.0, 0.0, 2.0]])

    def test_count_equals_popcount(self, rng):
        K = CameraIntrinsics(fx=80.0, fy=90.0, cx=8.0, cy=7.0, width=16, height=16)
        valid = rng.random((16, 16)) > 0.3
        depth = DepthMap(rng.uniform(0.5, 4.0, (16, 16)), valid)
        mask_vals = valid & (rng.random((16, 16)) > 0.5)
        mask = BinaryMask(mask_vals)
        pc = backproject(depth, mask, rng.random((16, 16, 3)), K, random_pose(rng))
        assert len(pc) == mask.popcount()

    def test_mask_on_invalid_depth_errors(self):
        depth = DepthMap(np.zeros((2, 2)), np.zeros((2, 2), bool))
        mask = BinaryMask(np.ones((2, 2), bool))
        K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2)
        with pytest.raises(ParameterError):
            backproject(depth, mask, np.zeros((2, 2, 3)), K, CameraPose.identity())

    def test_shape_mismatch_errors(self):
        depth = DepthMap(np.ones((2, 2)), np.ones((2, 2), bool))
        mask = BinaryMask(np.ones((2, 3), bool))
        K = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2)
        with pytest.raises(ShapeError):
            backproject(depth, mask, np.zeros((2, 2, 3)), K, CameraPose.identity())

    def test_roundtrip_random_camera(self, rng):
        # Oracle: project(backproject(D)) must reproduce pixel coords and
        # depth for every masked pixel.
        K = CameraIntrinsics(fx=73.0, fy=91.0, cx=7.2, cy=8.8, width=16, height=16)
        valid = rng.random((16, 16)) > 0.2
        depth = DepthMap(rng.uniform(0.5, 5.0, (16, 16)), valid)
        mask = BinaryMask(valid)
        pose = random_pose(rng)
        pc = backproject(depth, mask, rng.random((16, 16, 3)), K, pose)
        pix, z, ok = project(pc.positions, K, pose)
        vv, uu = np.nonzero(valid)
        assert ok.all()
        np.testing.assert_allclose(pix[:, 0], uu, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(pix[:, 1], vv, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(z, depth.values[vv, uu], rtol=1e-6)


class TestProject:
    def test_on_axis(self):
        pix, z, ok = project(np.array([0.0, 0.0, 1.0]), identity_intrinsics(), CameraPose.identity())
        assert ok
        np.testing.assert_allclose(pix, [0.0, 0.0])
        assert z == 1.0

    def test_behind_camera_flag(self):
        pix, z, ok = project(
            np.array([0.0, 0.0, -1.0]), identity_intrinsics(), CameraPose.identity()
        )
        assert not ok
        assert np.isnan(pix).all()

    def test_rejects_nonfinite(self):
        with pytest.raises(ParameterError):
            project(np.array([np.nan, 0.0, 1.0]), identity_intrinsics(), CameraPose.identity())


class TestPoseOps:
    def test_invert_identity(self):
        inv = invert(CameraPose.identity())
        np.testing.assert_array_equal(inv.rotation, np.eye(3))
        np.testing.assert_array_equal(inv.translation, np.zeros(3))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_compose_with_inverse_is_identity(self, seed):
        rng = np.random.default_rng(seed)
        a = random_pose(rng)
        ident = compose(a, invert(a))
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-9)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_relative_matches_algebra(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pose(rng), random_pose(rng)
        rel = relative(a, b)
        expected = compose(b, invert(a))
        np.testing.assert_allclose(rel.rotation, expected.rotation, atol=1e-12)
        np.testing.assert_allclose(rel.translation, expected.translation, atol=1e-12)
        # relative(a, b) maps a-frame coordinates to b-frame coordinates.
        x_world = rng.uniform(-2, 2, 3)
        x_a = a.rotation @ x_world + a.translation
        x_b = b.rotation @ x_world + b.translation
        np.testing.assert_allclose(rel.rotation @ x_a + rel.translation, x_b, atol=1e-9)

    def test_orthonormality_drift_after_1000_compositions(self):
        rng = np.random.default_rng(7)
        pose = CameraPose.identity()
        for _ in range(1000):
            pose = compose(pose, random_pose(rng))
        R = pose.rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
