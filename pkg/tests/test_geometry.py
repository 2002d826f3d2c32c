import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsesplat.geometry import (CameraError, CameraView, camera_embedding, depth_candidates, epipolar_locations,
                                  look_at, project, rotation_from_quaternion, sweep_sample, unproject)
from sparsesplat.numerics import bilinear_sample


class TestDepthCandidates:
    def test_single(self):
        np.testing.assert_array_equal(depth_candidates(1.0, 1.0, 1), [1.0])

    def test_three(self):
        np.testing.assert_allclose(depth_candidates(1, 100, 3), 1 / np.linspace(1, 0.01, 3))
        assert depth_candidates(1, 100, 3)[1] == pytest.approx(1.9802, abs=1e-4)

    def test_large_count(self):
        c = depth_candidates(1.0, 100.0, 128)
        assert len(c) == 128

    @pytest.mark.parametrize("args", [(0.0, 1.0, 4), (2.0, 1.0, 4), (1.0, 2.0, 0)])
    def test_bad_args(self, args):
        with pytest.raises(ValueError):
            depth_candidates(*args)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 10), st.floats(1.001, 100), st.integers(2, 256))
    def test_increasing_and_endpoint_exact(self, near, ratio, D):
        far = near * ratio
        c = depth_candidates(near, far, D)
        assert c[0] == near and c[-1] == far
        assert np.all(np.diff(c) > 0)
        np.testing.assert_allclose(np.diff(1 / c), np.diff(1 / c)[0], rtol=1e-9, atol=1e-12)


class TestCamera:
    def test_reflection_rejected(self):
        T = np.diag([1.0, 1.0, -1.0, 1.0])
        with pytest.raises(CameraError, match="det"):
            CameraView.from_params(10, 10, 5, 5, 10, 10, T)

    def test_non_orthonormal_rejected(self):
        T = np.eye(4)
        T[0, 1] = 0.1
        with pytest.raises(CameraError, match="orthonormal"):
            CameraView.from_params(10, 10, 5, 5, 10, 10, T)

    def test_negative_focal_rejected(self):
        with pytest.raises(CameraError):
            CameraView.from_params(-10, 10, 5, 5, 10, 10)

    def test_scaled_intrinsics(self, square_cam):
        q = square_cam.scaled(0.25)
        assert (q.width, q.height, q.fx, q.cx) == (16, 16, 16.0, 8.0)

    def test_look_at_is_rigid(self):
        T = look_at((1, 2, 3), (0, 0, 10))
        R = T[:3, :3]
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        np.testing.assert_allclose(R[:, 2], np.array([-1, -2, 7]) / np.linalg.norm([-1, -2, 7]))


class TestProjection:
    def test_principal_ray(self, square_cam):
        np.testing.assert_allclose(unproject(32.0, 32.0, 3.0, square_cam), [0, 0, 3])

    def test_pinhole(self, square_cam):
        np.testing.assert_allclose(unproject(32.0 + 64.0, 32.0, 1.0, square_cam), [1, 0, 1])

    def test_project_axis(self, square_cam):
        uv, z, ok = project(np.array([0.0, 0, 5]), square_cam)
        np.testing.assert_allclose(uv, [32, 32])
        assert z == 5 and ok

    def test_translated_pose(self, square_cam):
        T = np.eye(4)
        T[2, 3] = -2
        _, z, _ = project(np.array([0.0, 0, 5]), square_cam.with_pose(T))
        assert z == pytest.approx(7)

    def test_behind_camera(self, square_cam):
        uv, z, ok = project(np.array([0.0, 0, -1]), square_cam)
        assert not ok and np.isnan(uv).all()

    def test_round_trip_many(self, rng):
        q = rng.normal(size=4)
        T = np.eye(4)
        T[:3, :3] = rotation_from_quaternion(q)
        T[:3, 3] = rng.normal(size=3)
        cam = CameraView.from_params(70, 60, 31, 29, 64, 64, T, 0.5, 50)
        u = rng.uniform(0, 64, 10_000)
        v = rng.uniform(0, 64, 10_000)
        d = rng.uniform(0.5, 50, 10_000)
        uv, z, ok = project(unproject(u, v, d, cam), cam)
        assert ok.all()
        assert np.max(np.abs(uv - np.stack([u, v], 1))) < 1e-6
        assert np.max(np.abs(z - d)) < 1e-6


class TestSweep:
    def test_self_warp_identity(self, square_cam, rng):
        cam = square_cam.scaled(0.25)
        F = rng.normal(size=(16, 16, 5)).astype(np.float32)
        cand = depth_candidates(1, 10, 7)
        vals, mask = sweep_sample(F, cam, cam, cand)
        assert mask.all()
        np.testing.assert_allclose(vals, np.broadcast_to(F[:, :, None, :], vals.shape), atol=1e-5)

    def test_single_pixel_chain(self, stereo_pair, rng):
        ci, cj = (c.scaled(0.25) for c in stereo_pair)
        F = rng.normal(size=(16, 16, 4))
        cand = depth_candidates(1, 10, 9)
        vals, mask = sweep_sample(F, ci, cj, cand)
        px, py, k = 9, 6, 4
        world = unproject(px + 0.5, py + 0.5, cand[k], ci)
        uv, _, _ = project(world, cj)
        expect, _ = bilinear_sample(F, uv[0] - 0.5, uv[1] - 0.5)
        assert mask[py, px, k] == 1
        np.testing.assert_allclose(vals[py, px, k], expect, atol=1e-6)

    def test_out_of_view_zero(self, rng):
        a = CameraView.from_params(16, 16, 8, 8, 16, 16, None, 1, 10)
        T = np.eye(4)
        T[0, 3] = 50.0
        b = a.with_pose(T)
        vals, mask = sweep_sample(rng.normal(size=(16, 16, 3)), a, b, depth_candidates(1, 10, 4))
        assert not mask.any()
        assert not vals.any()

    def test_mask_matches_bounds_and_front(self, stereo_pair, rng):
        ci, cj = (c.scaled(0.25) for c in stereo_pair)
        cand = depth_candidates(1, 10, 6)
        _, mask = sweep_sample(rng.normal(size=(16, 16, 2)), ci, cj, cand)
        x, y, ok = epipolar_locations(ci, cj, cand)
        inside = ok & (x >= 0) & (x <= 15) & (y >= 0) & (y <= 15)
        np.testing.assert_array_equal(mask.astype(bool), inside)


class TestEmbedding:
    def test_identity_pose(self):
        cam = CameraView.from_params(32, 32, 16, 16, 32, 32, None, 0.5, 20)
        expect = [1, 1, 0.5, 0.5, *np.eye(3).reshape(-1), 0, 0, 0, 0.5, 20]
        np.testing.assert_allclose(camera_embedding(cam), expect)

    def test_length_and_determinism(self, stereo_pair):
        a, b = stereo_pair
        assert camera_embedding(a).shape == (18,)
        np.testing.assert_array_equal(camera_embedding(a), camera_embedding(a.with_pose(a.world_from_camera)))
        assert not np.array_equal(camera_embedding(a), camera_embedding(b))
