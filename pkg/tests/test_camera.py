"""Camera model: log planes, projection round trips, pose algebra, file IO."""

import math

import numpy as np
import pytest

from sweeprecon.camera import (Camera, DepthPlanes, Intrinsics, Pose,
                               load_intrinsics, load_pose, make_log_planes,
                               project, project_array, rotation_angle_deg,
                               save_intrinsics, save_pose, unproject,
                               unproject_array)
from sweeprecon.errors import BehindCameraError


def random_pose(rng) -> Pose:
    # QR of a random matrix, det fixed to +1
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Pose(q, rng.uniform(-2, 2, 3))


K = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


class TestLogPlanes:
    def test_paper_endpoints(self):
        p = make_log_planes(0.25, 5.0, 64)
        assert p.values[0] == 0.25
        assert p.values[-1] == 5.0
        assert p.count == 64

    def test_two_point_progression(self):
        p = make_log_planes(1.0, math.e, 2)
        np.testing.assert_allclose(p.values, [1.0, math.e], rtol=1e-15)

    def test_closed_form_interior_value(self):
        # independent evaluation of D_32 = d_min * (d_max/d_min)^(31/63)
        expected = 0.25 * (5.0 / 0.25) ** (31 / 63)
        p = make_log_planes(0.25, 5.0, 64)
        assert abs(p.values[31] - expected) < 1e-12
        assert abs(expected - 1.0918) < 1e-4  # sanity anchor

    def test_constant_log_ratio(self):
        p = make_log_planes(0.25, 5.0, 64)
        ratios = p.values[1:] / p.values[:-1]
        assert np.abs(np.log(ratios) - np.log(ratios[0])).max() < 1e-9

    def test_plane_coordinate_inverts_spacing(self):
        p = make_log_planes(0.25, 5.0, 64)
        coords = p.plane_coordinate(p.values)
        np.testing.assert_allclose(coords, np.arange(64), atol=1e-9)
        depths = p.depth_at(coords)
        np.testing.assert_allclose(depths, p.values, rtol=1e-12)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            make_log_planes(0.0, 5.0, 64)
        with pytest.raises(ValueError):
            make_log_planes(5.0, 5.0, 64)
        with pytest.raises(ValueError):
            make_log_planes(0.25, 5.0, 1)


class TestProjection:
    def test_principal_ray(self):
        cam = Camera(K, Pose.identity())
        np.testing.assert_allclose(unproject(cam, (50, 50), 1.0), [0, 0, 1], atol=1e-12)

    def test_one_focal_length_offset(self):
        cam = Camera(K, Pose.identity())
        np.testing.assert_allclose(unproject(cam, (150, 50), 2.0), [2, 0, 2], atol=1e-12)

    def test_translation_pose(self):
        # hand computation: R = I, t = (1, 0, 0); X = I * (0, 0, 3) + t
        cam = Camera(K, Pose(np.eye(3), np.array([1.0, 0, 0])))
        np.testing.assert_allclose(unproject(cam, (50, 50), 3.0), [1, 0, 3], atol=1e-12)

    def test_project_center(self):
        cam = Camera(K, Pose.identity())
        (u, v), d = project(cam, (0, 0, 2))
        assert (u, v) == (50.0, 50.0)
        assert d == 2.0

    def test_behind_camera(self):
        cam = Camera(K, Pose.identity())
        with pytest.raises(BehindCameraError):
            project(cam, (0, 0, -1))

    def test_round_trip_scalar(self):
        rng = np.random.default_rng(3)
        cam = Camera(K, random_pose(rng))
        for _ in range(50):
            px = rng.uniform(0, 99, 2)
            d = rng.uniform(0.1, 10)
            world = unproject(cam, px, d)
            (u, v), z = project(cam, world)
            assert abs(u - px[0]) < 1e-6 and abs(v - px[1]) < 1e-6
            assert abs(z - d) < 1e-9

    def test_round_trip_vectorized_matches_scalar(self):
        rng = np.random.default_rng(4)
        cam = Camera(K, random_pose(rng))
        px = rng.uniform(0, 99, (100, 2))
        d = rng.uniform(0.1, 10, 100)
        world = unproject_array(cam, px, d)
        uv, z, valid = project_array(cam, world)
        assert valid.all()
        np.testing.assert_allclose(uv, px, atol=1e-6)
        np.testing.assert_allclose(z, d, atol=1e-9)
        for i in range(0, 100, 17):
            np.testing.assert_allclose(world[i], unproject(cam, px[i], d[i]), atol=1e-12)


class TestPose:
    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = random_pose(rng)
            ident = p.compose(p.inverse())
            assert np.abs(ident.rotation - np.eye(3)).max() < 1e-6
            assert np.abs(ident.translation).max() < 1e-6

    def test_rotation_validation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))
        with pytest.raises(ValueError):
            Pose(-np.eye(3), np.zeros(3))  # det = -1

    def test_rotation_angle(self):
        c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
        rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        a = Pose.identity()
        b = Pose(rz, np.zeros(3))
        assert abs(rotation_angle_deg(a, b) - 30.0) < 1e-9


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
        with pytest.raises(ValueError):
            Intrinsics(fx=1, fy=1, cx=20, cy=0, width=10, height=10)

    def test_scaled_preserves_rays(self):
        # the 1/8 camera must map cell centers to the same rays as the
        # original camera maps the corresponding full-res block centers
        k = Intrinsics(fx=550.0, fy=520.0, cx=319.5, cy=239.0, width=640, height=480)
        cam = Camera(k, Pose.identity())
        cam8 = cam.scaled(0.125)
        assert (cam8.width, cam8.height) == (80, 60)
        for (r, c) in [(0, 0), (7, 11), (59, 79)]:
            full = unproject(cam, (8 * c + 3.5, 8 * r + 3.5), 2.0)
            small = unproject(cam8, (c, r), 2.0)
            np.testing.assert_allclose(small, full, atol=1e-12)


class TestFiles:
    def test_pose_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        save_pose(tmp_path / "p.txt", p)
        q = load_pose(tmp_path / "p.txt")
        np.testing.assert_allclose(q.matrix(), p.matrix(), atol=1e-15)
        # 16 whitespace-separated floats
        assert len((tmp_path / "p.txt").read_text().split()) == 16

    def test_intrinsics_round_trip(self, tmp_path):
        save_intrinsics(tmp_path / "k.txt", K)
        k2 = load_intrinsics(tmp_path / "k.txt")
        assert k2 == K

    def test_malformed_pose(self, tmp_path):
        (tmp_path / "bad.txt").write_text("1 2 3\n")
        with pytest.raises(ValueError):
            load_pose(tmp_path / "bad.txt")
