import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from relight.camera import (
    Camera,
    camera_pose_matrix,
    generate_rays,
    interpolate_cameras,
    sample_camera_pose,
    smooth_pose_sequence,
)


def rotation(cam):
    return camera_pose_matrix(cam)[:3, :3]


class TestPose:
    def test_position_trig_oracle(self):
        # oracle: spherical orbit written out longhand
        for yaw, pitch, r in [(0.0, 0.0, 2.7), (math.pi / 2, 0.0, 2.7),
                              (0.3, -0.8, 1.9), (-1.2, 0.4, 3.3)]:
            cam = Camera(yaw=yaw, pitch=pitch, radius=r, focal=18.837)
            expected = np.array([r * math.cos(pitch) * math.sin(yaw),
                                 -r * math.cos(pitch) * math.cos(yaw),
                                 r * math.sin(pitch)])
            np.testing.assert_allclose(cam.position(), expected, atol=1e-12)

    def test_canonical_pose_axes(self):
        # yaw=pitch=0: camera sits at (0,-r,0) looking along +y, z-up keeps
        # "down" at -z and "right" at +x
        m = camera_pose_matrix(Camera(yaw=0.0, pitch=0.0, radius=2.0, focal=18.837))
        np.testing.assert_allclose(m[:3, 3], [0.0, -2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(m[:3, 2], [0.0, 1.0, 0.0], atol=1e-12)   # forward
        np.testing.assert_allclose(m[:3, 0], [1.0, 0.0, 0.0], atol=1e-12)   # right
        np.testing.assert_allclose(m[:3, 1], [0.0, 0.0, -1.0], atol=1e-12)  # down

    def test_quarter_yaw_axes(self):
        m = camera_pose_matrix(Camera(yaw=math.pi / 2, pitch=0.0, radius=2.7, focal=18.837))
        np.testing.assert_allclose(m[:3, 3], [2.7, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(m[:3, 2], [-1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(m[:3, 0], [0.0, 1.0, 0.0], atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(yaw=st.floats(-math.pi, math.pi),
           pitch=st.floats(-1.2, 1.2),
           roll=st.floats(-0.5, 0.5),
           radius=st.floats(1.3, 5.0))
    def test_rotation_orthonormal(self, yaw, pitch, roll, radius):
        cam = Camera(yaw=yaw, pitch=pitch, radius=radius, focal=18.837, roll=roll)
        r = rotation(cam)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
        # looking at the origin regardless of roll
        pos = camera_pose_matrix(cam)[:3, 3]
        np.testing.assert_allclose(r[:, 2], -pos / np.linalg.norm(pos), atol=1e-12)

    def test_roll_quarter_turn_swaps_axes(self):
        base = Camera(yaw=0.4, pitch=0.2, radius=2.7, focal=18.837)
        rolled = Camera(yaw=0.4, pitch=0.2, radius=2.7, focal=18.837, roll=math.pi / 2)
        m0, m1 = camera_pose_matrix(base), camera_pose_matrix(rolled)
        np.testing.assert_allclose(m1[:3, 0], m0[:3, 1], atol=1e-12)
        np.testing.assert_allclose(m1[:3, 1], -m0[:3, 0], atol=1e-12)
        np.testing.assert_allclose(m1[:3, 2], m0[:3, 2], atol=1e-12)

    def test_pole_pose_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            camera_pose_matrix(Camera(yaw=0.0, pitch=math.pi / 2, radius=2.7, focal=18.837))

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            Camera(yaw=0.0, pitch=0.0, radius=0.0, focal=18.837)
        with pytest.raises(ValueError):
            Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=0.0)
        with pytest.raises(ValueError):
            Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=4)


class TestIntrinsics:
    def test_512_scale(self):
        cam = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=512)
        assert cam.focal_pixels == pytest.approx(18.837)
        np.testing.assert_allclose(cam.principal_pixels, [256.0, 256.0])
        half = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=256)
        assert half.focal_pixels == pytest.approx(18.837 / 2)

    def test_default_near_far_brackets_radius(self):
        cam = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837)
        assert cam.default_near_far() == (pytest.approx(1.7), pytest.approx(3.7))


class TestRays:
    def test_directions_unit_and_shape(self):
        cam = Camera(yaw=0.7, pitch=-0.3, radius=2.7, focal=18.837, roll=0.1,
                     image_size=16)
        origins, dirs = generate_rays(cam)
        assert origins.shape == dirs.shape == (16, 16, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(origins - cam.position(), 0.0, atol=1e-12)

    def test_center_ray_hits_origin_at_odd_size(self):
        # 65 px with principal 256: center pixel (32) has its center exactly
        # on the optical axis, so the center ray must pass through the orbit
        # target
        cam = Camera(yaw=0.9, pitch=0.5, radius=2.7, focal=18.837, image_size=65)
        origins, dirs = generate_rays(cam)
        o, d = origins[32, 32], dirs[32, 32]
        miss = np.linalg.norm(o - np.dot(o, d) * d)
        assert miss < 1e-9

    def test_pixel_angle_atan_oracle(self):
        cam = Camera(yaw=0.6, pitch=-0.4, radius=2.2, focal=18.837, roll=0.3,
                     image_size=32, principal=np.array([240.0, 260.0]))
        origins, dirs = generate_rays(cam)
        r = rotation(cam)
        d_cam = dirs @ r  # back into the camera frame
        fpix = cam.focal_pixels
        cx, cy = cam.principal_pixels
        iy, ix = 5, 21
        got_x = math.atan2(d_cam[iy, ix, 0], d_cam[iy, ix, 2])
        got_y = math.atan2(d_cam[iy, ix, 1], d_cam[iy, ix, 2])
        assert got_x == pytest.approx(math.atan((ix + 0.5 - cx) / fpix), abs=1e-12)
        assert got_y == pytest.approx(math.atan((iy + 0.5 - cy) / fpix), abs=1e-12)

    def test_image_axes_orientation(self):
        # x grows to the right along a row, y grows downward along a column
        cam = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=16)
        _, dirs = generate_rays(cam)
        r = rotation(cam)
        d_cam = dirs @ r
        assert np.all(np.diff(d_cam[8, :, 0] / d_cam[8, :, 2]) > 0)
        assert np.all(np.diff(d_cam[:, 8, 1] / d_cam[:, 8, 2]) > 0)


@pytest.fixture(scope="module")
def first_slot_draws():
    cams = [sample_camera_pose(seed, "first") for seed in range(100_000)]
    return cams


class TestPoseSampling:
    def test_determinism(self):
        a = sample_camera_pose(123, "first")
        b = sample_camera_pose(123, "first")
        assert (a.yaw, a.pitch, a.radius, a.focal, a.roll) == (b.yaw, b.pitch, b.radius, b.focal, b.roll)
        np.testing.assert_array_equal(a.principal, b.principal)
        c = sample_camera_pose(124, "first")
        assert (a.yaw, a.pitch) != (c.yaw, c.pitch)

    def test_unknown_slot(self):
        with pytest.raises(ValueError, match="slot"):
            sample_camera_pose(0, "third")

    def test_first_slot_means(self, first_slot_draws):
        focal = np.array([c.focal for c in first_slot_draws])
        radius = np.array([c.radius for c in first_slot_draws])
        assert abs(focal.mean() - 18.837) < 0.02
        assert abs(radius.mean() - 2.7) < 0.002

    def test_first_slot_angle_ranges(self, first_slot_draws):
        yaw = np.degrees([c.yaw for c in first_slot_draws])
        pitch = np.degrees([c.pitch for c in first_slot_draws])
        assert yaw.min() >= -49.0 and yaw.max() <= 49.0
        assert pitch.min() >= -26.0 and pitch.max() <= 26.0
        # both ends of the range actually reached
        assert yaw.min() < -48.0 and yaw.max() > 48.0

    def test_first_slot_yaw_uniform_ks(self, first_slot_draws):
        yaw = np.degrees([c.yaw for c in first_slot_draws])
        p = stats.kstest(yaw, "uniform", args=(-49.0, 98.0)).pvalue
        assert p > 0.01

    def test_first_slot_roll_and_principal(self, first_slot_draws):
        roll = np.degrees([c.roll for c in first_slot_draws])
        principal = np.array([c.principal for c in first_slot_draws])
        assert abs(roll.mean()) < 0.05
        assert abs(roll.std() - 2.0) < 0.05
        np.testing.assert_allclose(principal.mean(axis=0), [256.0, 256.0], atol=0.3)

    def test_tail_guards(self, first_slot_draws):
        assert min(c.focal for c in first_slot_draws) >= 1.0
        assert min(c.radius for c in first_slot_draws) >= 1.2

    def test_second_slot_fixed_parameters(self):
        for seed in range(20):
            cam = sample_camera_pose(seed, "second")
            assert cam.focal == 18.837
            assert cam.radius == 2.7
            assert cam.roll == 0.0
            np.testing.assert_array_equal(cam.principal, [256.0, 256.0])
            assert abs(math.degrees(cam.yaw)) <= 36.0
            assert abs(math.degrees(cam.pitch)) <= 26.0


class TestInterpolation:
    def test_endpoints_exact(self):
        a = sample_camera_pose(1, "first")
        b = sample_camera_pose(2, "first")
        for t, ref in [(0.0, a), (1.0, b)]:
            c = interpolate_cameras(a, b, t)
            assert (c.yaw, c.pitch, c.radius, c.focal, c.roll) == (
                ref.yaw, ref.pitch, ref.radius, ref.focal, ref.roll)
            np.testing.assert_array_equal(c.principal, ref.principal)

    def test_midpoint(self):
        a = Camera(yaw=-0.4, pitch=0.1, radius=2.5, focal=18.0)
        b = Camera(yaw=0.8, pitch=-0.3, radius=2.9, focal=20.0)
        c = interpolate_cameras(a, b, 0.5)
        assert c.yaw == pytest.approx(0.2)
        assert c.radius == pytest.approx(2.7)
        assert c.focal == pytest.approx(19.0)

    def test_componentwise_monotone(self):
        a = Camera(yaw=-0.4, pitch=0.1, radius=2.5, focal=18.0)
        b = Camera(yaw=0.8, pitch=-0.3, radius=2.9, focal=20.0)
        ts = np.linspace(0.0, 1.0, 9)
        yaws = [interpolate_cameras(a, b, t).yaw for t in ts]
        pitches = [interpolate_cameras(a, b, t).pitch for t in ts]
        assert np.all(np.diff(yaws) > 0)
        assert np.all(np.diff(pitches) < 0)

    def test_errors(self):
        a = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=64)
        b = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=128)
        with pytest.raises(ValueError, match="image_size"):
            interpolate_cameras(a, b, 0.5)
        c = Camera(yaw=0.0, pitch=0.0, radius=2.7, focal=18.837, image_size=64)
        with pytest.raises(ValueError):
            interpolate_cameras(a, c, 1.5)


class TestSmoothing:
    def cams_with_yaw(self, yaws):
        return [Camera(yaw=y, pitch=0.0, radius=2.7, focal=18.837) for y in yaws]

    def test_step_response_unrolled(self):
        # EMA recurrence by hand: 0, .5, .75, .875 for a unit step at alpha=.5
        out = smooth_pose_sequence(self.cams_with_yaw([0.0, 1.0, 1.0, 1.0]), 0.5)
        np.testing.assert_allclose([c.yaw for c in out], [0.0, 0.5, 0.75, 0.875])

    def test_alpha_one_is_identity(self):
        yaws = [0.3, -0.2, 0.9, 0.1]
        out = smooth_pose_sequence(self.cams_with_yaw(yaws), 1.0)
        np.testing.assert_allclose([c.yaw for c in out], yaws)

    def test_constant_sequence_fixed_point(self):
        out = smooth_pose_sequence(self.cams_with_yaw([0.4] * 5), 0.3)
        np.testing.assert_allclose([c.yaw for c in out], [0.4] * 5)

    def test_first_pose_unchanged_and_lag(self):
        out = smooth_pose_sequence(self.cams_with_yaw([0.0, 1.0, 2.0, 3.0]), 0.5)
        assert out[0].yaw == 0.0
        # smoothed path lags a strictly increasing input
        assert all(s.yaw < r for s, r in zip(out[1:], [1.0, 2.0, 3.0]))

    def test_validation(self):
        with pytest.raises(ValueError):
            smooth_pose_sequence([], 0.5)
        with pytest.raises(ValueError):
            smooth_pose_sequence(self.cams_with_yaw([0.0]), 0.0)
