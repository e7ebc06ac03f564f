import numpy as np
import pytest

from slio.filter import GRAVITY, initial_covariance, propagate
from slio.simulate import (DatasetSpec, Patch, PlanarWorld, TrajectorySpec,
                           default_room, pattern_directions, render_scan,
                           sample_imu, synthesize)


class TestTrajectory:
    def test_rest_is_stationary(self):
        spec = TrajectorySpec(kind="rest", duration=5.0)
        m = spec.sample(np.linspace(0, 5, 50))
        assert np.abs(m["velocity"]).max() == 0.0
        assert np.abs(m["body_rate"]).max() == 0.0
        assert np.allclose(m["position"], m["position"][0])

    def test_lead_in_is_at_rest(self):
        for kind in ("line", "circle", "figure8"):
            spec = TrajectorySpec(kind=kind, duration=10.0)
            m = spec.sample(np.linspace(0, spec.rest_time - 1e-6, 20))
            assert np.abs(m["velocity"]).max() < 1e-12
            assert np.abs(m["body_rate"]).max() < 1e-12

    def test_velocity_matches_position_derivative(self):
        for kind in ("line", "circle", "figure8"):
            spec = TrajectorySpec(kind=kind, duration=20.0)
            ts = np.linspace(2.0, 18.0, 200)
            h = 1e-6
            vel = spec.sample(ts)["velocity"]
            p_plus = spec.sample(ts + h)["position"]
            p_minus = spec.sample(ts - h)["position"]
            np.testing.assert_allclose(vel, (p_plus - p_minus) / (2 * h),
                                       atol=1e-6)

    def test_acceleration_matches_velocity_derivative(self):
        spec = TrajectorySpec(kind="figure8", duration=20.0)
        ts = np.linspace(1.2, 18.0, 200)
        h = 1e-6
        acc = spec.sample(ts)["accel_world"]
        v_plus = spec.sample(ts + h)["velocity"]
        v_minus = spec.sample(ts - h)["velocity"]
        np.testing.assert_allclose(acc, (v_plus - v_minus) / (2 * h), atol=1e-5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            TrajectorySpec(kind="zigzag")


class TestSampleImu:
    def test_rest_measurements(self):
        spec = TrajectorySpec(kind="rest", duration=2.0)
        samples = sample_imu(spec)
        for s in samples[:: len(samples) // 10]:
            np.testing.assert_array_equal(s.gyro, np.zeros(3))
            np.testing.assert_allclose(s.accel, [0, 0, GRAVITY], atol=1e-12)

    def test_bias_is_added(self):
        spec = TrajectorySpec(kind="rest", duration=1.0)
        bg = np.array([0.01, -0.02, 0.005])
        samples = sample_imu(spec, bias_gyro=bg)
        np.testing.assert_allclose(samples[7].gyro, bg, atol=1e-15)

    def test_same_seed_identical(self):
        spec = TrajectorySpec(kind="circle", duration=3.0)
        a = sample_imu(spec, noise_std_gyro=0.01, noise_std_accel=0.1, seed=42)
        b = sample_imu(spec, noise_std_gyro=0.01, noise_std_accel=0.1, seed=42)
        assert all(np.array_equal(x.gyro, y.gyro)
                   and np.array_equal(x.accel, y.accel) for x, y in zip(a, b))
        c = sample_imu(spec, noise_std_gyro=0.01, noise_std_accel=0.1, seed=43)
        assert not np.array_equal(a[5].gyro, c[5].gyro)

    def test_integration_consistency_circle(self):
        # integrating noiseless samples through the filter kinematics
        # tracks the analytic circle; the first-order hold leaves ~3 cm
        # after 60 s at 200 Hz and the error scales linearly with dt
        errors = {}
        for rate in (200.0, 400.0):
            spec = TrajectorySpec(kind="circle", duration=60.0, radius=5.0,
                                  speed=1.0, imu_rate=rate)
            samples = sample_imu(spec)
            m0 = spec.sample(0.0)
            from slio.filter import NavState
            state = NavState(rotation=m0["rotation"], position=m0["position"],
                             velocity=m0["velocity"])
            cov = initial_covariance()
            for k in range(len(samples) - 1):
                state, cov = propagate(state, cov, samples[k],
                                       samples[k + 1].stamp - samples[k].stamp)
            ref = spec.sample(samples[-1].stamp)
            errors[rate] = np.linalg.norm(state.position - ref["position"])
        assert errors[200.0] < 0.05
        ratio = errors[400.0] / errors[200.0]
        assert 0.35 < ratio < 0.65  # global error is first order in dt


class TestPatterns:
    def test_directions_are_unit(self):
        for pattern in ("cone70", "ring360"):
            dirs = pattern_directions(pattern, 2048)
            np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0,
                                       atol=1e-12)

    def test_cone_half_angle(self):
        dirs = pattern_directions("cone70", 4096)
        angles = np.degrees(np.arccos(np.clip(dirs[:, 0], -1, 1)))
        assert angles.max() <= 35.0 + 1e-9

    def test_ring_elevation_band(self):
        dirs = pattern_directions("ring360", 4096)
        elev = np.degrees(np.arcsin(np.clip(dirs[:, 2], -1, 1)))
        assert elev.min() >= -7.0 - 1e-9
        assert elev.max() <= 52.0 + 1e-9

    def test_unknown_pattern(self):
        with pytest.raises(ValueError):
            pattern_directions("lissajous", 100)


class TestRenderScan:
    def test_ray_plane_distance_exact(self):
        # one floor patch, ray pointing straight down from a known height
        floor = PlanarWorld([Patch(np.array([-10.0, -10.0, 0.0]),
                                   np.array([20.0, 0.0, 0.0]),
                                   np.array([0.0, 20.0, 0.0]))])
        origins = np.array([[0.0, 0.0, 1.7]])
        dirs = np.array([[0.0, 0.0, -1.0]])
        ranges, hit = floor.cast(origins, dirs)
        assert hit[0]
        assert abs(ranges[0] - 1.7) < 1e-12

    def test_cube_range_bounds(self):
        # sensor at the center of a 10 m cube: every range in [5, 5*sqrt(3)]
        s = 5.0
        cube = PlanarWorld([
            Patch(np.array([-s, -s, -s]), np.array([2 * s, 0, 0]), np.array([0, 2 * s, 0])),
            Patch(np.array([-s, -s, s]), np.array([0, 2 * s, 0]), np.array([2 * s, 0, 0])),
            Patch(np.array([-s, -s, -s]), np.array([0, 2 * s, 0]), np.array([0, 0, 2 * s])),
            Patch(np.array([s, -s, -s]), np.array([0, 0, 2 * s]), np.array([0, 2 * s, 0])),
            Patch(np.array([-s, -s, -s]), np.array([0, 0, 2 * s]), np.array([2 * s, 0, 0])),
            Patch(np.array([-s, s, -s]), np.array([2 * s, 0, 0]), np.array([0, 0, 2 * s])),
        ])
        traj = TrajectorySpec(kind="rest", duration=1.0, height=0.0)
        frame = render_scan(traj, cube, 0.0, "ring360", 4096, 0.0, seed=0)
        ranges = np.linalg.norm(frame.points, axis=1)
        assert ranges.min() >= 5.0 - 1e-9
        assert ranges.max() <= 5.0 * np.sqrt(3.0) + 1e-9

    def test_fixed_seed_identical_frames(self):
        traj = TrajectorySpec(kind="circle", duration=5.0)
        world = default_room()
        a = render_scan(traj, world, 2.0, "ring360", 1024, 0.01, seed=5)
        b = render_scan(traj, world, 2.0, "ring360", 1024, 0.01, seed=5)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.offsets, b.offsets)

    def test_points_lie_on_world_patches(self):
        traj = TrajectorySpec(kind="circle", duration=5.0)
        world = default_room()
        frame = render_scan(traj, world, 3.0, "ring360", 2048, 0.0, seed=1)
        motion = traj.sample(frame.base_stamp + frame.offsets)
        world_pts = np.einsum("nij,nj->ni", motion["rotation"], frame.points) \
            + motion["position"]
        dists = np.full(world_pts.shape[0], np.inf)
        for patch in world.patches:
            d = np.abs((world_pts - patch.corner) @ patch.normal)
            dists = np.minimum(dists, d)
        assert dists.max() < 1e-9

    def test_noisy_points_within_3_sigma(self):
        traj = TrajectorySpec(kind="circle", duration=5.0)
        world = default_room()
        sigma = 0.02
        frame = render_scan(traj, world, 3.0, "ring360", 8192, sigma, seed=2)
        motion = traj.sample(frame.base_stamp + frame.offsets)
        world_pts = np.einsum("nij,nj->ni", motion["rotation"], frame.points) \
            + motion["position"]
        dists = np.full(world_pts.shape[0], np.inf)
        for patch in world.patches:
            d = np.abs((world_pts - patch.corner) @ patch.normal)
            dists = np.minimum(dists, d)
        assert (dists < 3 * sigma).mean() > 0.99

    def test_offsets_cover_scan_period(self):
        traj = TrajectorySpec(kind="rest", duration=1.0)
        frame = render_scan(traj, default_room(), 0.0, "ring360", 1024, 0.0)
        assert frame.offsets.min() >= 0.0
        assert frame.offsets.max() < 1.0 / traj.scan_rate
        assert np.all(np.diff(frame.offsets) >= 0.0)


def test_synthesize_counts_and_anchors():
    spec = DatasetSpec(trajectory=TrajectorySpec(kind="circle", duration=3.0),
                       points_per_scan=512, seed=0)
    imu, frames, gt = synthesize(spec)
    assert len(frames) == 30
    assert len(gt) == 30
    assert imu[-1].stamp >= frames[-1].end_stamp
    for frame, (stamp, rot, pos) in zip(frames, gt):
        assert stamp == frame.end_stamp
