"""Synthetic ground-truthed datasets: analytic trajectories, IMU synthesis
with bias and noise, and LiDAR ray casting against planar worlds.

Trajectories are closed-form curves re-parameterized by a smooth time warp
with a stationary lead-in (so static initialization always has a rest
segment) and a C1 speed ramp. Pose, velocity, body rate and body-frame
specific force are available analytically at any time, vectorized over
time arrays.

All generators are pure functions of (spec, seed).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .filter import GRAVITY, ImuSample
from .pipeline import ScanFrame

WORLD_GRAVITY = np.array([0.0, 0.0, -GRAVITY])


# ─────────────────────────────────────────────────────────────
#  Planar world
# ─────────────────────────────────────────────────────────────

@dataclass
class Patch:
    """Finite rectangle: corner + u * edge1 + v * edge2, u, v in [0, 1]."""

    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge1, self.edge2)
        return n / np.linalg.norm(n)


class PlanarWorld:
    def __init__(self, patches: list[Patch]):
        if not patches:
            raise ValueError("world needs at least one patch")
        self.patches = patches
        self.corners = np.array([p.corner for p in patches], dtype=np.float64)
        self.edge1 = np.array([p.edge1 for p in patches], dtype=np.float64)
        self.edge2 = np.array([p.edge2 for p in patches], dtype=np.float64)
        e1n2 = np.einsum("ij,ij->i", self.edge1, self.edge1)
        e2n2 = np.einsum("ij,ij->i", self.edge2, self.edge2)
        if np.any(e1n2 < 1e-12) or np.any(e2n2 < 1e-12):
            raise ValueError("degenerate patch edge")
        cross = np.cross(self.edge1, self.edge2)
        if np.any(np.linalg.norm(cross, axis=1) < 1e-9):
            raise ValueError("patch edges must be linearly independent")
        self.normals = cross / np.linalg.norm(cross, axis=1, keepdims=True)
        self._inv_e1 = self.edge1 / e1n2[:, None]
        self._inv_e2 = self.edge2 / e2n2[:, None]

    def cast(self, origins: np.ndarray, dirs: np.ndarray,
             max_range: float = 120.0) -> tuple[np.ndarray, np.ndarray]:
        """First patch hit per ray. Returns (ranges, hit mask); misses get
        range +inf. Patches are double-sided."""
        o = origins[:, None, :]            # (N,1,3)
        denom = dirs @ self.normals.T      # (N,P)
        num = np.einsum("npj,pj->np", self.corners[None, :, :] - o, self.normals)
        miss = max_range + 1.0             # finite sentinel for parallel rays
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, num / denom, miss)
        t = np.nan_to_num(t, nan=miss, posinf=miss, neginf=miss)
        hit = o + t[..., None] * dirs[:, None, :]
        local = hit - self.corners[None, :, :]
        u = np.einsum("npj,pj->np", local, self._inv_e1)
        v = np.einsum("npj,pj->np", local, self._inv_e2)
        ok = (t > 1e-6) & (t <= max_range) & \
             (u >= 0.0) & (u <= 1.0) & (v >= 0.0) & (v <= 1.0)
        t = np.where(ok, t, np.inf)
        best = t.min(axis=1)
        return best, np.isfinite(best)


def _rect(corner, edge1, edge2) -> Patch:
    return Patch(np.asarray(corner, dtype=np.float64),
                 np.asarray(edge1, dtype=np.float64),
                 np.asarray(edge2, dtype=np.float64))


def default_room(length: float = 19.7, width: float = 20.3,
                 height: float = 4.1) -> PlanarWorld:
    """Rectangular room around the origin with corner structures and two
    sloped panels so surface normals span all orientations. The interior
    obstacles stay outside |x| < 7, |y| < 7 where the stock trajectories
    run.

    Two grid pathologies are designed away. The whole room is shifted off
    the voxel grid: an axis-aligned surface sitting exactly on a
    quantization boundary makes noiseless points quantize by the sign of
    1e-16 rounding noise. And the default dimensions are not multiples of
    the 0.5 m matching cell: walls that all share one in-cell phase would
    lose their correspondences simultaneously under a common offset,
    leaving that axis unconstrained.
    """
    shift = np.array([0.037, 0.083, 0.059])
    hx, hy = length / 2.0, width / 2.0
    patches = [
        _rect([-hx, -hy, 0.0], [length, 0, 0], [0, width, 0]),        # floor
        _rect([-hx, -hy, height], [0, width, 0], [length, 0, 0]),     # ceiling
        _rect([-hx, -hy, 0.0], [0, width, 0], [0, 0, height]),        # x = -hx
        _rect([hx, -hy, 0.0], [0, 0, height], [0, width, 0]),         # x = +hx
        _rect([-hx, -hy, 0.0], [0, 0, height], [length, 0, 0]),       # y = -hy
        _rect([-hx, hy, 0.0], [length, 0, 0], [0, 0, height]),        # y = +hy
        # free-standing interior walls near two corners
        _rect([8.0, 2.0, 0.0], [0, 6, 0], [0, 0, height]),
        _rect([-8.0, -8.0, 0.0], [6, 0, 0], [0, 0, height]),
        # sloped panels for oblique normals
        _rect([7.0, -9.0, 0.0], [2, 0, 2.0], [0, 2, 0]),
        _rect([-9.0, 7.0, 0.0], [0, 2, 1.5], [2, 0, 0]),
    ]
    for p in patches:
        p.corner += shift
    return PlanarWorld(patches)


# ─────────────────────────────────────────────────────────────
#  Analytic trajectories
# ─────────────────────────────────────────────────────────────

TRAJECTORY_KINDS = ("rest", "line", "circle", "figure8")


@dataclass
class TrajectorySpec:
    kind: str = "figure8"
    duration: float = 60.0
    radius: float = 5.0          # circle radius / figure-eight x amplitude
    width: float = 6.0           # figure-eight y footprint
    speed: float = 1.0           # cruise speed (nominal for figure8)
    height: float = 1.2          # sensor height above the floor
    rest_time: float = 1.0      # stationary lead-in
    ramp_time: float = 2.0      # smooth speed ramp after the rest
    yaw_follows_path: bool = True
    imu_rate: float = 200.0
    scan_rate: float = 10.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.imu_rate <= 0 or self.scan_rate <= 0:
            raise ValueError("rates must be positive")

    # time warp: u(t) with rest, smoothstep ramp, then constant rate
    def _rate(self) -> float:
        if self.kind == "rest":
            return 0.0
        if self.kind == "circle":
            return self.speed / self.radius
        if self.kind == "figure8":
            return self.speed / self.radius
        return self.speed  # line: u in meters

    def _warp(self, t: np.ndarray):
        w = self._rate()
        t = np.asarray(t, dtype=np.float64)
        tau = np.clip((t - self.rest_time) / self.ramp_time, 0.0, 1.0)
        s = 3 * tau**2 - 2 * tau**3              # smoothstep velocity profile
        s_int = tau**3 - 0.5 * tau**4            # its integral
        cruise = np.maximum(t - self.rest_time - self.ramp_time, 0.0)
        u = w * (self.ramp_time * s_int + cruise)
        du = w * np.where(t < self.rest_time, 0.0, s)
        ddu = w * np.where((t >= self.rest_time) & (tau < 1.0),
                           (6 * tau - 6 * tau**2) / self.ramp_time, 0.0)
        return u, du, ddu

    def _curve(self, u: np.ndarray):
        """Position curve gamma(u) with first and second derivatives."""
        u = np.asarray(u, dtype=np.float64)
        z = np.full_like(u, self.height)
        zero = np.zeros_like(u)
        if self.kind == "rest":
            g = np.stack([zero, zero, z], axis=-1)
            dg = np.stack([zero, zero, zero], axis=-1)
            return g, dg, dg.copy()
        if self.kind == "line":
            g = np.stack([u, zero, z], axis=-1)
            dg = np.stack([np.ones_like(u), zero, zero], axis=-1)
            ddg = np.stack([zero, zero, zero], axis=-1)
            return g, dg, ddg
        if self.kind == "circle":
            r = self.radius
            g = np.stack([r * np.cos(u), r * np.sin(u), z], axis=-1)
            dg = np.stack([-r * np.sin(u), r * np.cos(u), zero], axis=-1)
            ddg = np.stack([-r * np.cos(u), -r * np.sin(u), zero], axis=-1)
            return g, dg, ddg
        a, b = self.radius, self.width
        g = np.stack([a * np.sin(u), b * np.sin(u) * np.cos(u), z], axis=-1)
        dg = np.stack([a * np.cos(u), b * np.cos(2 * u), zero], axis=-1)
        ddg = np.stack([-a * np.sin(u), -2 * b * np.sin(2 * u), zero], axis=-1)
        return g, dg, ddg

    def sample(self, t):
        """Analytic motion at times t (scalar or array).

        Returns dict with position, velocity, accel_world, rotation
        (body->world), body_rate, body_accel (specific force, what an ideal
        accelerometer reads).
        """
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        u, du, ddu = self._warp(t_arr)
        g, dg, ddg = self._curve(u)
        pos = g
        vel = dg * du[:, None]
        acc = ddg * du[:, None]**2 + dg * ddu[:, None]

        if self.yaw_follows_path and self.kind != "rest":
            yaw = np.arctan2(dg[:, 1], dg[:, 0])
            denom = dg[:, 0]**2 + dg[:, 1]**2
            dyaw_du = np.where(denom > 1e-12,
                               (dg[:, 0] * ddg[:, 1] - dg[:, 1] * ddg[:, 0]) / np.maximum(denom, 1e-12),
                               0.0)
            yaw_rate = dyaw_du * du
        else:
            yaw = np.zeros_like(u)
            yaw_rate = np.zeros_like(u)

        cy, sy = np.cos(yaw), np.sin(yaw)
        rot = np.zeros(t_arr.shape + (3, 3))
        rot[:, 0, 0] = cy
        rot[:, 0, 1] = -sy
        rot[:, 1, 0] = sy
        rot[:, 1, 1] = cy
        rot[:, 2, 2] = 1.0

        body_rate = np.zeros_like(pos)
        body_rate[:, 2] = yaw_rate
        spec_force = np.einsum("nij,nj->ni", rot.transpose(0, 2, 1),
                               acc - WORLD_GRAVITY)
        out = {
            "position": pos, "velocity": vel, "accel_world": acc,
            "rotation": rot, "body_rate": body_rate, "body_accel": spec_force,
        }
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            out = {k: v[0] for k, v in out.items()}
        return out


# ─────────────────────────────────────────────────────────────
#  IMU synthesis
# ─────────────────────────────────────────────────────────────

def sample_imu(spec: TrajectorySpec,
               gravity: np.ndarray = WORLD_GRAVITY,
               bias_gyro: np.ndarray | None = None,
               bias_accel: np.ndarray | None = None,
               noise_std_gyro: float = 0.0,
               noise_std_accel: float = 0.0,
               seed: int = 0) -> list[ImuSample]:
    """Ideal body rate / specific force at imu_rate plus bias and white
    noise. Deterministic for a given seed."""
    bias_gyro = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=np.float64)
    bias_accel = np.zeros(3) if bias_accel is None else np.asarray(bias_accel, dtype=np.float64)
    # one extra sample at `duration` so the stream covers the last scan's end
    n = int(round(spec.duration * spec.imu_rate)) + 1
    stamps = np.arange(n) / spec.imu_rate
    motion = spec.sample(stamps)
    gyro = motion["body_rate"] + bias_gyro
    rot_t = motion["rotation"].transpose(0, 2, 1)
    accel = np.einsum("nij,nj->ni", rot_t,
                      motion["accel_world"] - np.asarray(gravity)) + bias_accel
    rng = np.random.default_rng(seed)
    if noise_std_gyro > 0.0:
        gyro = gyro + rng.normal(0.0, noise_std_gyro, gyro.shape)
    else:
        rng.normal(0.0, 1.0, gyro.shape)  # keep stream position fixed
    if noise_std_accel > 0.0:
        accel = accel + rng.normal(0.0, noise_std_accel, accel.shape)
    return [ImuSample(float(stamps[i]), gyro[i].copy(), accel[i].copy())
            for i in range(n)]


# ─────────────────────────────────────────────────────────────
#  LiDAR ray patterns and scan rendering
# ─────────────────────────────────────────────────────────────

SCAN_PATTERNS = ("cone70", "ring360")


def pattern_directions(pattern: str, n_points: int) -> np.ndarray:
    """Unit ray directions in the sensor frame, in scan-time order."""
    if pattern == "cone70":
        # spiral lattice over a 35 deg half-angle cap about +x
        half = np.deg2rad(35.0)
        i = np.arange(n_points) + 0.5
        cos_t = 1.0 - (1.0 - np.cos(half)) * i / n_points
        sin_t = np.sqrt(1.0 - cos_t**2)
        golden = np.pi * (3.0 - np.sqrt(5.0))
        az = golden * np.arange(n_points)
        return np.column_stack([cos_t, sin_t * np.cos(az), sin_t * np.sin(az)])
    if pattern == "ring360":
        rows = 32
        cols = max(1, n_points // rows)
        elev = np.deg2rad(np.linspace(-7.0, 52.0, rows))
        az = np.linspace(0.0, 2.0 * np.pi, cols, endpoint=False)
        # azimuth-major order: one full elevation column per azimuth step
        aa, ee = np.meshgrid(az, elev, indexing="ij")
        ce = np.cos(ee.ravel())
        return np.column_stack([ce * np.cos(aa.ravel()),
                                ce * np.sin(aa.ravel()),
                                np.sin(ee.ravel())])
    raise ValueError(f"unknown scan pattern {pattern!r}")


def render_scan(spec: TrajectorySpec, world: PlanarWorld, t: float,
                pattern: str = "ring360", n_points: int = 4096,
                range_noise_std: float = 0.0, seed: int = 0,
                max_range: float = 120.0) -> ScanFrame:
    """Cast one frame of rays from the moving sensor.

    Each ray gets a time offset linear across the scan period and is cast
    from the true pose at its own instant; hits are stored in the sensor
    frame of that instant (what a real scanning sensor outputs). Misses
    are dropped.
    """
    dirs = pattern_directions(pattern, n_points)
    n = dirs.shape[0]
    period = 1.0 / spec.scan_rate
    offsets = np.arange(n) / n * period
    motion = spec.sample(t + offsets)
    rot = motion["rotation"]
    origins = motion["position"]
    world_dirs = np.einsum("nij,nj->ni", rot, dirs)
    ranges, hit = world.cast(origins, world_dirs, max_range)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, range_noise_std, n) if range_noise_std > 0.0 else np.zeros(n)
    ranges = ranges + noise
    pts = dirs[hit] * ranges[hit, None]
    return ScanFrame(base_stamp=float(t), offsets=offsets[hit], points=pts)


@dataclass
class DatasetSpec:
    """Everything needed to synthesize one dataset deterministically."""

    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    pattern: str = "ring360"
    points_per_scan: int = 4096
    range_noise_std: float = 0.0
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise_std_gyro: float = 0.0
    noise_std_accel: float = 0.0
    seed: int = 0


def synthesize(spec: DatasetSpec, world: PlanarWorld | None = None):
    """Full dataset: IMU stream, scan frames, ground-truth poses.

    Ground truth is anchored at each frame's end stamp, matching the
    pipeline's estimate anchor. Returns (imu, frames, gt) with gt a list
    of (stamp, rotation, position).
    """
    world = world if world is not None else default_room()
    traj = spec.trajectory
    imu = sample_imu(traj, WORLD_GRAVITY, spec.bias_gyro, spec.bias_accel,
                     spec.noise_std_gyro, spec.noise_std_accel, spec.seed)
    n_frames = int(traj.duration * traj.scan_rate)
    frames = []
    gt = []
    for k in range(n_frames):
        t = k / traj.scan_rate
        frame = render_scan(traj, world, t, spec.pattern, spec.points_per_scan,
                            spec.range_noise_std, seed=spec.seed + 1 + k)
        frames.append(frame)
        end = frame.end_stamp
        m = traj.sample(end)
        gt.append((end, m["rotation"], m["position"]))
    return imu, frames, gt
