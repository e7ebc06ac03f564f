"""Error-state iterated Kalman filter on SO(3) x R^12.

State: rotation (body->world), position, velocity, gyro bias, accel bias;
gravity is a fixed calibrated vector, not a filter state. The error state
is the 15-dim tangent (dtheta, dp, dv, dbg, dba) with the rotation error
applied on the right: R_true = R @ Exp(dtheta).

Propagation follows the discrete-time kinematics with the accumulated
velocity entering the position update before its own update. The
measurement model is the point-to-plane residual against map surfels,
iterated with re-queried correspondences until the correction norm drops
below tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import exp_so3, log_so3, skew
from .voxmap import Surfel, SurfelVoxelMap

GRAVITY = 9.81


class InitializationError(RuntimeError):
    """Static initialization failed (motion detected or too few samples)."""


@dataclass
class ImuSample:
    stamp: float
    gyro: np.ndarray   # rad/s
    accel: np.ndarray  # m/s^2


@dataclass
class NavState:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY]))
    stamp: float = 0.0

    def copy(self) -> "NavState":
        return NavState(self.rotation.copy(), self.position.copy(),
                        self.velocity.copy(), self.gyro_bias.copy(),
                        self.accel_bias.copy(), self.gravity.copy(), self.stamp)


@dataclass
class NoiseModel:
    """Continuous-time noise densities, scaled by dt during propagation."""

    gyro: float = 1e-3
    accel: float = 1e-2
    gyro_bias: float = 1e-5
    accel_bias: float = 1e-4


@dataclass
class UpdateConfig:
    sigma: float = 0.05       # measurement std per residual, meters
    gate: float = 0.5         # residual magnitude gate, meters
    min_matches: int = 50
    tol: float = 1e-4         # norm of the full 15-dim correction
    max_iter: int = 5


@dataclass
class UpdateStats:
    iterations: int = 0
    n_matched: int = 0
    mean_abs_residual: float = 0.0
    iteration_residuals: list = field(default_factory=list)
    iteration_matches: list = field(default_factory=list)
    iteration_sets: list = field(default_factory=list)  # gating-set digests
    converged: bool = False
    skipped: bool = False
    query_seconds: float = 0.0
    build_seconds: float = 0.0


def initial_covariance() -> np.ndarray:
    """Uncertainty right after static initialization.

    The odometry frame is defined by the init pose, so yaw and position
    start exact; roll/pitch carry the tilt error an unknown accelerometer
    bias induces (~bias/g); gyro bias is measured to the noise floor of
    the averaging window.
    """
    return np.diag(np.concatenate([
        [1e-5, 1e-5, 1e-8],  # rotation: tilt from accel bias, yaw defines frame
        np.full(3, 1e-8),    # position: defines the origin
        np.full(3, 1e-6),    # velocity: stationary at init
        np.full(3, 4e-6),    # gyro bias: averaged over the init window
        np.full(3, 1e-3),    # accel bias: unknown turn-on bias ~0.03
    ]))


def propagate(state: NavState, cov: np.ndarray, sample: ImuSample,
              dt: float, noise: NoiseModel = NoiseModel()):
    """One discrete kinematics step plus first-order covariance transport.

    Returns a new (state, cov); inputs are not mutated.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = sample.gyro - state.gyro_bias
    a = sample.accel - state.accel_bias
    rot = state.rotation
    acc_w = rot @ a + state.gravity

    out = state.copy()
    out.rotation = rot @ exp_so3(w * dt)
    out.velocity = state.velocity + acc_w * dt
    out.position = state.position + state.velocity * dt + 0.5 * acc_w * dt * dt
    out.stamp = state.stamp + dt

    eye3 = np.eye(3)
    r_sk = rot @ skew(a)
    f = np.eye(15)
    f[0:3, 0:3] = exp_so3(w * dt).T
    f[0:3, 9:12] = -eye3 * dt
    f[3:6, 0:3] = -0.5 * r_sk * dt * dt
    f[3:6, 6:9] = eye3 * dt
    f[3:6, 12:15] = -0.5 * rot * dt * dt
    f[6:9, 0:3] = -r_sk * dt
    f[6:9, 12:15] = -rot * dt

    q = np.zeros((15, 15))
    q[0:3, 0:3] = eye3 * (noise.gyro ** 2 * dt)
    q[6:9, 6:9] = eye3 * (noise.accel ** 2 * dt)
    q[9:12, 9:12] = eye3 * (noise.gyro_bias ** 2 * dt)
    q[12:15, 12:15] = eye3 * (noise.accel_bias ** 2 * dt)

    new_cov = f @ cov @ f.T + q
    new_cov = 0.5 * (new_cov + new_cov.T)
    return out, new_cov


def residual(state: NavState, point_l: np.ndarray, surfel: Surfel) -> float:
    """Signed point-to-plane distance of the transformed point."""
    p_w = state.rotation @ np.asarray(point_l, dtype=np.float64) + state.position
    return float(surfel.normal @ (p_w - surfel.centroid))


def jacobian_row(state: NavState, point_l: np.ndarray, surfel: Surfel) -> np.ndarray:
    """d(residual)/d(error state): [-n^T R [p_l]x, n^T, 0_{1x9}]."""
    row = np.zeros(15)
    u = state.rotation.T @ surfel.normal
    row[0:3] = -np.cross(u, np.asarray(point_l, dtype=np.float64))
    row[3:6] = surfel.normal
    return row


def _box_minus(ref: NavState, x: NavState) -> np.ndarray:
    """Tangent offset delta with ref = x (+) delta."""
    d = np.empty(15)
    d[0:3] = log_so3(x.rotation.T @ ref.rotation)
    d[3:6] = ref.position - x.position
    d[6:9] = ref.velocity - x.velocity
    d[9:12] = ref.gyro_bias - x.gyro_bias
    d[12:15] = ref.accel_bias - x.accel_bias
    return d


def _apply_correction(x: NavState, dx: np.ndarray) -> None:
    x.rotation = x.rotation @ exp_so3(dx[0:3])
    x.position = x.position + dx[3:6]
    x.velocity = x.velocity + dx[6:9]
    x.gyro_bias = x.gyro_bias + dx[9:12]
    x.accel_bias = x.accel_bias + dx[12:15]


def iekf_update(state: NavState, cov: np.ndarray, scan_l: np.ndarray,
                vox_map: SurfelVoxelMap, cfg: UpdateConfig = UpdateConfig()):
    """Iterated point-to-plane update against the surfel map.

    Correspondences are re-queried from the map at every iteration. When
    fewer than cfg.min_matches residuals survive gating the update is
    skipped and the propagated (state, cov) is returned untouched.

    Returns (state, cov, UpdateStats).
    """
    pts = np.ascontiguousarray(scan_l, dtype=np.float64)
    stats = UpdateStats()
    if pts.shape[0] == 0 or cfg.max_iter < 1:
        stats.skipped = True
        return state, cov, stats

    prior = state
    x = state.copy()
    p_inv = np.linalg.inv(cov)
    p_inv = 0.5 * (p_inv + p_inv.T)
    inv_var = 1.0 / (cfg.sigma * cfg.sigma)
    s_last = None

    for _ in range(cfg.max_iter):
        t0 = time.perf_counter()
        world = pts @ x.rotation.T + x.position
        normals, cents, _, found = vox_map.query_batch(world)
        t1 = time.perf_counter()
        hth, htr, n_used, sum_abs, used = kernels.point_plane_system(
            x.rotation, x.position, pts, normals, cents, found, cfg.gate)
        t2 = time.perf_counter()
        stats.query_seconds += t1 - t0
        stats.build_seconds += t2 - t1

        if n_used < cfg.min_matches:
            stats.skipped = True
            stats.n_matched = int(n_used)
            return state, cov, stats

        stats.iterations += 1
        stats.n_matched = int(n_used)
        stats.mean_abs_residual = sum_abs / n_used
        stats.iteration_residuals.append(stats.mean_abs_residual)
        stats.iteration_matches.append(int(n_used))
        stats.iteration_sets.append(hash(used.tobytes()))

        s = p_inv.copy()
        s[0:6, 0:6] += hth * inv_var
        rhs = p_inv @ _box_minus(prior, x)
        rhs[0:6] -= htr * inv_var
        dx = np.linalg.solve(s, rhs)
        _apply_correction(x, dx)
        s_last = s

        if float(np.linalg.norm(dx)) < cfg.tol:
            stats.converged = True
            break

    new_cov = np.linalg.inv(s_last)
    new_cov = 0.5 * (new_cov + new_cov.T)
    return x, new_cov, stats


def static_init(samples: list[ImuSample], accel_std_limit: float = 0.3):
    """Gravity, gyro bias and initial attitude from a stationary stretch.

    Needs >= 100 samples with per-axis accel std below the limit. The
    returned rotation maps the mean specific-force direction onto world +z,
    so gravity comes out as (0, 0, -9.81).

    Returns (gravity (3,), gyro_bias (3,), rotation (3,3)).
    """
    if len(samples) < 100:
        raise InitializationError(
            f"static initialization needs >= 100 samples, got {len(samples)}")
    gyro = np.array([s.gyro for s in samples], dtype=np.float64)
    accel = np.array([s.accel for s in samples], dtype=np.float64)
    std = accel.std(axis=0).max()
    if std > accel_std_limit:
        raise InitializationError(
            f"platform not stationary: accel std {std:.3f} > {accel_std_limit}")

    gyro_bias = gyro.mean(axis=0)
    a_mean = accel.mean(axis=0)
    norm = np.linalg.norm(a_mean)
    if norm < 1e-6:
        raise InitializationError("mean specific force is zero")
    a_hat = a_mean / norm
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(a_hat, z)
    s = np.linalg.norm(axis)
    c = float(a_hat @ z)
    if s < 1e-12:
        rotation = np.eye(3) if c > 0 else exp_so3(np.array([np.pi, 0.0, 0.0]))
    else:
        rotation = exp_so3(axis / s * np.arctan2(s, c))
    gravity = np.array([0.0, 0.0, -GRAVITY])
    return gravity, gyro_bias, rotation
