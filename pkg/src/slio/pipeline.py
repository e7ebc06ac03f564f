"""Odometry pipeline: IMU propagation, scan undistortion, downsampling,
iterated point-to-plane update, map maintenance, per-stage timing.

One sequential thread owns the filter state and the map; every mutation
happens between the read-only fan-out phases, so the ordering here is the
whole concurrency story.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import kernels, morton
from .filter import (ImuSample, InitializationError, NavState, NoiseModel, UpdateConfig,
                     iekf_update, initial_covariance, propagate, static_init)
from .geometry import PoseSE3, exp_so3, exp_so3_batch, log_so3
from .voxmap import SurfelVoxelMap


@dataclass
class ScanFrame:
    """One LiDAR frame: per-point capture offsets from base_stamp."""

    base_stamp: float
    offsets: np.ndarray   # (N,) seconds, non-decreasing, within the period
    points: np.ndarray    # (N, 3) sensor frame at each point's instant

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def end_stamp(self) -> float:
        if len(self) == 0:
            return self.base_stamp
        return self.base_stamp + float(self.offsets[-1])


@dataclass
class FrameStats:
    frame_index: int
    n_points: int
    n_corr: int
    iters: int
    query_us_per_pt: float
    plane_us_per_pt: float
    map_update_ms: float
    total_ms: float
    query_ms: float = 0.0   # stage totals behind the per-point figures
    plane_ms: float = 0.0
    update_skipped: bool = False
    undistort_skipped: bool = False


TIMING_FIELDS = ("query_us_per_pt", "plane_us_per_pt", "map_update_ms", "total_ms")


def aggregate_timings(frames: list[FrameStats]) -> dict:
    """mean / median / p95 per timing column over all frames."""
    out = {}
    for name in TIMING_FIELDS:
        vals = np.array([getattr(f, name) for f in frames], dtype=np.float64)
        if vals.size == 0:
            vals = np.zeros(1)
        out[f"{name}_mean"] = float(vals.mean())
        out[f"{name}_median"] = float(np.median(vals))
        out[f"{name}_p95"] = float(np.percentile(vals, 95))
    return out


@dataclass
class PipelineConfig:
    fine_edge: float = 0.5 / 3.0      # coarse (matching) resolution is 3x this
    # stricter than the map-level default: low-confidence surfels from
    # sparse or mixed-geometry cells destabilize odometry under sensor noise
    min_planarity: float = 0.3
    min_children: int = 5
    downsample_leaf: float = 0.5
    half_extent: float = 100.0        # local map box: center +- this in x/y
    init_window: float = 0.8          # seconds of IMU used for static init
    max_imu_gap: float = 0.05         # undistortion bails above this
    noise: NoiseModel = field(default_factory=NoiseModel)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    extrinsic: PoseSE3 = field(default_factory=PoseSE3.identity)  # lidar -> body


def downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """One representative point per occupied leaf voxel: the stored point
    nearest the leaf's centroid. Output ordered by leaf Morton code."""
    if leaf <= 0.0:
        raise ValueError("leaf must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        return pts.copy()
    keys = morton.quantize(pts, leaf)
    ok = morton.in_range(keys)
    pts = pts[ok]
    if pts.shape[0] == 0:
        return pts
    codes = morton.encode(keys[ok])
    order = np.argsort(codes, kind="stable")
    codes = codes[order]
    pts = pts[order]
    boundaries = np.flatnonzero(np.concatenate(([True], codes[1:] != codes[:-1])))
    sums = np.add.reduceat(pts, boundaries, axis=0)
    counts = np.diff(np.concatenate((boundaries, [codes.shape[0]])))
    means = sums / counts[:, None]
    group = np.repeat(np.arange(boundaries.shape[0]), counts)
    d2 = np.einsum("ij,ij->i", pts - means[group], pts - means[group])
    pick = np.lexsort((d2, group))
    return pts[pick[boundaries]]


def undistort(scan: ScanFrame, imu_window: list[ImuSample],
              state_at_base: NavState, max_imu_gap: float = 0.05,
              extrinsic: PoseSE3 | None = None):
    """Re-express scan points in the scan-end sensor frame.

    Propagates body poses through the IMU window from the base state, then
    linearly interpolates pose (Exp/Log on rotation) at each point's
    instant. An IMU gap above max_imu_gap inside the scan flags the frame
    and returns the points untouched.

    Returns (points, skipped_flag).
    """
    pts = np.asarray(scan.points, dtype=np.float64)
    if len(scan) == 0:
        return pts.copy(), False
    base = scan.base_stamp
    end = scan.end_stamp

    before = [s for s in imu_window if s.stamp <= base]
    inside = sorted((s for s in imu_window if base < s.stamp <= end),
                    key=lambda s: s.stamp)
    if not before:
        return pts.copy(), True
    active = max(before, key=lambda s: s.stamp)

    knot_times = [base]
    knot_rot = [state_at_base.rotation]
    knot_pos = [state_at_base.position]
    st = state_at_base.copy()
    cov = np.zeros((15, 15))  # covariance unused here
    for s in inside:
        dt = s.stamp - st.stamp
        if dt > 0:
            st, cov = propagate(st, cov, active, dt)
            knot_times.append(s.stamp)
            knot_rot.append(st.rotation)
            knot_pos.append(st.position)
        active = s
    if end > st.stamp:
        st, cov = propagate(st, cov, active, end - st.stamp)
        knot_times.append(end)
        knot_rot.append(st.rotation)
        knot_pos.append(st.position)

    times = np.array(knot_times)
    if np.diff(times).max(initial=0.0) > max_imu_gap:
        return pts.copy(), True

    ext = extrinsic if extrinsic is not None else PoseSE3.identity()
    pts_body = ext.transform(pts)

    stamps = base + np.asarray(scan.offsets, dtype=np.float64)
    rot_end = knot_rot[-1]
    pos_end = knot_pos[-1]
    out = np.empty_like(pts_body)
    if len(times) == 1:
        out = pts_body
    else:
        bracket = np.clip(np.searchsorted(times, stamps, side="right") - 1,
                          0, len(times) - 2)
        for b in np.unique(bracket):
            sel = bracket == b
            t0, t1 = times[b], times[b + 1]
            alpha = (stamps[sel] - t0) / (t1 - t0)
            dtheta = log_so3(knot_rot[b].T @ knot_rot[b + 1])
            rots = knot_rot[b] @ exp_so3_batch(alpha[:, None] * dtheta)
            pos = knot_pos[b] + alpha[:, None] * (knot_pos[b + 1] - knot_pos[b])
            world = np.einsum("nij,nj->ni", rots, pts_body[sel]) + pos
            out[sel] = (world - pos_end) @ rot_end
    inv_ext = ext.inverse()
    return inv_ext.transform(out), False


class OdometryPipeline:
    """Sequential scan-by-scan odometry over a surfel voxel map."""

    def __init__(self, cfg: PipelineConfig | None = None):
        self.cfg = cfg if cfg is not None else PipelineConfig()
        kernels.warmup()  # keep JIT load out of the first frame's timings
        self.map = SurfelVoxelMap(self.cfg.fine_edge, self.cfg.min_planarity,
                                  self.cfg.min_children)
        self.state: NavState | None = None
        self.cov: np.ndarray | None = None
        self.initialized = False
        self.trajectory: list[tuple[float, PoseSE3]] = []
        self.frames: list[FrameStats] = []
        self._init_buf: list[ImuSample] = []
        self._queue: deque[ImuSample] = deque()
        self._window: deque[ImuSample] = deque()  # recent samples for undistortion
        self._cur_imu: ImuSample | None = None
        self._last_trim_pos: np.ndarray | None = None
        self._frame_index = 0

    def feed_imu(self, sample: ImuSample) -> None:
        if self.initialized:
            self._queue.append(sample)
            return
        self._init_buf.append(sample)
        span = self._init_buf[-1].stamp - self._init_buf[0].stamp
        if span < self.cfg.init_window or len(self._init_buf) < 100:
            return
        try:
            gravity, gyro_bias, rotation = static_init(self._init_buf)
        except InitializationError:
            # platform still moving: slide the window and wait for stillness
            drop = len(self._init_buf) // 2
            del self._init_buf[:drop]
            return
        last = self._init_buf[-1]
        self.state = NavState(rotation=rotation, gravity=gravity,
                              gyro_bias=gyro_bias, stamp=last.stamp)
        self.cov = initial_covariance()
        self._cur_imu = last
        self._window.append(last)
        self.initialized = True
        self._init_buf.clear()

    def _advance_to(self, t: float) -> None:
        """Propagate the filter to time t with zero-order-held readings."""
        while self._queue and self._queue[0].stamp <= t:
            s = self._queue.popleft()
            dt = s.stamp - self.state.stamp
            if dt > 0:
                self.state, self.cov = propagate(self.state, self.cov,
                                                 self._cur_imu, dt, self.cfg.noise)
            self._cur_imu = s
            self._window.append(s)
        if t > self.state.stamp:
            self.state, self.cov = propagate(self.state, self.cov,
                                             self._cur_imu, t - self.state.stamp,
                                             self.cfg.noise)

    def _prune_window(self, before: float) -> None:
        while len(self._window) > 1 and self._window[1].stamp <= before:
            self._window.popleft()

    def current_pose(self) -> PoseSE3:
        """Body pose composed with the extrinsic: world <- lidar."""
        body = PoseSE3(self.state.rotation.copy(), self.state.position.copy())
        return body.compose(self.cfg.extrinsic)

    def process_scan(self, scan: ScanFrame) -> tuple[PoseSE3, FrameStats]:
        if not self.initialized:
            raise RuntimeError("pipeline not initialized: feed stationary IMU first")
        end = scan.end_stamp
        if self._queue and self._queue[-1].stamp < end:
            raise ValueError("IMU must be buffered past the scan end")

        t_start = time.perf_counter()
        self._prune_window(scan.base_stamp)
        self._advance_to(scan.base_stamp)
        state_base = self.state.copy()
        self._advance_to(end)

        window = [s for s in self._window if s.stamp <= end]
        full, undistort_skipped = undistort(scan, window, state_base,
                                            self.cfg.max_imu_gap, self.cfg.extrinsic)
        pts = downsample(full, self.cfg.downsample_leaf)
        pts_body = self.cfg.extrinsic.transform(pts)

        self.state, self.cov, up = iekf_update(self.state, self.cov, pts_body,
                                               self.map, self.cfg.update)

        t_map0 = time.perf_counter()
        pose = self.current_pose()
        body = PoseSE3(self.state.rotation, self.state.position)
        # seed the map with the full-resolution registered cloud: the
        # downsample leaf matches the coarse cell, so the reduced cloud
        # alone would occupy one fine child per coarse voxel per frame and
        # starve surfels of children
        self.map.insert_points(self.cfg.extrinsic.transform(full), body)
        self.map.recompute_dirty()
        if self._last_trim_pos is None:
            self._last_trim_pos = self.state.position.copy()
        elif (np.linalg.norm(self.state.position - self._last_trim_pos)
              > self.map.coarse_edge):
            self.map.trim(self.state.position, self.cfg.half_extent)
            self._last_trim_pos = self.state.position.copy()
        t_map1 = time.perf_counter()

        n = max(1, pts.shape[0])
        passes = max(1, up.iterations)
        stats = FrameStats(
            frame_index=self._frame_index,
            n_points=int(pts.shape[0]),
            n_corr=up.n_matched,
            iters=up.iterations,
            query_us_per_pt=up.query_seconds * 1e6 / (n * passes),
            plane_us_per_pt=up.build_seconds * 1e6 / (n * passes),
            map_update_ms=(t_map1 - t_map0) * 1e3,
            total_ms=(time.perf_counter() - t_start) * 1e3,
            query_ms=up.query_seconds * 1e3,
            plane_ms=up.build_seconds * 1e3,
            update_skipped=up.skipped,
            undistort_skipped=undistort_skipped,
        )
        self._frame_index += 1
        self.frames.append(stats)
        self.trajectory.append((end, pose))
        return pose, stats
