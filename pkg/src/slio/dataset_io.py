"""Dataset directory formats and the scan-by-scan dataset runner.

Layout (all text, UTF-8, '#' starts a comment line):
    imu.csv            t,gx,gy,gz,ax,ay,az      (s, rad/s, m/s^2)
    scans/index.csv    frame,file,base_stamp
    scans/NNNNNN.csv   offset,x,y,z             (s, m)
    gt.tum             t x y z qx qy qz qw      (TUM convention)
    config.toml        flat key = value pairs (PipelineConfig)
    manifest.json      stream counts + sha256 per file

Floats are written with repr() so write->read roundtrips are value-exact
and byte-deterministic. Scans are streamed lazily; a long dataset is never
fully resident.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .filter import ImuSample, NoiseModel, UpdateConfig
from .geometry import PoseSE3, quaternion_to_rotation, rotation_to_quaternion
from .pipeline import (FrameStats, OdometryPipeline, PipelineConfig,
                       ScanFrame, aggregate_timings)


class DataError(RuntimeError):
    """Missing or malformed dataset content."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _data_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    yield line
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ─────────────────────────────────────────────────────────────
#  IMU stream
# ─────────────────────────────────────────────────────────────

def write_imu(path, samples: list[ImuSample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,gx,gy,gz,ax,ay,az\n")
        for s in samples:
            f.write(",".join([_fmt(s.stamp)] + [_fmt(v) for v in s.gyro]
                             + [_fmt(v) for v in s.accel]) + "\n")


def read_imu(path) -> list[ImuSample]:
    out = []
    last = -np.inf
    for line in _data_lines(path):
        if line.startswith("t,"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise DataError(f"bad imu row: {line!r}")
        vals = [float(p) for p in parts]
        if vals[0] <= last:
            raise DataError(f"imu stamps not strictly increasing at t={vals[0]}")
        last = vals[0]
        out.append(ImuSample(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
    return out


# ─────────────────────────────────────────────────────────────
#  Scan frames
# ─────────────────────────────────────────────────────────────

def write_scans(dataset_dir, frames: list[ScanFrame]) -> list[str]:
    scan_dir = os.path.join(dataset_dir, "scans")
    os.makedirs(scan_dir, exist_ok=True)
    names = []
    index_path = os.path.join(scan_dir, "index.csv")
    with open(index_path, "w", encoding="utf-8") as idx:
        idx.write("frame,file,base_stamp\n")
        for i, frame in enumerate(frames):
            name = f"{i:06d}.csv"
            names.append(name)
            idx.write(f"{i},{name},{_fmt(frame.base_stamp)}\n")
            with open(os.path.join(scan_dir, name), "w", encoding="utf-8") as f:
                f.write("offset,x,y,z\n")
                for off, p in zip(frame.offsets, frame.points):
                    f.write(f"{_fmt(off)},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}\n")
    return names


def _read_scan_file(path, base_stamp: float) -> ScanFrame:
    offsets = []
    points = []
    for line in _data_lines(path):
        if line.startswith("offset,"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"bad scan row in {path}: {line!r}")
        offsets.append(float(parts[0]))
        points.append([float(parts[1]), float(parts[2]), float(parts[3])])
    off = np.array(offsets, dtype=np.float64)
    if off.size and (off[0] < 0.0 or np.any(np.diff(off) < 0.0)):
        raise DataError(f"scan offsets in {path} must be non-negative and "
                        "non-decreasing")
    return ScanFrame(base_stamp, off,
                     np.array(points, dtype=np.float64).reshape(-1, 3))


def iter_scans(dataset_dir):
    """Lazily yield ScanFrame objects in frame order."""
    index_path = os.path.join(dataset_dir, "scans", "index.csv")
    for line in _data_lines(index_path):
        if line.startswith("frame,"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"bad index row: {line!r}")
        name, base = parts[1], float(parts[2])
        yield _read_scan_file(os.path.join(dataset_dir, "scans", name), base)


def scan_count(dataset_dir) -> int:
    index_path = os.path.join(dataset_dir, "scans", "index.csv")
    return sum(1 for line in _data_lines(index_path) if not line.startswith("frame,"))


# ─────────────────────────────────────────────────────────────
#  TUM trajectories
# ─────────────────────────────────────────────────────────────

def write_tum(path, trajectory) -> None:
    """trajectory: iterable of (stamp, PoseSE3) or (stamp, rotation, position)."""
    with open(path, "w", encoding="utf-8") as f:
        for entry in trajectory:
            if len(entry) == 2:
                stamp, pose = entry
                rot, pos = pose.rotation, pose.translation
            else:
                stamp, rot, pos = entry
            q = rotation_to_quaternion(rot)
            f.write(" ".join([_fmt(stamp), _fmt(pos[0]), _fmt(pos[1]), _fmt(pos[2]),
                              _fmt(q[0]), _fmt(q[1]), _fmt(q[2]), _fmt(q[3])]) + "\n")


def read_tum(path) -> list[tuple[float, PoseSE3]]:
    out = []
    last = -np.inf
    for line in _data_lines(path):
        parts = line.split()
        if len(parts) != 8:
            raise DataError(f"bad trajectory row: {line!r}")
        vals = [float(p) for p in parts]
        if vals[0] <= last:
            raise DataError(f"trajectory stamps not strictly increasing at t={vals[0]}")
        last = vals[0]
        rot = quaternion_to_rotation(np.array(vals[4:8]))
        out.append((vals[0], PoseSE3(rot, np.array(vals[1:4]))))
    if not out:
        raise DataError(f"empty trajectory file {path}")
    return out


# ─────────────────────────────────────────────────────────────
#  Pipeline config
# ─────────────────────────────────────────────────────────────

def config_to_dict(cfg: PipelineConfig) -> dict:
    ext_r = " ".join(_fmt(v) for v in cfg.extrinsic.rotation.ravel())
    ext_t = " ".join(_fmt(v) for v in cfg.extrinsic.translation)
    return {
        "fine_edge": _fmt(cfg.fine_edge),
        "min_planarity": _fmt(cfg.min_planarity),
        "min_children": str(cfg.min_children),
        "downsample_leaf": _fmt(cfg.downsample_leaf),
        "half_extent": _fmt(cfg.half_extent),
        "init_window": _fmt(cfg.init_window),
        "max_imu_gap": _fmt(cfg.max_imu_gap),
        "gyro_noise": _fmt(cfg.noise.gyro),
        "accel_noise": _fmt(cfg.noise.accel),
        "gyro_bias_noise": _fmt(cfg.noise.gyro_bias),
        "accel_bias_noise": _fmt(cfg.noise.accel_bias),
        "meas_sigma": _fmt(cfg.update.sigma),
        "residual_gate": _fmt(cfg.update.gate),
        "min_matches": str(cfg.update.min_matches),
        "iekf_tol": _fmt(cfg.update.tol),
        "iekf_max_iter": str(cfg.update.max_iter),
        "extrinsic_rotation": ext_r,
        "extrinsic_translation": ext_t,
    }


def config_from_dict(d: dict) -> PipelineConfig:
    def get(key, conv, default):
        return conv(d[key]) if key in d else default

    base = PipelineConfig()
    ext = PoseSE3.identity()
    if "extrinsic_rotation" in d:
        ext.rotation = np.array([float(v) for v in d["extrinsic_rotation"].split()]).reshape(3, 3)
    if "extrinsic_translation" in d:
        ext.translation = np.array([float(v) for v in d["extrinsic_translation"].split()])
    return PipelineConfig(
        fine_edge=get("fine_edge", float, base.fine_edge),
        min_planarity=get("min_planarity", float, base.min_planarity),
        min_children=get("min_children", int, base.min_children),
        downsample_leaf=get("downsample_leaf", float, base.downsample_leaf),
        half_extent=get("half_extent", float, base.half_extent),
        init_window=get("init_window", float, base.init_window),
        max_imu_gap=get("max_imu_gap", float, base.max_imu_gap),
        noise=NoiseModel(
            gyro=get("gyro_noise", float, base.noise.gyro),
            accel=get("accel_noise", float, base.noise.accel),
            gyro_bias=get("gyro_bias_noise", float, base.noise.gyro_bias),
            accel_bias=get("accel_bias_noise", float, base.noise.accel_bias)),
        update=UpdateConfig(
            sigma=get("meas_sigma", float, base.update.sigma),
            gate=get("residual_gate", float, base.update.gate),
            min_matches=get("min_matches", int, base.update.min_matches),
            tol=get("iekf_tol", float, base.update.tol),
            max_iter=get("iekf_max_iter", int, base.update.max_iter)),
        extrinsic=ext,
    )


def write_config(path, cfg: PipelineConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for key, value in config_to_dict(cfg).items():
            f.write(f"{key} = {value}\n")


def read_config(path) -> PipelineConfig:
    d = {}
    for line in _data_lines(path):
        if "=" not in line:
            raise DataError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        d[key.strip()] = value.strip()
    return config_from_dict(d)


# ─────────────────────────────────────────────────────────────
#  Whole-dataset write + manifest
# ─────────────────────────────────────────────────────────────

def write_dataset(dataset_dir, imu: list[ImuSample], frames: list[ScanFrame],
                  gt, cfg: PipelineConfig | None = None) -> dict:
    """Write all streams; returns (and saves) the manifest."""
    os.makedirs(dataset_dir, exist_ok=True)
    write_imu(os.path.join(dataset_dir, "imu.csv"), imu)
    scan_names = write_scans(dataset_dir, frames)
    write_tum(os.path.join(dataset_dir, "gt.tum"), gt)
    write_config(os.path.join(dataset_dir, "config.toml"),
                 cfg if cfg is not None else PipelineConfig())
    files = ["imu.csv", "gt.tum", "config.toml", os.path.join("scans", "index.csv")]
    files += [os.path.join("scans", n) for n in scan_names]
    manifest = {
        "counts": {
            "imu_samples": len(imu),
            "scan_frames": len(frames),
            "gt_poses": len(gt),
            "scan_points": int(sum(len(f) for f in frames)),
        },
        "files": {name: _sha256(os.path.join(dataset_dir, name)) for name in files},
    }
    with open(os.path.join(dataset_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# ─────────────────────────────────────────────────────────────
#  Timing CSV
# ─────────────────────────────────────────────────────────────

TIMING_HEADER = ("frame_index,n_points,n_corr,iters,"
                 "query_us_per_pt,plane_us_per_pt,map_update_ms,total_ms")


def write_timing(path, frames: list[FrameStats]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(TIMING_HEADER + "\n")
        for s in frames:
            f.write(f"{s.frame_index},{s.n_points},{s.n_corr},{s.iters},"
                    f"{_fmt(s.query_us_per_pt)},{_fmt(s.plane_us_per_pt)},"
                    f"{_fmt(s.map_update_ms)},{_fmt(s.total_ms)}\n")


# ─────────────────────────────────────────────────────────────
#  Dataset runner
# ─────────────────────────────────────────────────────────────

def run_dataset(dataset_dir, cfg: PipelineConfig | None = None):
    """Stream a dataset through the odometry pipeline.

    Scans arriving before static initialization completes are skipped
    (the stock trajectories start at rest). Returns (pipeline, aggregates).
    """
    if cfg is None:
        cfg_path = os.path.join(dataset_dir, "config.toml")
        cfg = read_config(cfg_path) if os.path.exists(cfg_path) else PipelineConfig()
    imu = read_imu(os.path.join(dataset_dir, "imu.csv"))
    if not imu:
        raise DataError("dataset has no IMU samples")
    pipeline = OdometryPipeline(cfg)
    i = 0
    n_imu = len(imu)
    for scan in iter_scans(dataset_dir):
        end = scan.end_stamp
        while i < n_imu and imu[i].stamp <= end + 0.02:
            pipeline.feed_imu(imu[i])
            i += 1
        if not pipeline.initialized:
            continue
        if scan.base_stamp < pipeline.state.stamp:
            continue
        if i >= n_imu and imu[-1].stamp < end:
            break  # stream ends mid-scan
        pipeline.process_scan(scan)
    if not pipeline.trajectory:
        raise DataError("no scans were processed (dataset too short?)")
    return pipeline, aggregate_timings(pipeline.frames)
