import json
import os

import numpy as np
import pytest

from slio import dataset_io
from slio.dataset_io import DataError
from slio.geometry import PoseSE3, exp_so3
from slio.pipeline import PipelineConfig
from slio.simulate import DatasetSpec, TrajectorySpec, synthesize


def _tiny_dataset():
    spec = DatasetSpec(trajectory=TrajectorySpec(kind="circle", duration=2.0),
                       points_per_scan=256, seed=1)
    return synthesize(spec)


class TestImuRoundtrip:
    def test_value_identical(self, tmp_path):
        imu, _, _ = _tiny_dataset()
        path = tmp_path / "imu.csv"
        dataset_io.write_imu(path, imu)
        back = dataset_io.read_imu(path)
        assert len(back) == len(imu)
        for a, b in zip(imu, back):
            assert a.stamp == b.stamp
            assert np.array_equal(a.gyro, b.gyro)
            assert np.array_equal(a.accel, b.accel)

    def test_rejects_unsorted(self, tmp_path):
        path = tmp_path / "imu.csv"
        path.write_text("t,gx,gy,gz,ax,ay,az\n1.0,0,0,0,0,0,9.81\n0.5,0,0,0,0,0,9.81\n")
        with pytest.raises(DataError, match="increasing"):
            dataset_io.read_imu(path)


class TestScanRoundtrip:
    def test_value_identical(self, tmp_path):
        _, frames, _ = _tiny_dataset()
        dataset_io.write_scans(tmp_path, frames)
        back = list(dataset_io.iter_scans(tmp_path))
        assert len(back) == len(frames)
        for a, b in zip(frames, back):
            assert a.base_stamp == b.base_stamp
            assert np.array_equal(a.offsets, b.offsets)
            assert np.array_equal(a.points, b.points)

    def test_decreasing_offsets_rejected(self, tmp_path):
        (tmp_path / "scans").mkdir()
        (tmp_path / "scans" / "index.csv").write_text(
            "frame,file,base_stamp\n0,000000.csv,0.0\n")
        (tmp_path / "scans" / "000000.csv").write_text(
            "offset,x,y,z\n0.02,1,2,3\n0.01,1,2,3\n")
        with pytest.raises(DataError, match="non-decreasing"):
            next(dataset_io.iter_scans(tmp_path))

    def test_streaming_is_lazy(self, tmp_path):
        _, frames, _ = _tiny_dataset()
        dataset_io.write_scans(tmp_path, frames)
        # remove a late scan file: consuming only early frames must work,
        # proving files are opened on demand
        os.remove(tmp_path / "scans" / f"{len(frames) - 1:06d}.csv")
        it = dataset_io.iter_scans(tmp_path)
        for _ in range(3):
            next(it)
        with pytest.raises(DataError):
            list(it)


class TestTumRoundtrip:
    def test_value_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        traj = [(0.1 * k, PoseSE3(exp_so3(rng.normal(size=3)), rng.normal(size=3)))
                for k in range(20)]
        path = tmp_path / "t.tum"
        dataset_io.write_tum(path, traj)
        back = dataset_io.read_tum(path)
        for (ta, pa), (tb, pb) in zip(traj, back):
            assert ta == tb
            assert np.array_equal(pa.translation, pb.translation)
            # rotation goes through a quaternion: near machine precision
            assert np.abs(pa.rotation - pb.rotation).max() < 1e-12

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "e.tum"
        path.write_text("# nothing\n")
        with pytest.raises(DataError):
            dataset_io.read_tum(path)

    def test_unsorted_stamps_rejected(self, tmp_path):
        path = tmp_path / "u.tum"
        path.write_text("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n")
        with pytest.raises(DataError, match="increasing"):
            dataset_io.read_tum(path)


class TestConfigRoundtrip:
    def test_defaults_roundtrip(self, tmp_path):
        cfg = PipelineConfig()
        path = tmp_path / "config.toml"
        dataset_io.write_config(path, cfg)
        back = dataset_io.read_config(path)
        assert back.fine_edge == cfg.fine_edge
        assert back.min_planarity == cfg.min_planarity
        assert back.min_children == cfg.min_children
        assert back.update.sigma == cfg.update.sigma
        assert back.noise.gyro == cfg.noise.gyro
        assert np.array_equal(back.extrinsic.rotation, cfg.extrinsic.rotation)

    def test_non_default_values(self, tmp_path):
        cfg = PipelineConfig(fine_edge=0.1, min_planarity=0.5, half_extent=42.0)
        cfg.update.max_iter = 9
        cfg.extrinsic = PoseSE3(exp_so3(np.array([0.0, 0.0, 0.3])),
                                np.array([0.1, 0.2, 0.3]))
        path = tmp_path / "config.toml"
        dataset_io.write_config(path, cfg)
        back = dataset_io.read_config(path)
        assert back.fine_edge == 0.1
        assert back.half_extent == 42.0
        assert back.update.max_iter == 9
        assert np.array_equal(back.extrinsic.translation, cfg.extrinsic.translation)

    def test_bad_line(self, tmp_path):
        path = tmp_path / "config.toml"
        path.write_text("this is not a config\n")
        with pytest.raises(DataError):
            dataset_io.read_config(path)


class TestWriteDataset:
    def test_manifest_counts_and_hashes(self, tmp_path):
        imu, frames, gt = _tiny_dataset()
        manifest = dataset_io.write_dataset(tmp_path, imu, frames, gt)
        assert manifest["counts"]["imu_samples"] == len(imu)
        assert manifest["counts"]["scan_frames"] == len(frames)
        assert manifest["counts"]["gt_poses"] == len(gt)
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == manifest
        # hash actually matches file content
        assert manifest["files"]["imu.csv"] == dataset_io._sha256(tmp_path / "imu.csv")

    def test_empty_streams_valid_manifest(self, tmp_path):
        manifest = dataset_io.write_dataset(tmp_path, [], [], [])
        assert manifest["counts"]["imu_samples"] == 0
        assert manifest["counts"]["scan_frames"] == 0
        assert (tmp_path / "imu.csv").exists()
        assert (tmp_path / "gt.tum").exists()

    def test_deterministic_bytes(self, tmp_path):
        imu, frames, gt = _tiny_dataset()
        m1 = dataset_io.write_dataset(tmp_path / "a", imu, frames, gt)
        m2 = dataset_io.write_dataset(tmp_path / "b", imu, frames, gt)
        assert m1["files"] == m2["files"]


def test_timing_csv_header(tmp_path):
    from slio.pipeline import FrameStats
    frames = [FrameStats(0, 100, 80, 3, 0.5, 0.1, 1.0, 5.0)]
    path = tmp_path / "timing.csv"
    dataset_io.write_timing(path, frames)
    lines = path.read_text().splitlines()
    assert lines[0] == ("frame_index,n_points,n_corr,iters,"
                        "query_us_per_pt,plane_us_per_pt,map_update_ms,total_ms")
    assert lines[1].startswith("0,100,80,3,")


def test_run_dataset_smoke(tmp_path):
    spec = DatasetSpec(trajectory=TrajectorySpec(kind="circle", duration=4.0),
                       points_per_scan=1024, seed=3)
    imu, frames, gt = synthesize(spec)
    dataset_io.write_dataset(tmp_path, imu, frames, gt)
    pipeline, agg = dataset_io.run_dataset(tmp_path)
    assert len(pipeline.trajectory) > 20
    assert "total_ms_median" in agg


def test_run_dataset_missing_dir(tmp_path):
    with pytest.raises(DataError):
        dataset_io.run_dataset(tmp_path / "nope")
