"""Command-line interface.

Subcommands:
    synth    generate a synthetic dataset directory
    run      run odometry over a dataset, write est.tum + timing.csv
    eval     translational APE between two TUM trajectories
    bench    surfel map vs query-time-fitting baseline benchmark (CSV)
    kernels  numba vs pure-numpy kernel lane benchmark (CSV)

Exit codes: 0 success, 1 usage error, 2 data error, 3 evaluation or
benchmark failure.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_EVAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="slio", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    sy = sub.add_parser("synth", help="generate a synthetic dataset")
    sy.add_argument("--out", required=True, help="output dataset directory")
    sy.add_argument("--spec", default="figure8",
                    choices=["rest", "line", "circle", "figure8"])
    sy.add_argument("--duration", type=float, default=60.0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--fov", default="ring360", choices=["cone70", "ring360"])
    sy.add_argument("--points-per-scan", type=int, default=4096)
    sy.add_argument("--range-noise", type=float, default=0.0,
                    help="LiDAR range noise std, meters")
    sy.add_argument("--imu-noise", action="store_true",
                    help="add MEMS-grade IMU noise and fixed biases")

    ru = sub.add_parser("run", help="run odometry over a dataset")
    ru.add_argument("--data", required=True)
    ru.add_argument("--config", default=None,
                    help="config file (default: DATA/config.toml)")
    ru.add_argument("--out-traj", default="est.tum")
    ru.add_argument("--out-timing", default="timing.csv")

    ev = sub.add_parser("eval", help="APE between two TUM trajectories")
    ev.add_argument("--est", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--max-dt", type=float, default=0.02)

    be = sub.add_parser("bench", help="map structure benchmark")
    be.add_argument("--sizes", default="10000,100000,1000000",
                    help="comma-separated coarse-voxel map sizes")
    be.add_argument("--queries", type=int, default=100_000)
    be.add_argument("--k", type=int, default=5)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--cap", type=int, default=32,
                    help="baseline raw points kept per cell")
    be.add_argument("--repeats", type=int, default=5)

    ke = sub.add_parser("kernels", help="numba vs numpy kernel benchmark")
    ke.add_argument("--size", type=int, default=20_000,
                    help="coarse cells in the test map")
    ke.add_argument("--queries", type=int, default=50_000)
    ke.add_argument("--seed", type=int, default=0)
    ke.add_argument("--repeats", type=int, default=5)
    return p


def _cmd_synth(args) -> int:
    from .pipeline import PipelineConfig
    from .simulate import DatasetSpec, TrajectorySpec, synthesize
    from . import dataset_io

    # a line at cruise speed must stay inside the default room
    speed = 0.25 if args.spec == "line" else 1.0
    traj = TrajectorySpec(kind=args.spec, duration=args.duration, speed=speed)
    spec = DatasetSpec(trajectory=traj, pattern=args.fov,
                       points_per_scan=args.points_per_scan,
                       range_noise_std=args.range_noise, seed=args.seed)
    if args.imu_noise:
        # MEMS-grade: continuous densities from the filter defaults scaled
        # to per-sample stds at the IMU rate, plus fixed turn-on biases
        cfg = PipelineConfig()
        rate = traj.imu_rate
        spec.noise_std_gyro = cfg.noise.gyro * np.sqrt(rate)
        spec.noise_std_accel = cfg.noise.accel * np.sqrt(rate)
        spec.bias_gyro = np.array([0.002, -0.001, 0.0015])
        spec.bias_accel = np.array([0.02, -0.015, 0.01])
    imu, frames, gt = synthesize(spec)
    manifest = dataset_io.write_dataset(args.out, imu, frames, gt, PipelineConfig())
    counts = manifest["counts"]
    print(f"wrote {args.out}: {counts['imu_samples']} imu samples, "
          f"{counts['scan_frames']} frames, {counts['scan_points']} points")
    return EXIT_OK


def _cmd_run(args) -> int:
    from . import dataset_io

    cfg = dataset_io.read_config(args.config) if args.config else None
    pipeline, agg = dataset_io.run_dataset(args.data, cfg)
    dataset_io.write_tum(args.out_traj, pipeline.trajectory)
    dataset_io.write_timing(args.out_timing, pipeline.frames)
    skipped = sum(1 for f in pipeline.frames if f.update_skipped)
    print(f"frames={len(pipeline.frames)} skipped_updates={skipped}")
    for key in sorted(agg):
        print(f"{key}={agg[key]:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import dataset_io
    from .evaluate import EvaluationError, align_se3, ape_rmse, associate

    est = dataset_io.read_tum(args.est)
    ref = dataset_io.read_tum(args.ref)
    try:
        pairs = associate(est, ref, args.max_dt)
        report = ape_rmse(pairs, align_se3(pairs))
    except EvaluationError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_EVAL
    for line in report.lines():
        print(line)
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .bench import bench_structures, structure_rows_csv

    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        print(f"error: bad --sizes value {args.sizes!r}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = bench_structures(sizes, args.queries, args.k, args.seed,
                                cap=args.cap, repeats=args.repeats)
    except (ValueError, MemoryError) as exc:
        print(f"benchmark failed: {exc}", file=sys.stderr)
        return EXIT_EVAL
    print(structure_rows_csv(rows))
    return EXIT_OK


def _cmd_kernels(args) -> int:
    from .bench import backend_rows_csv, bench_backends

    try:
        rows = bench_backends(args.size, args.queries, args.seed, args.repeats)
    except RuntimeError as exc:
        print(f"benchmark failed: {exc}", file=sys.stderr)
        return EXIT_EVAL
    print(backend_rows_csv(rows))
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "run": _cmd_run,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "kernels": _cmd_kernels,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    from .dataset_io import DataError
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
