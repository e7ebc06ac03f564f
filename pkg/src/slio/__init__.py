"""LiDAR-inertial odometry on a two-level surfel voxel map.

Fine voxels accumulate centroids, coarse voxels carry precomputed planar
surfels behind Morton-keyed Robin Hood tables, and an error-state iterated
Kalman filter fuses IMU propagation with point-to-plane residuals whose
correspondences cost one hash probe per point.
"""
from .backend import BACKEND
from .baseline import RawPointMap
from .evaluate import ApeReport, align_se3, ape_rmse, associate
from .filter import ImuSample, NavState, NoiseModel, UpdateConfig
from .geometry import PoseSE3, exp_so3, log_so3, skew
from .pipeline import OdometryPipeline, PipelineConfig, ScanFrame
from .simulate import DatasetSpec, PlanarWorld, TrajectorySpec, default_room
from .voxmap import Surfel, SurfelVoxelMap, compute_surfel

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "RawPointMap", "ApeReport", "align_se3", "ape_rmse",
    "associate", "ImuSample", "NavState", "NoiseModel", "UpdateConfig",
    "PoseSE3", "exp_so3", "log_so3", "skew", "OdometryPipeline",
    "PipelineConfig", "ScanFrame", "DatasetSpec", "PlanarWorld",
    "TrajectorySpec", "default_room", "Surfel", "SurfelVoxelMap",
    "compute_surfel",
]
