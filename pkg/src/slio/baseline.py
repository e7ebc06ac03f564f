"""Query-time-fitting reference matcher.

Models the classic LIO correspondence path the surfel map replaces: raw
points binned in coarse voxels, a 27-cell neighborhood gather of the k
nearest points per query, then a runtime PCA plane fit. Shares the Morton
tables so benchmark deltas isolate neighbor gathering + fitting cost.
Used for benchmarks and cross-validation only.
"""
from __future__ import annotations

import numpy as np

from . import kernels, morton
from .geometry import PoseSE3
from .hashmap import CodeTable

DEFAULT_CAP = 32
DEFAULT_K = 5


class RawPointMap:
    """Coarse voxel bins of raw points, capped first-in per cell."""

    def __init__(self, coarse_edge: float = 0.5, cap: int = DEFAULT_CAP,
                 eps: float = 1e-6):
        self.coarse_edge = float(coarse_edge)
        self.cap = int(cap)
        self.eps = float(eps)
        self._table = CodeTable()
        self.n_cells = 0
        self.cell_count = np.zeros(1024, dtype=np.int64)
        self.cell_points = np.zeros((1024, self.cap, 3), dtype=np.float32)

    def _ensure(self, extra: int) -> None:
        need = self.n_cells + extra
        cap = self.cell_count.shape[0]
        if need <= cap:
            return
        new = max(2 * cap, need)
        self.cell_count = np.concatenate(
            [self.cell_count, np.zeros(new - cap, dtype=np.int64)])
        self.cell_points = np.concatenate(
            [self.cell_points, np.zeros((new - cap, self.cap, 3), dtype=np.float32)])

    def insert_raw(self, points: np.ndarray, pose: PoseSE3 | None = None) -> int:
        """Bin points; full cells drop new arrivals. Returns stored count."""
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.size == 0:
            return 0
        if pose is not None:
            pts = pose.transform(pts)
        keys = morton.quantize(pts, self.coarse_edge)
        ok = morton.in_range(keys)
        pts = np.ascontiguousarray(pts[ok])
        if pts.shape[0] == 0:
            return 0
        codes = morton.encode(keys[ok])
        self._table.reserve(pts.shape[0])
        self._ensure(pts.shape[0])
        n_cells, n_stored = kernels.raw_insert(
            self._table.keys, self._table.vals,
            self.cell_count, self.cell_points, self.n_cells, codes, pts)
        self._table.count += n_cells - self.n_cells
        self.n_cells = int(n_cells)
        return int(n_stored)

    @property
    def point_count(self) -> int:
        return int(self.cell_count[:self.n_cells].sum())

    def gather(self, points_w: np.ndarray, k: int = DEFAULT_K):
        """k nearest stored points from the 27-cell neighborhood of each
        query. Returns (neighbors (Q,k,3), found (Q,))."""
        pts = np.ascontiguousarray(points_w, dtype=np.float64)
        keys = np.ascontiguousarray(morton.quantize(pts, self.coarse_edge))
        return kernels.knn_gather(
            self._table.keys, self._table.vals,
            self.cell_count, self.cell_points, keys, pts, k)

    def fit(self, neighbors: np.ndarray, found: np.ndarray):
        """Runtime PCA over gathered neighbors -> (normals, centroids)."""
        return kernels.fit_planes(neighbors, found, self.eps)

    def knn_plane(self, point_w: np.ndarray, k: int = DEFAULT_K):
        """Plane (normal, centroid) from the k nearest points around one
        query, or None when fewer than k points are within the 27 cells."""
        if k < 3:
            raise ValueError("k must be at least 3 for a plane fit")
        neigh, found = self.gather(np.asarray(point_w, dtype=np.float64)[None, :], k)
        if not found[0]:
            return None
        normals, cents = self.fit(neigh, found)
        return normals[0], cents[0]
