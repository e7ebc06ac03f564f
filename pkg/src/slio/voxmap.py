"""Two-level voxel map with precomputed surfels.

Fine voxels (edge `fine_edge`) store only an incrementally updated centroid
and a point count, never raw points. Coarse voxels (edge exactly
3 * fine_edge) own the 3x3x3 block of fine children and carry a surfel
fitted by PCA over the occupied children's centroids. Surfel refreshes are
lazy: inserts only mark the parent dirty; recompute_dirty() runs once per
map update and refreshes every queued voxel.

Correspondence retrieval is a single Robin Hood table probe at the coarse
resolution: no neighbor enumeration, no fitting at query time.

Mutators (insert_points / recompute_dirty / trim) need exclusive access;
query_batch / query_surfel only read and may run concurrently between
mutations. The map itself does no locking.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels, morton
from .geometry import PoseSE3
from .hashmap import CodeTable

DEFAULT_MIN_CHILDREN = 5
DEFAULT_MIN_PLANARITY = 0.01
DEFAULT_EPS = 1e-6


@dataclass
class Surfel:
    """Planar primitive: unit normal, centroid, planarity confidence."""

    normal: np.ndarray
    centroid: np.ndarray
    planarity: float
    child_count: int = 0


@dataclass
class InsertStats:
    new_fine: int
    dirtied_coarse: int
    skipped: int


def compute_surfel(centroids: np.ndarray, eps: float = DEFAULT_EPS) -> Surfel:
    """PCA plane fit over a set of centroids.

    Population covariance (divide by m), normal = eigenvector of the
    smallest eigenvalue with its largest-|component| made positive,
    planarity = (lam2 - lam3) / (lam1 + eps). Fully coincident inputs
    (lam1 < 1e-12) return planarity 0.
    """
    pts = np.ascontiguousarray(centroids, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("centroids must have shape (m, 3)")
    if pts.shape[0] < 3:
        raise ValueError(f"need at least 3 centroids for a plane fit, got {pts.shape[0]}")
    normal, centroid, rho = kernels.surfel_from_points(pts, eps)
    return Surfel(np.asarray(normal), np.asarray(centroid), float(rho), pts.shape[0])


class SurfelVoxelMap:
    def __init__(self,
                 fine_edge: float = 0.5 / 3.0,
                 min_planarity: float = DEFAULT_MIN_PLANARITY,
                 min_children: int = DEFAULT_MIN_CHILDREN,
                 eps: float = DEFAULT_EPS):
        if fine_edge <= 0.0:
            raise ValueError("fine_edge must be positive")
        self.fine_edge = float(fine_edge)
        self.coarse_edge = 3.0 * self.fine_edge  # exact by construction
        self.min_planarity = float(min_planarity)
        self.min_children = int(min_children)
        self.eps = float(eps)

        self._t0 = CodeTable()
        self._t1 = CodeTable()
        self.n_l0 = 0
        self.n_l1 = 0
        self.n_dirty = 0

        cap0, cap1 = 1024, 256
        self.l0_centroid = np.zeros((cap0, 3))
        self.l0_count = np.zeros(cap0, dtype=np.int64)
        self.l0_code = np.zeros(cap0, dtype=np.uint64)
        self.l0_parent = np.full(cap0, -1, dtype=np.int64)
        self.l1_code = np.zeros(cap1, dtype=np.uint64)
        self.l1_children = np.full((cap1, 27), -1, dtype=np.int64)
        self.l1_child_count = np.zeros(cap1, dtype=np.int64)
        self.l1_dirty = np.zeros(cap1, dtype=np.bool_)
        self.l1_valid = np.zeros(cap1, dtype=np.bool_)
        self.l1_normal = np.zeros((cap1, 3))
        self.l1_centroid = np.zeros((cap1, 3))
        self.l1_rho = np.zeros(cap1)
        self.dirty_idx = np.zeros(cap1, dtype=np.int64)

    # ── capacity management ──────────────────────────────────

    def _ensure_l0(self, extra: int) -> None:
        need = self.n_l0 + extra
        cap = self.l0_count.shape[0]
        if need <= cap:
            return
        new = max(2 * cap, need)
        self.l0_centroid = np.concatenate([self.l0_centroid, np.zeros((new - cap, 3))])
        self.l0_count = np.concatenate([self.l0_count, np.zeros(new - cap, dtype=np.int64)])
        self.l0_code = np.concatenate([self.l0_code, np.zeros(new - cap, dtype=np.uint64)])
        self.l0_parent = np.concatenate([self.l0_parent, np.full(new - cap, -1, dtype=np.int64)])

    def _ensure_l1(self, extra: int) -> None:
        need = self.n_l1 + extra
        cap = self.l1_child_count.shape[0]
        if need <= cap:
            return
        new = max(2 * cap, need)
        grow = new - cap
        self.l1_code = np.concatenate([self.l1_code, np.zeros(grow, dtype=np.uint64)])
        self.l1_children = np.concatenate([self.l1_children, np.full((grow, 27), -1, dtype=np.int64)])
        self.l1_child_count = np.concatenate([self.l1_child_count, np.zeros(grow, dtype=np.int64)])
        self.l1_dirty = np.concatenate([self.l1_dirty, np.zeros(grow, dtype=np.bool_)])
        self.l1_valid = np.concatenate([self.l1_valid, np.zeros(grow, dtype=np.bool_)])
        self.l1_normal = np.concatenate([self.l1_normal, np.zeros((grow, 3))])
        self.l1_centroid = np.concatenate([self.l1_centroid, np.zeros((grow, 3))])
        self.l1_rho = np.concatenate([self.l1_rho, np.zeros(grow)])
        self.dirty_idx = np.concatenate([self.dirty_idx, np.zeros(grow, dtype=np.int64)])

    # ── mutators ─────────────────────────────────────────────

    def insert_points(self, points: np.ndarray, pose: PoseSE3 | None = None) -> InsertStats:
        """Transform points to world, fold them into fine centroids, and
        mark touched coarse voxels dirty (no surfel recompute here).

        Out-of-range points are skipped and counted, never fatal.
        """
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.size == 0:
            return InsertStats(0, 0, 0)
        if pose is not None:
            pts = pose.transform(pts)
        total = pts.shape[0]
        pts = pts[np.isfinite(pts).all(axis=1)]
        keys = morton.quantize(pts, self.fine_edge)
        ok = morton.in_range(keys)
        skipped = int(total - ok.sum())
        if not ok.all():
            pts = np.ascontiguousarray(pts[ok])
            keys = keys[ok]
        if pts.shape[0] == 0:
            return InsertStats(0, 0, skipped)

        codes0 = morton.encode(keys)
        pcodes = morton.encode(morton.parent_key(keys))
        cslots = np.ascontiguousarray(morton.child_slot(keys))

        n = pts.shape[0]
        self._t0.reserve(n)
        self._t1.reserve(n)
        self._ensure_l0(n)
        self._ensure_l1(n)

        n_l0, n_l1, n_dirty, new_l0, newly_dirty = kernels.map_insert(
            self._t0.keys, self._t0.vals,
            self.l0_centroid, self.l0_count, self.l0_code, self.l0_parent, self.n_l0,
            self._t1.keys, self._t1.vals,
            self.l1_code, self.l1_children, self.l1_child_count,
            self.l1_dirty, self.l1_valid, self.n_l1,
            self.dirty_idx, self.n_dirty,
            codes0, pcodes, cslots, pts)
        self._t0.count += n_l0 - self.n_l0
        self._t1.count += n_l1 - self.n_l1
        self.n_l0, self.n_l1, self.n_dirty = int(n_l0), int(n_l1), int(n_dirty)
        return InsertStats(int(new_l0), int(newly_dirty), skipped)

    def recompute_dirty(self) -> int:
        """Refresh every queued dirty coarse voxel.

        Voxels with at least min_children occupied children get a fresh
        surfel from their children's current centroids; the rest lose
        theirs. All dirty flags clear. Returns the number of surfels
        recomputed.
        """
        n = kernels.map_recompute(
            self.l1_children, self.l1_child_count, self.l1_dirty, self.l1_valid,
            self.l1_normal, self.l1_centroid, self.l1_rho, self.l0_centroid,
            self.dirty_idx, self.n_dirty, self.min_children, self.eps)
        self.n_dirty = 0
        return int(n)

    def trim(self, center: np.ndarray, half_extent: float) -> int:
        """Drop voxels whose cell centers leave the x/y box center +- half_extent.

        z is unbounded. Coarse voxels that lose children are re-marked dirty;
        ones losing all children are dropped. Returns total removed voxels
        (both levels).
        """
        if half_extent <= 0.0:
            raise ValueError("half_extent must be positive")
        if self.n_l0 == 0:
            return 0
        cx, cy = float(center[0]), float(center[1])

        k0 = morton.decode(self.l0_code[:self.n_l0])
        c0 = morton.cell_centers(k0, self.fine_edge)
        keep0 = (np.abs(c0[:, 0] - cx) <= half_extent) & (np.abs(c0[:, 1] - cy) <= half_extent)
        k1 = morton.decode(self.l1_code[:self.n_l1])
        c1 = morton.cell_centers(k1, self.coarse_edge)
        keep1 = (np.abs(c1[:, 0] - cx) <= half_extent) & (np.abs(c1[:, 1] - cy) <= half_extent)
        keep0 &= keep1[self.l0_parent[:self.n_l0]]

        # remap surviving children; drop coarse voxels left empty
        new_l0_idx = np.full(self.n_l0, -1, dtype=np.int64)
        new_l0_idx[keep0] = np.arange(int(keep0.sum()))
        rows1 = np.flatnonzero(keep1)
        ch = self.l1_children[rows1]
        ch = np.where(ch >= 0, new_l0_idx[np.where(ch >= 0, ch, 0)], -1)
        counts = (ch >= 0).sum(axis=1)
        lost = counts < self.l1_child_count[rows1]
        alive = counts > 0
        rows1 = rows1[alive]
        ch = ch[alive]
        counts = counts[alive]
        lost = lost[alive]

        removed = int((~keep0).sum()) + int(self.n_l1 - rows1.size)
        if removed == 0:
            return 0

        n0 = int(keep0.sum())
        n1 = rows1.size
        new_l1_idx = np.full(self.n_l1, -1, dtype=np.int64)
        new_l1_idx[rows1] = np.arange(n1)

        self.l0_centroid[:n0] = self.l0_centroid[:self.n_l0][keep0]
        self.l0_count[:n0] = self.l0_count[:self.n_l0][keep0]
        self.l0_code[:n0] = self.l0_code[:self.n_l0][keep0]
        self.l0_parent[:n0] = new_l1_idx[self.l0_parent[:self.n_l0][keep0]]

        self.l1_code[:n1] = self.l1_code[rows1]
        self.l1_children[:n1] = ch
        self.l1_child_count[:n1] = counts
        self.l1_valid[:n1] = self.l1_valid[rows1]
        self.l1_normal[:n1] = self.l1_normal[rows1]
        self.l1_centroid[:n1] = self.l1_centroid[rows1]
        self.l1_rho[:n1] = self.l1_rho[rows1]
        dirty = self.l1_dirty[rows1] | lost
        self.l1_dirty[:n1] = dirty

        self.n_l0, self.n_l1 = n0, n1
        dirty_rows = np.flatnonzero(dirty)
        self.n_dirty = dirty_rows.size
        self.dirty_idx[:self.n_dirty] = dirty_rows

        self._rebuild_tables()
        return removed

    def _rebuild_tables(self) -> None:
        for table, codes in ((self._t0, self.l0_code[:self.n_l0]),
                             (self._t1, self.l1_code[:self.n_l1])):
            table.clear()
            table.reserve(codes.shape[0])
            kernels.table_rehash(np.ascontiguousarray(codes),
                                 np.arange(codes.shape[0], dtype=np.int64),
                                 table.keys, table.vals)
            table.count = codes.shape[0]

    # ── queries (read-only) ──────────────────────────────────

    def query_batch(self, points_w: np.ndarray):
        """Surfel lookup for a batch of world points.

        One coarse-level table probe per point; a surfel is returned only
        if present and strictly above the planarity threshold.
        Returns (normals (Q,3), centroids (Q,3), planarities (Q,), found (Q,)).
        """
        pts = np.asarray(points_w, dtype=np.float64)
        finite = np.isfinite(pts).all(axis=1)
        keys = morton.quantize(np.where(finite[:, None], pts, 0.0), self.coarse_edge)
        ok = morton.in_range(keys) & finite
        codes = morton.encode(np.where(ok[:, None], keys, 0))
        return kernels.map_query(
            self._t1.keys, self._t1.vals, self.l1_valid,
            self.l1_normal, self.l1_centroid, self.l1_rho,
            codes, np.ascontiguousarray(ok), self.min_planarity)

    def query_surfel(self, point_w: np.ndarray) -> Surfel | None:
        normals, cents, rhos, found = self.query_batch(
            np.asarray(point_w, dtype=np.float64)[None, :])
        if not found[0]:
            return None
        row = self._t1.lookup(morton.encode(
            morton.quantize(point_w, self.coarse_edge)[None, :]))[0]
        return Surfel(normals[0], cents[0], float(rhos[0]),
                      int(self.l1_child_count[row]))

    # ── introspection / io ───────────────────────────────────

    @property
    def fine_count(self) -> int:
        return self.n_l0

    @property
    def coarse_count(self) -> int:
        return self.n_l1

    @property
    def surfel_count(self) -> int:
        return int(self.l1_valid[:self.n_l1].sum())

    def children_centroids(self, coarse_key) -> np.ndarray:
        """Centroids of a coarse voxel's occupied children in slot order."""
        code = morton.encode(np.asarray(coarse_key, dtype=np.int64)[None, :])
        row = self._t1.lookup(code)[0]
        if row < 0:
            return np.empty((0, 3))
        ch = self.l1_children[row]
        return self.l0_centroid[ch[ch >= 0]]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64([self.n_l0, self.n_l1, self.n_dirty]).tobytes())
        for arr in (self.l0_centroid[:self.n_l0], self.l0_count[:self.n_l0],
                    self.l0_code[:self.n_l0], self.l0_parent[:self.n_l0],
                    self.l1_code[:self.n_l1], self.l1_children[:self.n_l1],
                    self.l1_child_count[:self.n_l1], self.l1_dirty[:self.n_l1],
                    self.l1_valid[:self.n_l1], self.l1_normal[:self.n_l1],
                    self.l1_centroid[:self.n_l1], self.l1_rho[:self.n_l1],
                    self.dirty_idx[:self.n_dirty],
                    self._t0.keys, self._t0.vals, self._t1.keys, self._t1.vals):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def validate(self) -> None:
        """Raise AssertionError if parent/child bookkeeping is inconsistent."""
        n0, n1 = self.n_l0, self.n_l1
        assert self._t0.count == n0 and self._t1.count == n1
        rows0 = self._t0.lookup(self.l0_code[:n0])
        assert np.array_equal(rows0, np.arange(n0)), "fine table out of sync"
        rows1 = self._t1.lookup(self.l1_code[:n1])
        assert np.array_equal(rows1, np.arange(n1)), "coarse table out of sync"
        parents = self.l0_parent[:n0]
        assert np.all((parents >= 0) & (parents < n1))
        k0 = morton.decode(self.l0_code[:n0])
        expected_parent_codes = morton.encode(morton.parent_key(k0))
        assert np.array_equal(self.l1_code[parents], expected_parent_codes), \
            "fine voxel registered under wrong parent"
        slots = morton.child_slot(k0)
        assert np.array_equal(self.l1_children[parents, slots], np.arange(n0)), \
            "parent does not list its child"
        ch = self.l1_children[:n1]
        occupied = ch >= 0
        assert np.array_equal(occupied.sum(axis=1), self.l1_child_count[:n1])
        assert int(occupied.sum()) == n0, "child sets do not partition fine voxels"
        assert np.all(self.l1_child_count[:n1] <= 27)
        # clean voxel with enough children must hold a surfel
        settled = ~self.l1_dirty[:n1] & (self.l1_child_count[:n1] >= self.min_children)
        assert np.all(self.l1_valid[:n1][settled]), \
            "settled coarse voxel with enough children lacks a surfel"

    def dump_surfels(self, path) -> int:
        """One CSV record per coarse voxel: code, centroid, normal,
        planarity, child count (zeros when no surfel). Sorted by code."""
        order = np.argsort(self.l1_code[:self.n_l1], kind="stable")
        with open(path, "w", encoding="utf-8") as f:
            f.write("code,cx,cy,cz,nx,ny,nz,planarity,children\n")
            for i in order:
                if self.l1_valid[i]:
                    c = self.l1_centroid[i]
                    n = self.l1_normal[i]
                    rho = self.l1_rho[i]
                else:
                    c = np.zeros(3)
                    n = np.zeros(3)
                    rho = 0.0
                f.write(f"{int(self.l1_code[i])},{c[0]!r},{c[1]!r},{c[2]!r},"
                        f"{n[0]!r},{n[1]!r},{n[2]!r},{rho!r},"
                        f"{int(self.l1_child_count[i])}\n")
        return self.n_l1
