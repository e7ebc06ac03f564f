"""Benchmarks.

bench_structures: surfel map vs raw-point baseline on identical synthetic
clouds: per-point query latency (single lookup vs 27-cell gather + fit),
per-frame map update cost, and the flat-latency check across map sizes.

bench_backends: numba kernels vs the pure-numpy fallback on the same
operations and data.

Wall-clock via the monotonic clock, median over repeated runs, warm-up
pass excluded. Query loops are single-threaded so per-point latencies are
comparable across structures.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .baseline import RawPointMap
from .voxmap import SurfelVoxelMap

# fine-cell offsets (of the 3x3 in-plane block) used to occupy 5 distinct
# children per coarse cell, the minimum for a valid surfel
_CHILD_PATTERN = np.array([[0, 0], [2, 0], [1, 1], [0, 2], [2, 2]], dtype=np.float64)


def make_plane_cloud(n_coarse: int, fine_edge: float = 0.5 / 3.0,
                     seed: int = 0, points_per_child: int = 3) -> tuple[np.ndarray, int]:
    """Points on a large floor plane populating about n_coarse coarse cells
    with 5 occupied fine children each.

    Several points land in every fine cell, like consecutive scans
    revisiting the same surface, so map updates exercise the steady-state
    path (centroid update) and not only first-touch cell creation.
    Returns (points, side_cells)."""
    coarse = 3.0 * fine_edge
    side = int(np.ceil(np.sqrt(n_coarse)))
    half = side // 2
    ij = np.stack(np.meshgrid(np.arange(side) - half, np.arange(side) - half,
                              indexing="ij"), axis=-1).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    base = ij[:, None, None, :] * coarse \
        + (_CHILD_PATTERN[None, :, None, :] + 0.5) * fine_edge
    base = np.broadcast_to(base, (ij.shape[0], _CHILD_PATTERN.shape[0],
                                  points_per_child, 2))
    jitter = rng.uniform(-0.3, 0.3, size=base.shape) * fine_edge
    xy = (base + jitter).reshape(-1, 2)
    pts = np.column_stack([xy, np.zeros(xy.shape[0])])
    return np.ascontiguousarray(pts), side


def make_queries(n_queries: int, side: int, coarse: float, seed: int) -> np.ndarray:
    """Query points inside occupied coarse cells, near the plane."""
    rng = np.random.default_rng(seed)
    half = side // 2
    cells = rng.integers(-half, side - half, size=(n_queries, 2))
    off = rng.uniform(0.05, 0.95, size=(n_queries, 2)) * coarse
    z = rng.uniform(0.0, 0.4 * coarse, size=n_queries)
    return np.ascontiguousarray(
        np.column_stack([cells * coarse + off, z]))


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass
class StructureRow:
    target_voxels: int
    coarse_cells: int
    n_points: int
    n_queries: int
    hvox_query_us_pt: float
    base_gather_us_pt: float
    base_fit_us_pt: float
    query_speedup: float
    hvox_update_ms_fr: float
    base_update_ms_fr: float
    update_ratio: float


STRUCTURE_HEADER = ("target_voxels,coarse_cells,n_points,n_queries,"
                    "hvox_query_us_pt,base_gather_us_pt,base_fit_us_pt,"
                    "query_speedup,hvox_update_ms_fr,base_update_ms_fr,"
                    "update_ratio")


def bench_structures(sizes: list[int], n_queries: int = 100_000, k: int = 5,
                     seed: int = 0, cap: int = 32, frame_points: int = 4000,
                     repeats: int = 5, fine_edge: float = 0.5 / 3.0) -> list[StructureRow]:
    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be ascending")
    from . import kernels
    kernels.warmup()
    rows = []
    for size in sizes:
        cloud, side = make_plane_cloud(size, fine_edge, seed)
        coarse = 3.0 * fine_edge
        queries = make_queries(n_queries, side, coarse, seed + 1)

        vmap = SurfelVoxelMap(fine_edge)
        hvox_frame_ms = []
        for lo in range(0, cloud.shape[0], frame_points):
            chunk = cloud[lo:lo + frame_points]
            t0 = time.perf_counter()
            vmap.insert_points(chunk)
            vmap.recompute_dirty()
            hvox_frame_ms.append((time.perf_counter() - t0) * 1e3)

        bmap = RawPointMap(coarse, cap=cap)
        base_frame_ms = []
        for lo in range(0, cloud.shape[0], frame_points):
            chunk = cloud[lo:lo + frame_points]
            t0 = time.perf_counter()
            bmap.insert_raw(chunk)
            base_frame_ms.append((time.perf_counter() - t0) * 1e3)

        vmap.query_batch(queries)          # warm-up, excluded
        hq = _median_time(lambda: vmap.query_batch(queries), repeats)

        bmap.gather(queries, k)            # warm-up, excluded
        bg = _median_time(lambda: bmap.gather(queries, k), repeats)
        neigh, found = bmap.gather(queries, k)
        bmap.fit(neigh, found)
        bf = _median_time(lambda: bmap.fit(neigh, found), repeats)

        hq_us = hq / n_queries * 1e6
        bg_us = bg / n_queries * 1e6
        bf_us = bf / n_queries * 1e6
        rows.append(StructureRow(
            target_voxels=size,
            coarse_cells=vmap.coarse_count,
            n_points=cloud.shape[0],
            n_queries=n_queries,
            hvox_query_us_pt=hq_us,
            base_gather_us_pt=bg_us,
            base_fit_us_pt=bf_us,
            query_speedup=(bg_us + bf_us) / hq_us,
            hvox_update_ms_fr=float(np.median(hvox_frame_ms)),
            base_update_ms_fr=float(np.median(base_frame_ms)),
            update_ratio=float(np.median(hvox_frame_ms) / max(np.median(base_frame_ms), 1e-9)),
        ))
    return rows


def structure_rows_csv(rows: list[StructureRow]) -> str:
    out = [STRUCTURE_HEADER]
    for r in rows:
        out.append(f"{r.target_voxels},{r.coarse_cells},{r.n_points},{r.n_queries},"
                   f"{r.hvox_query_us_pt:.4f},{r.base_gather_us_pt:.4f},"
                   f"{r.base_fit_us_pt:.4f},{r.query_speedup:.2f},"
                   f"{r.hvox_update_ms_fr:.4f},{r.base_update_ms_fr:.4f},"
                   f"{r.update_ratio:.3f}")
    return "\n".join(out)


BACKEND_HEADER = "operation,n,numba_ms,numpy_ms,speedup"


def bench_backends(n_coarse: int = 20_000, n_queries: int = 50_000,
                   seed: int = 0, repeats: int = 5) -> list[dict]:
    """Time the numba lane against the numpy fallback on shared data.

    Query-style kernels run against the same table arrays; insert-style
    kernels each build their own. Requires numba to be importable
    (independent of which lane SLIO_BACKEND selected).
    """
    try:
        from . import kernels_numba as kb
    except ImportError as exc:
        raise RuntimeError("numba is not importable; nothing to compare") from exc
    from . import kernels_numpy as kp
    from . import morton
    kb.warmup()

    fine = 0.5 / 3.0
    coarse = 3.0 * fine
    cloud, side = make_plane_cloud(n_coarse, fine, seed)
    queries = make_queries(n_queries, side, coarse, seed + 1)
    keys = morton.quantize(cloud, fine)
    codes = morton.encode(keys)
    qkeys = np.ascontiguousarray(morton.quantize(queries, coarse))
    qcodes = morton.encode(qkeys)

    rows = []

    def add(op, n, f_nb, f_np):
        f_nb()  # warm-up / JIT
        t_nb = _median_time(f_nb, repeats)
        t_np = _median_time(f_np, repeats)
        rows.append({"operation": op, "n": n,
                     "numba_ms": t_nb * 1e3, "numpy_ms": t_np * 1e3,
                     "speedup": t_np / max(t_nb, 1e-12)})

    add("morton_encode", keys.shape[0],
        lambda: kb.encode_batch(keys), lambda: kp.encode_batch(keys))

    # shared map built once (default backend irrelevant: layout is readable
    # by both lanes)
    vmap = SurfelVoxelMap(fine)
    vmap.insert_points(cloud)
    vmap.recompute_dirty()
    t1 = vmap._t1
    okq = np.ones(qcodes.shape[0], dtype=np.bool_)
    add("table_lookup", qcodes.shape[0],
        lambda: kb.table_lookup(t1.keys, t1.vals, qcodes),
        lambda: kp.table_lookup(t1.keys, t1.vals, qcodes))
    add("map_query", qcodes.shape[0],
        lambda: kb.map_query(t1.keys, t1.vals, vmap.l1_valid, vmap.l1_normal,
                             vmap.l1_centroid, vmap.l1_rho, qcodes, okq,
                             vmap.min_planarity),
        lambda: kp.map_query(t1.keys, t1.vals, vmap.l1_valid, vmap.l1_normal,
                             vmap.l1_centroid, vmap.l1_rho, qcodes, okq,
                             vmap.min_planarity))

    bmap = RawPointMap(coarse)
    bmap.insert_raw(cloud)
    tb = bmap._table
    small_q = queries[:min(5000, n_queries)]
    small_k = qkeys[:small_q.shape[0]]
    add("knn_gather", small_q.shape[0],
        lambda: kb.knn_gather(tb.keys, tb.vals, bmap.cell_count,
                              bmap.cell_points, small_k, small_q, 5),
        lambda: kp.knn_gather(tb.keys, tb.vals, bmap.cell_count,
                              bmap.cell_points, small_k, small_q, 5))

    normals, cents, _, found = vmap.query_batch(queries)
    rot = np.eye(3)
    trans = np.zeros(3)
    add("point_plane_system", queries.shape[0],
        lambda: kb.point_plane_system(rot, trans, queries, normals, cents, found, 0.5),
        lambda: kp.point_plane_system(rot, trans, queries, normals, cents, found, 0.5))

    cap = 1 << int(np.ceil(np.log2(codes.shape[0] / 0.5 + 64)))

    def build(mod):
        tk = np.full(cap, kb.EMPTY, dtype=np.uint64)
        tv = np.full(cap, -1, dtype=np.int64)
        mod.table_upsert(tk, tv, codes, 0)

    add("table_upsert", codes.shape[0],
        lambda: build(kb), lambda: build(kp))
    return rows


def backend_rows_csv(rows: list[dict]) -> str:
    out = [BACKEND_HEADER]
    for r in rows:
        out.append(f"{r['operation']},{r['n']},{r['numba_ms']:.3f},"
                   f"{r['numpy_ms']:.3f},{r['speedup']:.2f}")
    return "\n".join(out)
