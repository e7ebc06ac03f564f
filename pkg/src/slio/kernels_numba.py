"""Numba-compiled kernels for the per-point hot loops.

Covers Morton coding, the Robin Hood code tables, voxel-map insert /
recompute / query, the raw-point baseline, and the point-to-plane normal
equations. Mirrors kernels_numpy exactly in observable behavior; keep the
two in sync (tests/test_backends.py pins them against each other).

All table kernels operate on bare arrays: keys (uint64, EMPTY sentinel)
and vals (int64 payload row indices). Growth/rehash policy lives in
slio.hashmap, not here.
"""
import math

import numpy as np
from numba import njit

U64 = np.uint64
EMPTY = U64(0xFFFFFFFFFFFFFFFF)

_KEY_OFFSET = np.int64(1 << 20)
_KEY_MIN = np.int64(-(1 << 20))
_KEY_MAX = np.int64((1 << 20) - 1)

_M0 = U64(0x1FFFFF)
_M1 = U64(0x1F00000000FFFF)
_M2 = U64(0x1F0000FF0000FF)
_M3 = U64(0x100F00F00F00F00F)
_M4 = U64(0x10C30C30C30C30C3)
_M5 = U64(0x1249249249249249)

_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)


# ─────────────────────────────────────────────────────────────
#  Morton coding
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def _spread(x):
    x = x & _M0
    x = (x | (x << U64(32))) & _M1
    x = (x | (x << U64(16))) & _M2
    x = (x | (x << U64(8))) & _M3
    x = (x | (x << U64(4))) & _M4
    x = (x | (x << U64(2))) & _M5
    return x


@njit(cache=True)
def _compact(x):
    x = x & _M5
    x = (x ^ (x >> U64(2))) & _M4
    x = (x ^ (x >> U64(4))) & _M3
    x = (x ^ (x >> U64(8))) & _M2
    x = (x ^ (x >> U64(16))) & _M1
    x = (x ^ (x >> U64(32))) & _M0
    return x


@njit(cache=True)
def _encode1(kx, ky, kz):
    ux = U64(kx + _KEY_OFFSET)
    uy = U64(ky + _KEY_OFFSET)
    uz = U64(kz + _KEY_OFFSET)
    return _spread(ux) | (_spread(uy) << U64(1)) | (_spread(uz) << U64(2))


@njit(cache=True)
def encode_batch(keys):
    n = keys.shape[0]
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _encode1(keys[i, 0], keys[i, 1], keys[i, 2])
    return out


@njit(cache=True)
def decode_batch(codes):
    n = codes.shape[0]
    out = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        c = codes[i]
        out[i, 0] = np.int64(_compact(c)) - _KEY_OFFSET
        out[i, 1] = np.int64(_compact(c >> U64(1))) - _KEY_OFFSET
        out[i, 2] = np.int64(_compact(c >> U64(2))) - _KEY_OFFSET
    return out


# ─────────────────────────────────────────────────────────────
#  Robin Hood code table (open addressing, linear probing)
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def _mix64(code):
    z = code
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True)
def _lookup1(tkeys, tvals, code, mask):
    slot = _mix64(code) & mask
    d = U64(0)
    while True:
        cur = tkeys[slot]
        if cur == EMPTY:
            return np.int64(-1)
        if cur == code:
            return tvals[slot]
        # occupant closer to home than our probe distance: key absent
        if ((slot - (_mix64(cur) & mask)) & mask) < d:
            return np.int64(-1)
        slot = (slot + U64(1)) & mask
        d += U64(1)


@njit(cache=True)
def _upsert1(tkeys, tvals, code, new_val, mask):
    """Insert-or-find one code; returns (payload_val, is_new).

    Robin Hood displacement: an occupant with a smaller probe distance
    yields its slot and is carried onward.
    """
    slot = _mix64(code) & mask
    d = U64(0)
    carry_k = code
    carry_v = new_val
    carrying_query = True
    result = new_val
    is_new = False
    while True:
        cur = tkeys[slot]
        if cur == EMPTY:
            tkeys[slot] = carry_k
            tvals[slot] = carry_v
            if carrying_query:
                is_new = True
            return result, is_new
        if carrying_query and cur == code:
            return tvals[slot], False
        cur_d = (slot - (_mix64(cur) & mask)) & mask
        if cur_d < d:
            tmp_k = tkeys[slot]
            tmp_v = tvals[slot]
            tkeys[slot] = carry_k
            tvals[slot] = carry_v
            if carrying_query:
                is_new = True
                carrying_query = False
            carry_k = tmp_k
            carry_v = tmp_v
            d = cur_d
        slot = (slot + U64(1)) & mask
        d += U64(1)


@njit(cache=True)
def table_lookup(tkeys, tvals, codes):
    mask = U64(tkeys.shape[0] - 1)
    n = codes.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = _lookup1(tkeys, tvals, codes[i], mask)
    return out


@njit(cache=True)
def table_upsert(tkeys, tvals, codes, next_val):
    """Insert-or-find a batch; new codes get next_val, next_val+1, ...

    Duplicate codes within the batch resolve to one shared row. Returns
    (payload rows, number of new entries).
    """
    mask = U64(tkeys.shape[0] - 1)
    n = codes.shape[0]
    out = np.empty(n, dtype=np.int64)
    n_new = 0
    for i in range(n):
        val, is_new = _upsert1(tkeys, tvals, codes[i], np.int64(next_val + n_new), mask)
        if is_new:
            n_new += 1
        out[i] = val
    return out, n_new


@njit(cache=True)
def table_rehash(old_keys, old_vals, new_keys, new_vals):
    """Move all entries into the (larger, empty) new arrays, keeping vals."""
    mask = U64(new_keys.shape[0] - 1)
    for s in range(old_keys.shape[0]):
        code = old_keys[s]
        if code != EMPTY:
            _upsert1(new_keys, new_vals, code, old_vals[s], mask)


@njit(cache=True)
def table_probe_lengths(tkeys):
    """Displacement from home slot for every occupied slot (diagnostics)."""
    cap = tkeys.shape[0]
    mask = U64(cap - 1)
    out = np.empty(cap, dtype=np.int64)
    n = 0
    for s in range(cap):
        code = tkeys[s]
        if code != EMPTY:
            out[n] = np.int64((U64(s) - (_mix64(code) & mask)) & mask)
            n += 1
    return out[:n]


# ─────────────────────────────────────────────────────────────
#  3x3 symmetric eigen and surfel math
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def _eigh3(a00, a01, a02, a11, a12, a22):
    """Cyclic Jacobi on a symmetric 3x3; eigenvalues descending.

    Exact to machine precision for 3x3; deterministic rotation order, so
    degenerate spectra resolve the same way on every call.
    """
    a = np.empty((3, 3))
    a[0, 0] = a00
    a[0, 1] = a01
    a[0, 2] = a02
    a[1, 0] = a01
    a[1, 1] = a11
    a[1, 2] = a12
    a[2, 0] = a02
    a[2, 1] = a12
    a[2, 2] = a22
    v = np.eye(3)
    scale = abs(a00) + abs(a11) + abs(a22)
    if scale < 1e-300:
        scale = 1.0
    for _ in range(30):
        off = math.sqrt(a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2)
        if off < 1e-15 * scale:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for r in range(3):
                    arp = a[r, p]
                    arq = a[r, q]
                    a[r, p] = c * arp - s * arq
                    a[r, q] = s * arp + c * arq
                for r in range(3):
                    apr = a[p, r]
                    aqr = a[q, r]
                    a[p, r] = c * apr - s * aqr
                    a[q, r] = s * apr + c * aqr
                for r in range(3):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = s * vrp + c * vrq
    w = np.empty(3)
    w[0] = a[0, 0]
    w[1] = a[1, 1]
    w[2] = a[2, 2]
    # descending selection sort on the three eigenpairs
    for i in range(2):
        m = i
        for j in range(i + 1, 3):
            if w[j] > w[m]:
                m = j
        if m != i:
            w[i], w[m] = w[m], w[i]
            for r in range(3):
                v[r, i], v[r, m] = v[r, m], v[r, i]
    return w, v


@njit(cache=True)
def _surfel_math(pts, m, eps):
    """Plane fit of pts[:m] by PCA: mean, population covariance, smallest
    eigenvector as normal (sign: largest-|component| positive), planarity
    (lam2 - lam3) / (lam1 + eps). Returns (normal, centroid, rho)."""
    cx = 0.0
    cy = 0.0
    cz = 0.0
    for i in range(m):
        cx += pts[i, 0]
        cy += pts[i, 1]
        cz += pts[i, 2]
    inv_m = 1.0 / m
    cx *= inv_m
    cy *= inv_m
    cz *= inv_m
    s00 = 0.0
    s01 = 0.0
    s02 = 0.0
    s11 = 0.0
    s12 = 0.0
    s22 = 0.0
    for i in range(m):
        dx = pts[i, 0] - cx
        dy = pts[i, 1] - cy
        dz = pts[i, 2] - cz
        s00 += dx * dx
        s01 += dx * dy
        s02 += dx * dz
        s11 += dy * dy
        s12 += dy * dz
        s22 += dz * dz
    w, v = _eigh3(s00 * inv_m, s01 * inv_m, s02 * inv_m,
                  s11 * inv_m, s12 * inv_m, s22 * inv_m)
    normal = np.empty(3)
    centroid = np.empty(3)
    centroid[0] = cx
    centroid[1] = cy
    centroid[2] = cz
    if w[0] < 1e-12:
        # all points coincident: no direction of least variance
        normal[0] = 0.0
        normal[1] = 0.0
        normal[2] = 1.0
        return normal, centroid, 0.0
    normal[0] = v[0, 2]
    normal[1] = v[1, 2]
    normal[2] = v[2, 2]
    big = 0
    if abs(normal[1]) > abs(normal[big]):
        big = 1
    if abs(normal[2]) > abs(normal[big]):
        big = 2
    if normal[big] < 0.0:
        normal[0] = -normal[0]
        normal[1] = -normal[1]
        normal[2] = -normal[2]
    rho = (w[1] - w[2]) / (w[0] + eps)
    if rho < 0.0:
        rho = 0.0
    return normal, centroid, rho


@njit(cache=True)
def surfel_from_points(pts, eps):
    """Single plane fit over pts (m, 3); m >= 1 assumed checked by caller."""
    return _surfel_math(pts, pts.shape[0], eps)


# ─────────────────────────────────────────────────────────────
#  Two-level voxel map kernels
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def map_insert(tk0, tv0, l0_cent, l0_cnt, l0_code, l0_parent, n_l0,
               tk1, tv1, l1_code, l1_children, l1_ccount, l1_dirty,
               l1_valid, n_l1, dirty_idx, n_dirty,
               codes0, pcodes, cslots, pts):
    """Insert world points with precomputed fine codes / parent codes /
    child slots. Mutates tables and payload arrays in place.

    Returns (n_l0, n_l1, n_dirty, new_l0, newly_dirty).
    """
    mask0 = U64(tk0.shape[0] - 1)
    mask1 = U64(tk1.shape[0] - 1)
    new_l0 = 0
    newly_dirty = 0
    for i in range(codes0.shape[0]):
        idx, is_new = _upsert1(tk0, tv0, codes0[i], np.int64(n_l0), mask0)
        if is_new:
            l0_code[n_l0] = codes0[i]
            l0_cent[n_l0, 0] = pts[i, 0]
            l0_cent[n_l0, 1] = pts[i, 1]
            l0_cent[n_l0, 2] = pts[i, 2]
            l0_cnt[n_l0] = 1
            p_idx, p_new = _upsert1(tk1, tv1, pcodes[i], np.int64(n_l1), mask1)
            if p_new:
                l1_code[n_l1] = pcodes[i]
                for s in range(27):
                    l1_children[n_l1, s] = -1
                l1_ccount[n_l1] = 0
                l1_dirty[n_l1] = False
                l1_valid[n_l1] = False
                n_l1 += 1
            l1_children[p_idx, cslots[i]] = n_l0
            l1_ccount[p_idx] += 1
            l0_parent[n_l0] = p_idx
            n_l0 += 1
            new_l0 += 1
        else:
            cnt = l0_cnt[idx]
            fc = np.float64(cnt)
            inv = 1.0 / (fc + 1.0)
            l0_cent[idx, 0] = (fc * l0_cent[idx, 0] + pts[i, 0]) * inv
            l0_cent[idx, 1] = (fc * l0_cent[idx, 1] + pts[i, 1]) * inv
            l0_cent[idx, 2] = (fc * l0_cent[idx, 2] + pts[i, 2]) * inv
            l0_cnt[idx] = cnt + 1
            p_idx = l0_parent[idx]
        if not l1_dirty[p_idx]:
            l1_dirty[p_idx] = True
            dirty_idx[n_dirty] = p_idx
            n_dirty += 1
            newly_dirty += 1
    return n_l0, n_l1, n_dirty, new_l0, newly_dirty


@njit(cache=True)
def map_recompute(l1_children, l1_ccount, l1_dirty, l1_valid,
                  l1_normal, l1_cent, l1_rho, l0_cent,
                  dirty_idx, n_dirty, min_children, eps):
    """Refresh surfels of all queued dirty coarse voxels.

    Children are gathered in fixed slot order 0..26. Returns the number of
    surfels actually recomputed (voxels with enough children).
    """
    buf = np.empty((27, 3))
    n_rec = 0
    for j in range(n_dirty):
        li = dirty_idx[j]
        l1_dirty[li] = False
        m = l1_ccount[li]
        if m >= min_children:
            k = 0
            for s in range(27):
                c = l1_children[li, s]
                if c >= 0:
                    buf[k, 0] = l0_cent[c, 0]
                    buf[k, 1] = l0_cent[c, 1]
                    buf[k, 2] = l0_cent[c, 2]
                    k += 1
            normal, centroid, rho = _surfel_math(buf, k, eps)
            l1_normal[li, 0] = normal[0]
            l1_normal[li, 1] = normal[1]
            l1_normal[li, 2] = normal[2]
            l1_cent[li, 0] = centroid[0]
            l1_cent[li, 1] = centroid[1]
            l1_cent[li, 2] = centroid[2]
            l1_rho[li] = rho
            l1_valid[li] = True
            n_rec += 1
        else:
            l1_valid[li] = False
    return n_rec


@njit(cache=True)
def map_query(tk1, tv1, l1_valid, l1_normal, l1_cent, l1_rho,
              codes, code_ok, min_planarity):
    """Single-lookup surfel retrieval per query code.

    No neighbor enumeration, no fitting: one table probe sequence, then a
    strict planarity test (rho > min_planarity).
    """
    mask = U64(tk1.shape[0] - 1)
    q = codes.shape[0]
    normals = np.zeros((q, 3))
    cents = np.zeros((q, 3))
    rhos = np.zeros(q)
    found = np.zeros(q, dtype=np.bool_)
    for i in range(q):
        if not code_ok[i]:
            continue
        idx = _lookup1(tk1, tv1, codes[i], mask)
        if idx >= 0 and l1_valid[idx] and l1_rho[idx] > min_planarity:
            normals[i, 0] = l1_normal[idx, 0]
            normals[i, 1] = l1_normal[idx, 1]
            normals[i, 2] = l1_normal[idx, 2]
            cents[i, 0] = l1_cent[idx, 0]
            cents[i, 1] = l1_cent[idx, 1]
            cents[i, 2] = l1_cent[idx, 2]
            rhos[i] = l1_rho[idx]
            found[i] = True
    return normals, cents, rhos, found


# ─────────────────────────────────────────────────────────────
#  Raw-point baseline: binned storage + 27-cell kNN + runtime fit
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def raw_insert(tk, tv, cell_cnt, cell_pts, n_cells, codes, pts):
    """Bin raw points at the coarse resolution; cells keep the first
    `cap` points and drop the rest. Returns (n_cells, n_stored)."""
    mask = U64(tk.shape[0] - 1)
    cap = cell_pts.shape[1]
    n_stored = 0
    for i in range(codes.shape[0]):
        idx, is_new = _upsert1(tk, tv, codes[i], np.int64(n_cells), mask)
        if is_new:
            cell_cnt[n_cells] = 0
            n_cells += 1
        c = cell_cnt[idx]
        if c < cap:
            cell_pts[idx, c, 0] = pts[i, 0]
            cell_pts[idx, c, 1] = pts[i, 1]
            cell_pts[idx, c, 2] = pts[i, 2]
            cell_cnt[idx] = c + 1
            n_stored += 1
    return n_cells, n_stored


@njit(cache=True)
def knn_gather(tk, tv, cell_cnt, cell_pts, q_keys, q_pts, k):
    """k nearest stored points over the query cell + its 26 neighbors.

    found[i] is True only when at least k points exist in the 27-cell
    region. Neighbors come out sorted by ascending distance.
    """
    mask = U64(tk.shape[0] - 1)
    q = q_keys.shape[0]
    neigh = np.zeros((q, k, 3))
    found = np.zeros(q, dtype=np.bool_)
    best_d = np.empty(k)
    best_p = np.empty((k, 3))
    for i in range(q):
        n_best = 0
        px = q_pts[i, 0]
        py = q_pts[i, 1]
        pz = q_pts[i, 2]
        for dz in range(-1, 2):
            for dy in range(-1, 2):
                for dx in range(-1, 2):
                    kx = q_keys[i, 0] + dx
                    ky = q_keys[i, 1] + dy
                    kz = q_keys[i, 2] + dz
                    if (kx < _KEY_MIN or kx > _KEY_MAX or
                            ky < _KEY_MIN or ky > _KEY_MAX or
                            kz < _KEY_MIN or kz > _KEY_MAX):
                        continue
                    idx = _lookup1(tk, tv, _encode1(kx, ky, kz), mask)
                    if idx < 0:
                        continue
                    for j in range(cell_cnt[idx]):
                        qx = np.float64(cell_pts[idx, j, 0])
                        qy = np.float64(cell_pts[idx, j, 1])
                        qz = np.float64(cell_pts[idx, j, 2])
                        d2 = ((qx - px) ** 2 + (qy - py) ** 2
                              + (qz - pz) ** 2)
                        if n_best < k:
                            # insertion sort into the first free slot
                            pos = n_best
                            while pos > 0 and best_d[pos - 1] > d2:
                                best_d[pos] = best_d[pos - 1]
                                best_p[pos, 0] = best_p[pos - 1, 0]
                                best_p[pos, 1] = best_p[pos - 1, 1]
                                best_p[pos, 2] = best_p[pos - 1, 2]
                                pos -= 1
                            best_d[pos] = d2
                            best_p[pos, 0] = qx
                            best_p[pos, 1] = qy
                            best_p[pos, 2] = qz
                            n_best += 1
                        elif d2 < best_d[k - 1]:
                            pos = k - 1
                            while pos > 0 and best_d[pos - 1] > d2:
                                best_d[pos] = best_d[pos - 1]
                                best_p[pos, 0] = best_p[pos - 1, 0]
                                best_p[pos, 1] = best_p[pos - 1, 1]
                                best_p[pos, 2] = best_p[pos - 1, 2]
                                pos -= 1
                            best_d[pos] = d2
                            best_p[pos, 0] = qx
                            best_p[pos, 1] = qy
                            best_p[pos, 2] = qz
        if n_best >= k:
            found[i] = True
            for j in range(k):
                neigh[i, j, 0] = best_p[j, 0]
                neigh[i, j, 1] = best_p[j, 1]
                neigh[i, j, 2] = best_p[j, 2]
    return neigh, found


@njit(cache=True)
def fit_planes(neigh, found, eps):
    """Runtime PCA plane fit per query over its gathered k neighbors."""
    q = neigh.shape[0]
    normals = np.zeros((q, 3))
    cents = np.zeros((q, 3))
    for i in range(q):
        if found[i]:
            normal, centroid, _ = _surfel_math(neigh[i], neigh.shape[1], eps)
            normals[i, 0] = normal[0]
            normals[i, 1] = normal[1]
            normals[i, 2] = normal[2]
            cents[i, 0] = centroid[0]
            cents[i, 1] = centroid[1]
            cents[i, 2] = centroid[2]
    return normals, cents


# ─────────────────────────────────────────────────────────────
#  Point-to-plane normal equations
# ─────────────────────────────────────────────────────────────

@njit(cache=True)
def point_plane_system(rot, trans, pts, normals, cents, valid, gate):
    """Accumulate H^T H (6x6) and H^T r (6,) over gated correspondences.

    Residual r = n . (R p + t - c); row H = [-( (R^T n) x p )^T, n^T].
    Serial fixed-order summation keeps results bit-reproducible.
    Returns (HtH, Htr, n_used, sum_abs_r, used_mask).
    """
    hth = np.zeros((6, 6))
    htr = np.zeros(6)
    n_used = 0
    sum_abs = 0.0
    used = np.zeros(pts.shape[0], dtype=np.bool_)
    h = np.empty(6)
    for i in range(pts.shape[0]):
        if not valid[i]:
            continue
        px = pts[i, 0]
        py = pts[i, 1]
        pz = pts[i, 2]
        wx = rot[0, 0] * px + rot[0, 1] * py + rot[0, 2] * pz + trans[0]
        wy = rot[1, 0] * px + rot[1, 1] * py + rot[1, 2] * pz + trans[1]
        wz = rot[2, 0] * px + rot[2, 1] * py + rot[2, 2] * pz + trans[2]
        nx = normals[i, 0]
        ny = normals[i, 1]
        nz = normals[i, 2]
        r = nx * (wx - cents[i, 0]) + ny * (wy - cents[i, 1]) + nz * (wz - cents[i, 2])
        if abs(r) > gate:
            continue
        # u = R^T n
        ux = rot[0, 0] * nx + rot[1, 0] * ny + rot[2, 0] * nz
        uy = rot[0, 1] * nx + rot[1, 1] * ny + rot[2, 1] * nz
        uz = rot[0, 2] * nx + rot[1, 2] * ny + rot[2, 2] * nz
        h[0] = -(uy * pz - uz * py)
        h[1] = -(uz * px - ux * pz)
        h[2] = -(ux * py - uy * px)
        h[3] = nx
        h[4] = ny
        h[5] = nz
        for a in range(6):
            ha = h[a]
            htr[a] += ha * r
            for b in range(6):
                hth[a, b] += ha * h[b]
        used[i] = True
        n_used += 1
        sum_abs += abs(r)
    return hth, htr, n_used, sum_abs, used


def warmup():
    """Compile every kernel once on tiny inputs (cache-backed)."""
    keys = np.array([[1, -2, 3], [0, 0, 0]], dtype=np.int64)
    codes = encode_batch(keys)
    decode_batch(codes)
    tk = np.full(8, EMPTY, dtype=np.uint64)
    tv = np.full(8, -1, dtype=np.int64)
    table_upsert(tk, tv, codes, 0)
    table_lookup(tk, tv, codes)
    tk2 = np.full(16, EMPTY, dtype=np.uint64)
    tv2 = np.full(16, -1, dtype=np.int64)
    table_rehash(tk, tv, tk2, tv2)
    table_probe_lengths(tk2)
    pts = np.array([[0.1, 0.2, 0.3], [1.0, 1.1, 0.9]])
    surfel_from_points(np.random.default_rng(0).normal(size=(5, 3)), 1e-6)

    tk0 = np.full(64, EMPTY, dtype=np.uint64)
    tv0 = np.full(64, -1, dtype=np.int64)
    tk1 = np.full(64, EMPTY, dtype=np.uint64)
    tv1 = np.full(64, -1, dtype=np.int64)
    l0_cent = np.zeros((8, 3))
    l0_cnt = np.zeros(8, dtype=np.int64)
    l0_code = np.zeros(8, dtype=np.uint64)
    l0_parent = np.zeros(8, dtype=np.int64)
    l1_code = np.zeros(8, dtype=np.uint64)
    l1_children = np.full((8, 27), -1, dtype=np.int64)
    l1_ccount = np.zeros(8, dtype=np.int64)
    l1_dirty = np.zeros(8, dtype=np.bool_)
    l1_valid = np.zeros(8, dtype=np.bool_)
    l1_normal = np.zeros((8, 3))
    l1_cent = np.zeros((8, 3))
    l1_rho = np.zeros(8)
    dirty_idx = np.zeros(8, dtype=np.int64)
    pcodes = encode_batch(keys // 3)
    cslots = np.array([0, 1], dtype=np.int64)
    st = map_insert(tk0, tv0, l0_cent, l0_cnt, l0_code, l0_parent, 0,
                    tk1, tv1, l1_code, l1_children, l1_ccount, l1_dirty,
                    l1_valid, 0, dirty_idx, 0, codes, pcodes, cslots, pts)
    map_recompute(l1_children, l1_ccount, l1_dirty, l1_valid, l1_normal,
                  l1_cent, l1_rho, l0_cent, dirty_idx, st[2], 1, 1e-6)
    map_query(tk1, tv1, l1_valid, l1_normal, l1_cent, l1_rho, pcodes,
              np.ones(2, dtype=np.bool_), 0.01)

    cell_cnt = np.zeros(8, dtype=np.int64)
    cell_pts = np.zeros((8, 4, 3), dtype=np.float32)
    tkb = np.full(64, EMPTY, dtype=np.uint64)
    tvb = np.full(64, -1, dtype=np.int64)
    raw_insert(tkb, tvb, cell_cnt, cell_pts, 0, codes, pts)
    neigh, fnd = knn_gather(tkb, tvb, cell_cnt, cell_pts, keys, pts, 3)
    fit_planes(neigh, fnd, 1e-6)
    point_plane_system(np.eye(3), np.zeros(3), pts, np.zeros((2, 3)),
                       np.zeros((2, 3)), np.ones(2, dtype=np.bool_), 0.5)
