"""Pure-numpy fallback for the kernels in kernels_numba.

Lookups, queries, recomputes and the normal equations are fully
vectorized. Table insertion is resolved per unique code in a small Python
loop (Robin Hood displacement does not vectorize cleanly); the insert-heavy
paths are therefore slower than the numba lane but observably equivalent.
tests/test_backends.py pins the two lanes against each other.
"""
import numpy as np

from . import morton

U64 = np.uint64
EMPTY = U64(0xFFFFFFFFFFFFFFFF)
_EMPTY_INT = 0xFFFFFFFFFFFFFFFF

_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_MIX1_INT = 0xBF58476D1CE4E5B9
_MIX2_INT = 0x94D049BB133111EB
_W = 0xFFFFFFFFFFFFFFFF


def _mix64(codes):
    z = np.asarray(codes, dtype=np.uint64)
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


def _mix64_int(code: int) -> int:
    z = code & _W
    z = ((z ^ (z >> 30)) * _MIX1_INT) & _W
    z = ((z ^ (z >> 27)) * _MIX2_INT) & _W
    return z ^ (z >> 31)


def encode_batch(keys):
    return morton.encode(keys)


def decode_batch(codes):
    return morton.decode(codes)


# ─────────────────────────────────────────────────────────────
#  Robin Hood code table
# ─────────────────────────────────────────────────────────────

def table_lookup(tkeys, tvals, codes):
    cap = tkeys.shape[0]
    mask = U64(cap - 1)
    codes = np.asarray(codes, dtype=np.uint64)
    n = codes.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return out
    slots = _mix64(codes) & mask
    pending = np.arange(n)
    d = U64(0)
    while pending.size:
        s = slots[pending]
        k = tkeys[s]
        hit = k == codes[pending]
        out[pending[hit]] = tvals[s[hit]]
        empty = k == EMPTY
        occ_d = (s - (_mix64(k) & mask)) & mask
        poorer = (~empty) & (occ_d < d)
        pending = pending[~(hit | empty | poorer)]
        slots[pending] = (slots[pending] + U64(1)) & mask
        d += U64(1)
        if int(d) > cap:
            break
    return out


def _insert1(tkeys, tvals, code: int, val: int, mask: int):
    # scalar Robin Hood insert; code known absent from the table
    slot = _mix64_int(code) & mask
    d = 0
    carry_k, carry_v = code, val
    while True:
        cur = int(tkeys[slot])
        if cur == _EMPTY_INT:
            tkeys[slot] = carry_k
            tvals[slot] = carry_v
            return
        cur_d = (slot - (_mix64_int(cur) & mask)) & mask
        if cur_d < d:
            cur_v = int(tvals[slot])
            tkeys[slot] = carry_k
            tvals[slot] = carry_v
            carry_k, carry_v = cur, cur_v
            d = cur_d
        slot = (slot + 1) & mask
        d += 1


def table_upsert(tkeys, tvals, codes, next_val):
    codes = np.asarray(codes, dtype=np.uint64)
    if codes.shape[0] == 0:
        return np.empty(0, dtype=np.int64), 0
    u, inv = np.unique(codes, return_inverse=True)
    rows = table_lookup(tkeys, tvals, u)
    missing = np.flatnonzero(rows < 0)
    mask = tkeys.shape[0] - 1
    val = int(next_val)
    for i in missing:
        _insert1(tkeys, tvals, int(u[i]), val, mask)
        rows[i] = val
        val += 1
    return rows[inv], val - int(next_val)


def table_rehash(old_keys, old_vals, new_keys, new_vals):
    mask = new_keys.shape[0] - 1
    occupied = np.flatnonzero(old_keys != EMPTY)
    for s in occupied:
        _insert1(new_keys, new_vals, int(old_keys[s]), int(old_vals[s]), mask)


def table_probe_lengths(tkeys):
    cap = tkeys.shape[0]
    mask = U64(cap - 1)
    occ = np.flatnonzero(tkeys != EMPTY)
    homes = _mix64(tkeys[occ]) & mask
    return ((occ.astype(np.uint64) - homes) & mask).astype(np.int64)


# ─────────────────────────────────────────────────────────────
#  Surfel math (batched eigh)
# ─────────────────────────────────────────────────────────────

def _surfels_from_stacks(pts, weights, eps):
    """PCA surfels for stacked point sets.

    pts (D, S, 3) with weights (D, S) in {0, 1}; returns normals, cents,
    rhos with the same conventions as the numba lane.
    """
    m = weights.sum(axis=1)
    mean = (pts * weights[..., None]).sum(axis=1) / m[:, None]
    dev = (pts - mean[:, None, :]) * weights[..., None]
    cov = np.einsum("dki,dkj->dij", dev, dev) / m[:, None, None]
    vals, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    lam1 = vals[:, 2]
    lam2 = vals[:, 1]
    lam3 = vals[:, 0]
    normals = vecs[:, :, 0].copy()
    big = np.argmax(np.abs(normals), axis=1)
    flip = normals[np.arange(normals.shape[0]), big] < 0.0
    normals[flip] = -normals[flip]
    rho = np.maximum(lam2 - lam3, 0.0) / (lam1 + eps)
    degenerate = lam1 < 1e-12
    rho[degenerate] = 0.0
    normals[degenerate] = (0.0, 0.0, 1.0)
    return normals, mean, rho


def surfel_from_points(pts, eps):
    pts = np.asarray(pts, dtype=np.float64)
    normals, cents, rhos = _surfels_from_stacks(
        pts[None, :, :], np.ones((1, pts.shape[0])), eps
    )
    return normals[0], cents[0], float(rhos[0])


# ─────────────────────────────────────────────────────────────
#  Two-level voxel map
# ─────────────────────────────────────────────────────────────

def map_insert(tk0, tv0, l0_cent, l0_cnt, l0_code, l0_parent, n_l0,
               tk1, tv1, l1_code, l1_children, l1_ccount, l1_dirty,
               l1_valid, n_l1, dirty_idx, n_dirty,
               codes0, pcodes, cslots, pts):
    n = codes0.shape[0]
    if n == 0:
        return n_l0, n_l1, n_dirty, 0, 0
    u, first, inv = np.unique(codes0, return_index=True, return_inverse=True)
    rows_u, n_new = table_upsert(tk0, tv0, u, n_l0)
    is_new = rows_u >= n_l0

    sums = np.zeros((u.shape[0], 3))
    np.add.at(sums, inv, pts)
    cnts = np.bincount(inv, minlength=u.shape[0]).astype(np.int64)

    ex = np.flatnonzero(~is_new)
    if ex.size:
        r = rows_u[ex]
        old = l0_cnt[r].astype(np.float64)
        l0_cent[r] = (old[:, None] * l0_cent[r] + sums[ex]) / (old + cnts[ex])[:, None]
        l0_cnt[r] += cnts[ex]

    nw = np.flatnonzero(is_new)
    new_l0 = nw.size
    if new_l0:
        rn = rows_u[nw]
        l0_cent[rn] = sums[nw] / cnts[nw, None]
        l0_cnt[rn] = cnts[nw]
        l0_code[rn] = u[nw]
        new_pcodes = pcodes[first[nw]]
        new_cslots = cslots[first[nw]]
        up, pinv = np.unique(new_pcodes, return_inverse=True)
        prow_u, pn_new = table_upsert(tk1, tv1, up, n_l1)
        p_new = np.flatnonzero(prow_u >= n_l1)
        if p_new.size:
            pr = prow_u[p_new]
            l1_code[pr] = up[p_new]
            l1_children[pr] = -1
            l1_ccount[pr] = 0
            l1_dirty[pr] = False
            l1_valid[pr] = False
        n_l1 += pn_new
        prows = prow_u[pinv]
        l1_children[prows, new_cslots] = rn
        np.add.at(l1_ccount, prows, 1)
        l0_parent[rn] = prows
        n_l0 += new_l0

    parents = l0_parent[rows_u]
    upar = np.unique(parents)
    newly = upar[~l1_dirty[upar]]
    l1_dirty[newly] = True
    dirty_idx[n_dirty:n_dirty + newly.size] = newly
    n_dirty += newly.size
    return n_l0, n_l1, n_dirty, new_l0, int(newly.size)


def map_recompute(l1_children, l1_ccount, l1_dirty, l1_valid,
                  l1_normal, l1_cent, l1_rho, l0_cent,
                  dirty_idx, n_dirty, min_children, eps):
    if n_dirty == 0:
        return 0
    d = dirty_idx[:n_dirty]
    l1_dirty[d] = False
    enough = l1_ccount[d] >= min_children
    l1_valid[d[~enough]] = False
    li = d[enough]
    if li.size == 0:
        return 0
    ch = l1_children[li]
    has = ch >= 0
    pts = l0_cent[np.where(has, ch, 0)]
    normals, cents, rhos = _surfels_from_stacks(pts, has.astype(np.float64), eps)
    l1_normal[li] = normals
    l1_cent[li] = cents
    l1_rho[li] = rhos
    l1_valid[li] = True
    return int(li.size)


def map_query(tk1, tv1, l1_valid, l1_normal, l1_cent, l1_rho,
              codes, code_ok, min_planarity):
    q = codes.shape[0]
    normals = np.zeros((q, 3))
    cents = np.zeros((q, 3))
    rhos = np.zeros(q)
    found = np.zeros(q, dtype=np.bool_)
    idx = table_lookup(tk1, tv1, codes)
    present = code_ok & (idx >= 0)
    safe = np.where(present, idx, 0)
    good = present & l1_valid[safe] & (l1_rho[safe] > min_planarity)
    gi = idx[good]
    normals[good] = l1_normal[gi]
    cents[good] = l1_cent[gi]
    rhos[good] = l1_rho[gi]
    found[good] = True
    return normals, cents, rhos, found


# ─────────────────────────────────────────────────────────────
#  Raw-point baseline
# ─────────────────────────────────────────────────────────────

def raw_insert(tk, tv, cell_cnt, cell_pts, n_cells, codes, pts):
    n = codes.shape[0]
    if n == 0:
        return n_cells, 0
    cap = cell_pts.shape[1]
    u, inv = np.unique(codes, return_inverse=True)
    rows_u, n_new = table_upsert(tk, tv, u, n_cells)
    n_cells += n_new
    rows = rows_u[inv]
    order = np.argsort(inv, kind="stable")
    sizes = np.bincount(inv, minlength=u.shape[0])
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    pos = np.arange(n) - starts[inv[order]]
    dest = cell_cnt[rows[order]] + pos
    keep = dest < cap
    cell_pts[rows[order][keep], dest[keep]] = pts[order][keep].astype(cell_pts.dtype)
    cell_cnt[rows_u] = np.minimum(cell_cnt[rows_u] + sizes, cap)
    return n_cells, int(keep.sum())


_NEIGHBOR_OFFSETS = np.array(
    [[dx, dy, dz] for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)],
    dtype=np.int64,
)


def knn_gather(tk, tv, cell_cnt, cell_pts, q_keys, q_pts, k, chunk=512):
    q = q_keys.shape[0]
    cap = cell_pts.shape[1]
    neigh = np.zeros((q, k, 3))
    found = np.zeros(q, dtype=np.bool_)
    for lo in range(0, q, chunk):
        hi = min(lo + chunk, q)
        keys = q_keys[lo:hi, None, :] + _NEIGHBOR_OFFSETS[None, :, :]  # (C,27,3)
        ok = morton.in_range(keys)
        codes = morton.encode(np.where(ok[..., None], keys, 0))
        idx = table_lookup(tk, tv, codes.ravel()).reshape(codes.shape)
        present = ok & (idx >= 0)
        safe = np.where(present, idx, 0)
        pts = cell_pts[safe].astype(np.float64)          # (C,27,cap,3)
        cnts = np.where(present, cell_cnt[safe], 0)      # (C,27)
        slot_ok = np.arange(cap)[None, None, :] < cnts[..., None]
        diff = pts - q_pts[lo:hi, None, None, :]
        d2 = np.einsum("cnsj,cnsj->cns", diff, diff)
        d2[~slot_ok] = np.inf
        flat_d = d2.reshape(hi - lo, -1)
        flat_p = pts.reshape(hi - lo, -1, 3)
        n_avail = slot_ok.reshape(hi - lo, -1).sum(axis=1)
        sel = np.argpartition(flat_d, min(k, flat_d.shape[1] - 1), axis=1)[:, :k]
        rows = np.arange(hi - lo)[:, None]
        sel_d = flat_d[rows, sel]
        order = np.argsort(sel_d, axis=1, kind="stable")
        sel = sel[rows, order]
        got = n_avail >= k
        neigh[lo:hi][got] = flat_p[rows, sel][got]
        found[lo:hi] = got
    return neigh, found


def fit_planes(neigh, found, eps):
    q = neigh.shape[0]
    normals = np.zeros((q, 3))
    cents = np.zeros((q, 3))
    fi = np.flatnonzero(found)
    if fi.size:
        n, c, _ = _surfels_from_stacks(
            neigh[fi], np.ones((fi.size, neigh.shape[1])), eps
        )
        normals[fi] = n
        cents[fi] = c
    return normals, cents


# ─────────────────────────────────────────────────────────────
#  Point-to-plane normal equations
# ─────────────────────────────────────────────────────────────

def point_plane_system(rot, trans, pts, normals, cents, valid, gate):
    world = pts @ rot.T + trans
    r = np.einsum("ij,ij->i", normals, world - cents)
    use = valid & (np.abs(r) <= gate)
    m = int(use.sum())
    if m == 0:
        return np.zeros((6, 6)), np.zeros(6), 0, 0.0, use
    u = normals[use] @ rot  # rows are R^T n
    h = np.empty((m, 6))
    h[:, 0:3] = -np.cross(u, pts[use])
    h[:, 3:6] = normals[use]
    hth = h.T @ h
    htr = h.T @ r[use]
    return hth, htr, m, float(np.abs(r[use]).sum()), use


def warmup():
    """No compilation needed; present for API symmetry."""
