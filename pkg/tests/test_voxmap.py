import numpy as np
import pytest

from slio import morton
from slio.geometry import PoseSE3, exp_so3
from slio.voxmap import SurfelVoxelMap, compute_surfel


def _batch_mean_oracle(points, edge):
    """Bin points by quantize and average each bin independently."""
    keys = morton.quantize(points, edge)
    codes = morton.encode(keys)
    out = {}
    for c in np.unique(codes):
        out[int(c)] = points[codes == c].mean(axis=0)
    return out


def _eigh_surfel_oracle(centroids, eps=1e-6):
    """Batch PCA via numpy eigh, independent of the map's solver."""
    c = np.asarray(centroids, dtype=np.float64)
    mean = c.mean(axis=0)
    dev = c - mean
    cov = dev.T @ dev / c.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    big = np.argmax(np.abs(normal))
    if normal[big] < 0:
        normal = -normal
    rho = max(vals[1] - vals[0], 0.0) / (vals[2] + eps)
    return normal, mean, rho


def _plane_points(n, seed, extent=4.0, z=1.3):
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, extent, n), rng.uniform(0, extent, n),
                            np.full(n, z)])


class TestInsert:
    def test_incremental_mean_arithmetic(self):
        # existing centroid (1,1,1) with count 1 absorbs (3,3,3) -> (2,2,2)
        m = SurfelVoxelMap(fine_edge=10.0)
        m.insert_points(np.array([[1.0, 1.0, 1.0]]))
        m.insert_points(np.array([[3.0, 3.0, 3.0]]))
        assert m.fine_count == 1
        np.testing.assert_array_equal(m.l0_centroid[0], [2.0, 2.0, 2.0])
        assert m.l0_count[0] == 2

    def test_single_point_bootstrap(self):
        m = SurfelVoxelMap()
        p = np.array([[0.4, -0.2, 1.1]])
        stats = m.insert_points(p, PoseSE3.identity())
        assert (stats.new_fine, stats.dirtied_coarse, stats.skipped) == (1, 1, 0)
        assert m.fine_count == 1 and m.coarse_count == 1
        np.testing.assert_array_equal(m.l0_centroid[0], p[0])
        assert m.l0_count[0] == 1
        assert m.l1_dirty[0]
        assert m.l1_child_count[0] == 1

    def test_centroids_match_batch_binning_oracle(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-5, 5, size=(10_000, 3))
        m = SurfelVoxelMap()
        m.insert_points(pts)
        oracle = _batch_mean_oracle(pts, m.fine_edge)
        assert m.fine_count == len(oracle)
        for i in range(m.fine_count):
            expected = oracle[int(m.l0_code[i])]
            np.testing.assert_allclose(m.l0_centroid[i], expected, atol=1e-9)

    def test_out_of_range_points_skipped(self):
        m = SurfelVoxelMap()
        pts = np.array([[0.0, 0.0, 0.0], [1e9, 0.0, 0.0], [np.nan, 0.0, 0.0]])
        stats = m.insert_points(pts)
        assert stats.skipped == 2
        assert m.fine_count == 1

    def test_pose_transforms_points(self):
        m = SurfelVoxelMap(fine_edge=1.0)
        pose = PoseSE3(exp_so3(np.array([0, 0, np.pi / 2])), np.array([5.0, 0, 0]))
        m.insert_points(np.array([[1.0, 0.0, 0.0]]), pose)
        np.testing.assert_allclose(m.l0_centroid[0], [5.0, 1.0, 0.0], atol=1e-12)

    def test_dirty_marked_once_per_call(self):
        m = SurfelVoxelMap(fine_edge=1.0)
        pts = np.tile(np.array([[0.1, 0.2, 0.3]]), (50, 1))
        stats = m.insert_points(pts)
        assert stats.dirtied_coarse == 1
        # still dirty from the first call: no double enqueue
        stats2 = m.insert_points(pts)
        assert stats2.dirtied_coarse == 0
        assert m.n_dirty == 1


class TestComputeSurfel:
    def test_hand_pca_oracle(self):
        cents = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0],
                          [0.5, 0.5, 0]], dtype=float)
        s = compute_surfel(cents)
        # covariance is diag(0.2, 0.2, 0): normal +z, rho = 0.2/(0.2 + eps)
        np.testing.assert_allclose(s.normal, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(s.centroid, [0.5, 0.5, 0], atol=1e-15)
        assert abs(s.planarity - 0.2 / (0.2 + 1e-6)) < 1e-9
        assert s.child_count == 5

    def test_matches_eigh_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            cents = rng.normal(size=(rng.integers(3, 20), 3))
            cents[:, 2] *= rng.uniform(0.0, 0.2)  # flatten towards a plane
            s = compute_surfel(cents)
            n_o, c_o, rho_o = _eigh_surfel_oracle(cents)
            np.testing.assert_allclose(c_o, s.centroid, atol=1e-12)
            assert abs(rho_o - s.planarity) < 1e-9
            assert min(np.linalg.norm(s.normal - n_o),
                       np.linalg.norm(s.normal + n_o)) < 1e-7

    def test_collinear_is_rejected(self):
        # rank-1 covariance: lam2 = lam3 = 0 up to roundoff, so the score
        # sits at the noise floor and fails any practical threshold
        cents = np.array([[0, 0, 0], [1, 2, 3], [2, 4, 6]], dtype=float)
        assert compute_surfel(cents).planarity < 1e-12

    def test_coincident_points(self):
        cents = np.ones((5, 3))
        assert compute_surfel(cents).planarity == 0.0

    def test_too_few_raises(self):
        with pytest.raises(ValueError):
            compute_surfel(np.zeros((2, 3)))

    def test_unit_normal(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            s = compute_surfel(rng.normal(size=(8, 3)))
            assert abs(np.linalg.norm(s.normal) - 1.0) < 1e-9

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            flat = rng.normal(size=(10, 3))
            flat[:, 2] = 0.0
            s0 = compute_surfel(flat)
            rot = exp_so3(rng.normal(size=3))
            s1 = compute_surfel(flat @ rot.T)
            rotated = rot @ s0.normal
            assert min(np.linalg.norm(s1.normal - rotated),
                       np.linalg.norm(s1.normal + rotated)) < 1e-9
            assert abs(s0.planarity - s1.planarity) < 1e-9


class TestRecompute:
    def test_nothing_dirty(self):
        assert SurfelVoxelMap().recompute_dirty() == 0

    def test_delegates_to_compute_surfel(self):
        m = SurfelVoxelMap()
        # five coplanar points in distinct fine children of one coarse cell
        base = np.array([0.05, 0.05, 0.9])
        offs = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [2, 2]]) * m.fine_edge
        pts = base + np.column_stack([offs, np.zeros(5)])
        m.insert_points(pts)
        assert m.recompute_dirty() == 1
        key = morton.quantize(base, m.coarse_edge)
        children = m.children_centroids(key)
        expected = compute_surfel(children, m.eps)
        got = m.query_surfel(base)
        np.testing.assert_allclose(got.normal, expected.normal, atol=1e-12)
        np.testing.assert_allclose(got.centroid, expected.centroid, atol=1e-12)
        assert abs(got.planarity - expected.planarity) < 1e-12

    def test_below_min_children_has_no_surfel(self):
        m = SurfelVoxelMap()
        m.insert_points(np.array([[0.1, 0.1, 0.1]]))
        assert m.recompute_dirty() == 0
        assert m.surfel_count == 0

    def test_interleaved_matches_fresh_rebuild(self):
        rng = np.random.default_rng(4)
        pts = _plane_points(5000, 5)
        pts[:, 2] += rng.normal(0, 0.01, 5000)
        chunks = np.array_split(pts, 10)
        m = SurfelVoxelMap()
        for chunk in chunks:
            m.insert_points(chunk)
            if rng.random() < 0.5:
                m.recompute_dirty()
        m.recompute_dirty()

        fresh = SurfelVoxelMap()
        fresh.insert_points(pts)
        fresh.recompute_dirty()

        assert m.coarse_count == fresh.coarse_count
        order_m = np.argsort(m.l1_code[:m.n_l1])
        order_f = np.argsort(fresh.l1_code[:fresh.n_l1])
        assert np.array_equal(m.l1_code[:m.n_l1][order_m],
                              fresh.l1_code[:fresh.n_l1][order_f])
        np.testing.assert_allclose(m.l1_normal[:m.n_l1][order_m],
                                   fresh.l1_normal[:fresh.n_l1][order_f], atol=1e-12)
        np.testing.assert_allclose(m.l1_rho[:m.n_l1][order_m],
                                   fresh.l1_rho[:fresh.n_l1][order_f], atol=1e-12)


class TestQuery:
    def test_empty_map(self):
        assert SurfelVoxelMap().query_surfel(np.zeros(3)) is None

    def test_planar_cell_returns_its_surfel(self):
        m = SurfelVoxelMap()
        m.insert_points(_plane_points(5000, 6))
        m.recompute_dirty()
        s = m.query_surfel(np.array([2.0, 2.0, 1.3]))
        assert s is not None
        assert abs(abs(s.normal[2]) - 1.0) < 1e-9
        assert s.planarity > 0.5

    def test_threshold_is_strict(self):
        m = SurfelVoxelMap()
        m.insert_points(_plane_points(5000, 7))
        m.recompute_dirty()
        q = np.array([2.0, 2.0, 1.3])
        rho = m.query_surfel(q).planarity
        m.min_planarity = rho          # rho > rho_min must be strict
        assert m.query_surfel(q) is None
        m.min_planarity = np.nextafter(rho, -np.inf)
        assert m.query_surfel(q) is not None

    def test_query_never_mutates(self):
        m = SurfelVoxelMap()
        pts = _plane_points(3000, 8)
        m.insert_points(pts)
        m.recompute_dirty()
        before = m.content_hash()
        m.query_batch(pts[:500])
        m.query_surfel(pts[0])
        m.query_batch(np.array([[99.0, 99.0, 99.0]]))
        assert m.content_hash() == before

    def test_batch_and_scalar_agree(self):
        m = SurfelVoxelMap()
        pts = _plane_points(3000, 9)
        m.insert_points(pts)
        m.recompute_dirty()
        queries = pts[:50]
        normals, cents, rhos, found = m.query_batch(queries)
        for i, q in enumerate(queries):
            s = m.query_surfel(q)
            if s is None:
                assert not found[i]
            else:
                assert found[i]
                np.testing.assert_array_equal(normals[i], s.normal)
                np.testing.assert_array_equal(cents[i], s.centroid)


class TestTrim:
    def test_nothing_outside(self):
        m = SurfelVoxelMap()
        m.insert_points(_plane_points(1000, 10))
        assert m.trim(np.array([2.0, 2.0, 0.0]), 50.0) == 0

    def test_single_far_voxel(self):
        m = SurfelVoxelMap()
        m.insert_points(np.array([[300.0, 0.0, 0.0]]))
        removed = m.trim(np.zeros(3), 100.0)
        assert removed == 2  # one fine + one coarse voxel
        assert m.fine_count == 0 and m.coarse_count == 0
        m.validate()

    def test_z_is_unbounded(self):
        m = SurfelVoxelMap()
        m.insert_points(np.array([[0.0, 0.0, 170.0]]))
        assert m.trim(np.zeros(3), 1.0) == 0

    def test_structure_stays_consistent(self):
        rng = np.random.default_rng(11)
        m = SurfelVoxelMap()
        m.insert_points(rng.uniform(-30, 30, size=(20_000, 3)))
        m.recompute_dirty()
        removed = m.trim(np.array([5.0, -3.0, 0.0]), 10.0)
        assert removed > 0
        m.validate()
        m.recompute_dirty()
        m.validate()
        # surviving voxel centers are inside the box
        k0 = morton.decode(m.l0_code[:m.n_l0])
        c0 = morton.cell_centers(k0, m.fine_edge)
        assert np.all(np.abs(c0[:, 0] - 5.0) <= 10.0)
        assert np.all(np.abs(c0[:, 1] + 3.0) <= 10.0)

    def test_boundary_cells_marked_dirty(self):
        m = SurfelVoxelMap()
        m.insert_points(_plane_points(5000, 12, extent=8.0))
        m.recompute_dirty()
        assert m.n_dirty == 0
        # 2 + 2.8 = 4.8 splits the coarse cell starting at 4.5: its center
        # stays inside while its outer fine children fall out
        m.trim(np.array([2.0, 2.0, 0.0]), 2.8)
        # coarse cells that lost children are queued for recomputation
        assert m.n_dirty > 0
        assert m.n_dirty == int(m.l1_dirty[:m.n_l1].sum())

    def test_bad_extent(self):
        with pytest.raises(ValueError):
            SurfelVoxelMap().trim(np.zeros(3), 0.0)


class TestInvariants:
    def test_lazy_batch_equivalence(self):
        rng = np.random.default_rng(13)
        m = SurfelVoxelMap()
        all_pts = []
        for _ in range(20):
            pts = _plane_points(300, rng.integers(1 << 30),
                                extent=6.0, z=rng.uniform(0, 3))
            all_pts.append(pts)
            m.insert_points(pts)
            if rng.random() < 0.4:
                m.recompute_dirty()
        m.recompute_dirty()
        stack = np.vstack(all_pts)
        for i in range(m.n_l1):
            if not m.l1_valid[i]:
                continue
            key = morton.decode(m.l1_code[i:i + 1])[0]
            children = m.children_centroids(key)
            n_o, c_o, rho_o = _eigh_surfel_oracle(children, m.eps)
            assert min(np.linalg.norm(m.l1_normal[i] - n_o),
                       np.linalg.norm(m.l1_normal[i] + n_o)) < 1e-9
            np.testing.assert_allclose(m.l1_centroid[i], c_o, atol=1e-9)
            assert abs(m.l1_rho[i] - rho_o) < 1e-9
        # and the fine level matches batch binning of everything inserted
        oracle = _batch_mean_oracle(stack, m.fine_edge)
        for i in range(m.fine_count):
            np.testing.assert_allclose(m.l0_centroid[i],
                                       oracle[int(m.l0_code[i])], atol=1e-9)

    def test_incremental_mean_drift(self):
        # 1e4 insertions into one voxel: incremental mean vs batch mean
        rng = np.random.default_rng(14)
        pts = rng.uniform(0.0, 0.16, size=(10_000, 3))
        m = SurfelVoxelMap()
        for chunk in np.array_split(pts, 100):
            m.insert_points(chunk)
        assert m.fine_count == 1
        np.testing.assert_allclose(m.l0_centroid[0], pts.mean(axis=0), atol=1e-9)

    def test_coplanar_normal_orthogonality(self):
        m = SurfelVoxelMap()
        m.insert_points(_plane_points(5000, 15))
        m.recompute_dirty()
        checked = 0
        for i in range(m.n_l1):
            if not m.l1_valid[i]:
                continue
            key = morton.decode(m.l1_code[i:i + 1])[0]
            children = m.children_centroids(key)
            dots = (children - m.l1_centroid[i]) @ m.l1_normal[i]
            assert np.abs(dots).max() < 1e-9
            checked += 1
        assert checked > 10

    def test_structural_integrity_random(self):
        rng = np.random.default_rng(16)
        m = SurfelVoxelMap()
        for _ in range(10):
            m.insert_points(rng.uniform(-20, 20, size=(2000, 3)))
        m.validate()
        assert m.l1_child_count[:m.n_l1].max() <= 27


def test_dump_surfels(tmp_path):
    m = SurfelVoxelMap()
    m.insert_points(_plane_points(4000, 17))
    m.recompute_dirty()
    path = tmp_path / "surfels.csv"
    n = m.dump_surfels(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "code,cx,cy,cz,nx,ny,nz,planarity,children"
    assert len(lines) == n + 1
    codes = [int(line.split(",")[0]) for line in lines[1:]]
    assert codes == sorted(codes)
    first = lines[1].split(",")
    assert len(first) == 9
    assert 1 <= int(first[8]) <= 27
