import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slio import morton


class TestQuantize:
    def test_worked_example(self):
        # (1.7, 2.3, 0.5) at 1.5 m cells lands in (1, 1, 0)
        assert tuple(morton.quantize(np.array([1.7, 2.3, 0.5]), 1.5)) == (1, 1, 0)

    def test_origin(self):
        for edge in (0.1, 0.5, 2.0):
            assert tuple(morton.quantize(np.zeros(3), edge)) == (0, 0, 0)

    def test_negative_floors_down(self):
        assert tuple(morton.quantize(np.array([-0.1, 0.0, 0.0]), 1.0)) == (-1, 0, 0)

    def test_bad_edge(self):
        with pytest.raises(ValueError):
            morton.quantize(np.zeros(3), 0.0)

    def test_range_error_names_axis(self):
        with pytest.raises(morton.KeyRangeError, match="y="):
            morton.check_range(np.array([0, 2**20, 0]))


class TestEncodeDecode:
    def test_unsigned_illustration_value(self):
        # interleaving x=1, y=1, z=0 gives code 3 in the no-offset convention
        assert int(morton.encode_unsigned(1, 1, 0)) == 3
        assert int(morton.encode_unsigned(0, 0, 0)) == 0

    def test_decode_zero_is_offset_origin(self):
        assert tuple(morton.decode_code(0)) == (-(2**20),) * 3

    def test_roundtrip_example(self):
        assert tuple(morton.decode_code(morton.encode_key(5, -3, 17))) == (5, -3, 17)

    def test_exhaustive_small_cube(self):
        axis = np.arange(-4, 5)
        keys = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"),
                        axis=-1).reshape(-1, 3)
        assert np.array_equal(morton.decode(morton.encode(keys)), keys)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        keys = rng.integers(morton.KEY_MIN, morton.KEY_MAX + 1,
                            size=(100_000, 3), dtype=np.int64)
        assert np.array_equal(morton.decode(morton.encode(keys)), keys)

    @given(st.integers(morton.KEY_MIN, morton.KEY_MAX),
           st.integers(morton.KEY_MIN, morton.KEY_MAX),
           st.integers(morton.KEY_MIN, morton.KEY_MAX))
    @settings(max_examples=300, deadline=None)
    def test_roundtrip_hypothesis(self, kx, ky, kz):
        assert morton.decode_code(morton.encode_key(kx, ky, kz)) == (kx, ky, kz)

    def test_spread_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        values = np.concatenate([[0, 1, 2, (1 << 21) - 1],
                                 rng.integers(0, 1 << 21, 500)])
        for x in values:
            assert int(morton.spread_bits(np.uint64(x))) == morton.spread_bits_naive(int(x))

    def test_top_bit_clear(self):
        rng = np.random.default_rng(2)
        keys = rng.integers(morton.KEY_MIN, morton.KEY_MAX + 1, size=(1000, 3))
        codes = morton.encode(keys)
        assert np.all(codes < np.uint64(1) << np.uint64(63))

    def test_scalar_encode_rejects_out_of_range(self):
        with pytest.raises(morton.KeyRangeError):
            morton.encode_key(2**20, 0, 0)


class TestLocality:
    def test_unit_steps_within_aligned_block(self):
        # keys differing by +1 along one axis inside an aligned 2x2x2 block
        # change the code by at most 7
        rng = np.random.default_rng(3)
        base = rng.integers(morton.KEY_MIN // 2, morton.KEY_MAX // 2,
                            size=(2000, 3), dtype=np.int64)
        # make the offset coordinate even so +1 stays inside the block
        base = ((base + 2**20) & ~np.int64(1)) - 2**20
        c0 = morton.encode(base).astype(np.int64)
        for axis in range(3):
            stepped = base.copy()
            stepped[:, axis] += 1
            c1 = morton.encode(stepped).astype(np.int64)
            assert np.abs(c1 - c0).max() <= 7


class TestParentKey:
    def test_examples(self):
        assert tuple(morton.parent_key(np.array([4, -2, 7]))) == (1, -1, 2)
        assert tuple(morton.parent_key(np.zeros(3, dtype=np.int64))) == (0, 0, 0)

    def test_exhaustive_grouping(self):
        # every coarse key owns exactly the 27 fine keys {3k + d}
        axis = np.arange(-9, 10)
        fine = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"),
                        axis=-1).reshape(-1, 3)
        parents = morton.parent_key(fine)
        for k1 in np.unique(parents, axis=0):
            children = fine[np.all(parents == k1, axis=1)]
            in_block = fine[np.all((fine >= 3 * k1) & (fine <= 3 * k1 + 2), axis=1)]
            if np.all((3 * k1 >= -9) & (3 * k1 + 2 <= 9)):
                assert children.shape[0] == 27
            assert children.shape[0] == in_block.shape[0]

    def test_children_map_back(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            k1 = rng.integers(-1000, 1000, size=3)
            deltas = np.stack(np.meshgrid([0, 1, 2], [0, 1, 2], [0, 1, 2],
                                          indexing="ij"), axis=-1).reshape(-1, 3)
            children = 3 * k1 + deltas
            assert np.all(morton.parent_key(children) == k1)

    def test_child_slot_covers_block(self):
        deltas = np.stack(np.meshgrid([0, 1, 2], [0, 1, 2], [0, 1, 2],
                                      indexing="ij"), axis=-1).reshape(-1, 3)
        base = np.array([6, -9, 3])
        slots = morton.child_slot(base + deltas)
        assert sorted(slots.tolist()) == list(range(27))
