"""Active kernel backend, resolved once at import from SLIO_BACKEND."""
from . import backend

if backend.USE_NUMBA:
    from . import kernels_numba as impl
else:
    from . import kernels_numpy as impl

BACKEND = backend.BACKEND

EMPTY = impl.EMPTY
encode_batch = impl.encode_batch
decode_batch = impl.decode_batch
table_lookup = impl.table_lookup
table_upsert = impl.table_upsert
table_rehash = impl.table_rehash
table_probe_lengths = impl.table_probe_lengths
surfel_from_points = impl.surfel_from_points
map_insert = impl.map_insert
map_recompute = impl.map_recompute
map_query = impl.map_query
raw_insert = impl.raw_insert
knn_gather = impl.knn_gather
fit_planes = impl.fit_planes
point_plane_system = impl.point_plane_system
warmup = impl.warmup
