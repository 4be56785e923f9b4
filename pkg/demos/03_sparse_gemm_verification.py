#!/usr/bin/env python3
# Every sparse execution path against the masked dense oracle: same numbers,
# and the three tile paths agree bit for bit.

import numpy as np

from tilesparse import (
    encode_cto,
    execute_batched,
    gemm_cto,
    gemm_dense,
    gemm_tew,
    gemm_tile_sparse,
    prune_tew,
    prune_tw,
    relative_error,
)

rng = np.random.default_rng(2)
a = rng.normal(size=(32, 96)).astype(np.float32)
w = rng.normal(size=(96, 80)).astype(np.float32)

plan, tsm = prune_tw(w, 0.75, g=16)

# The oracle: zero the pruned positions in a dense copy, multiply densely.
oracle = gemm_dense(a, np.where(plan.element_mask, w, np.float32(0.0)))

per_tile = gemm_tile_sparse(a, tsm)
fused = gemm_cto(a, encode_cto(tsm))
batched, trace = execute_batched(a, tsm, workers=4)

print("per-tile vs oracle:", relative_error(per_tile.expand(), oracle))
print("fused    vs oracle:", relative_error(fused.expand(), oracle))
print("batched  vs oracle:", relative_error(batched.expand(), oracle))
print("paths bit-identical:",
      per_tile.condensed.tobytes() == fused.condensed.tobytes()
      == batched.condensed.tobytes())
print("executed flops:", trace.total_flops,
      "(dense would be", 2 * 32 * 96 * 80, ")")

# The condensed output only has the surviving columns; expand() places zero
# columns back where the column pass pruned.
print("condensed shape:", per_tile.condensed.shape,
      "expanded shape:", per_tile.expand().shape)

# Overlay execution: the tile product and the column-compressed overlay
# product are computed separately and summed, which is exactly what the
# linearity of matrix multiplication allows.
plan, tsm, overlay = prune_tew(w, 0.6, 0.05, g=16)
full = gemm_tew(a, tsm, overlay)
oracle = gemm_dense(a, np.where(plan.element_mask, w, np.float32(0.0)))
print("\noverlay path vs oracle:", relative_error(full.expand(), oracle))
print("overlay carries", overlay.nnz, "restored elements")
