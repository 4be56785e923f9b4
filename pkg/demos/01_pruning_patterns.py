#!/usr/bin/env python3
# Walk through the six pruning patterns on one small weight matrix and
# compare what each removes.

import numpy as np

from tilesparse import prune_bw, prune_ew, prune_matrix, prune_tvw, prune_tw, prune_vw

rng = np.random.default_rng(0)
w = rng.normal(size=(16, 16)).astype(np.float32)


def show(name, mask):
    art = "\n".join("".join(".#"[int(v)] for v in row) for row in mask)
    print(f"\n{name}: kept {mask.mean():.0%}")
    print(art)


# Element-wise: remove the globally smallest magnitudes, no structure at all.
plan = prune_ew(w, 0.5)
show("element-wise 50%", plan.element_mask)

# Vector-wise: every aligned 4-vector down a column keeps its 2 largest
# entries, the 2:4 pattern sparse tensor hardware executes natively.
plan, meta = prune_vw(w, 0.5, vector_len=4)
show("vector-wise 2:4", plan.element_mask)
print("complete vectors keep", meta.keep_per_vector, "of", meta.vector_len)

# Block-wise: whole 4x4 blocks live or die together. Coarse but friendly to
# dense kernels.
plan = prune_bw(w, 0.5, block=4)
show("block-wise 4x4", plan.element_mask)

# Tile-wise: prune whole columns globally, condense, cut the survivors into
# width-4 tiles, then prune row segments ranked across all tiles. The
# target splits evenly between the two passes: s = 1 - sqrt(1 - 0.5).
plan, tsm = prune_tw(w, 0.5, g=4)
show("tile-wise g=4", plan.element_mask)
print("per-pass share:", round(plan.params["column_share"], 4))
print("tile widths:", tsm.tile_widths,
      "kept rows per tile:", [t.kept_rows.n_kept for t in tsm.tiles])

# Tile + element overlay: over-prune with the tile passes, then restore the
# most important individual victims into a column-compressed overlay.
res = prune_matrix("tew", w, 0.5, g=4, delta=0.05)
show("tile + overlay (delta 5%)", res.plan.element_mask)
print("restored elements:", res.overlay.nnz)

# Tile + 2:4: tile passes take 1 - 2*(1 - s) of the work, the fixed 2:4
# stage halves what remains. Targets below 0.5 are impossible by design.
plan, tsm, _ = prune_tvw(w, 0.75, g=4)
show("tile + 2:4 at 75%", plan.element_mask)
print("achieved:", round(plan.achieved_sparsity, 4))
