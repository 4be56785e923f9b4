#!/usr/bin/env python3
# From a pruned tile matrix to the compressed-tile-offset encoding and its
# on-disk form, and back, bit for bit.

import tempfile
from pathlib import Path

import numpy as np

from tilesparse import (
    IndexMask,
    Tile,
    TileConfig,
    TileSparseMatrix,
    decode_cto,
    encode_cto,
    prune_tw,
    read_cto1,
    write_cto1,
)

# The offset idea in one picture: a tile that kept rows (1, 2, 4) stores the
# deltas against positions (0, 1, 2). Position + offset = original row, so a
# fused kernel gathers without any per-tile mask vector.
tile = Tile(kept_rows=IndexMask(5, [1, 2, 4]),
            payload=np.arange(6, dtype=np.float32).reshape(3, 2))
tsm = TileSparseMatrix(config=TileConfig(granularity_g=2),
                       column_mask=IndexMask(2, [0, 1]),
                       tiles=(tile,), original_dims=(5, 2))
enc = encode_cto(tsm)
print("kept rows:      ", enc.tile_rows(0).tolist())
print("stored offsets: ", enc.row_offsets[0].tolist())

# Offsets of all tiles are padded to one rectangular array (sentinel 0); the
# per-tile counts bound every loop so padding is never read.
rng = np.random.default_rng(1)
w = rng.normal(size=(24, 32)).astype(np.float32)
plan, tsm = prune_tw(w, 0.6, g=8)
enc = encode_cto(tsm)
print("\ntile row counts:", enc.row_counts.tolist())
print("offset matrix shape:", enc.row_offsets.shape)

# Payloads are packed transposed (a column of the tile becomes a row), the
# layout the executor streams through; decode restores the original exactly.
back = decode_cto(enc)
assert all(a.payload.tobytes() == b.payload.tobytes()
           for a, b in zip(back.tiles, tsm.tiles))
print("decode(encode(x)) == x:", True)

# The CTO1 file is a fixed little-endian layout with a JSON sidecar for
# humans; round trips are bit-exact.
with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "weights.cto"
    write_cto1(path, enc)
    again = read_cto1(path)
    print("file round trip bit-exact:", again.payload.tobytes() == enc.payload.tobytes())
    print("sidecar:", (Path(d) / "weights.cto.json").read_text().splitlines()[1].strip())
