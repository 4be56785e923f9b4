"""Execution-friendly encodings: compressed tile offsets and their on-disk form.

The compressed-tile-offset (CTO) codec replaces each tile's kept-row and
kept-column lists with delta offsets, ``offset[i] = kept[i] - i``, so a
fused executor can gather position ``i`` from original index
``i + offset[i]``.  Kept rows (1, 2, 4) therefore encode as offsets
(1, 1, 2).  Offset lists of all tiles are padded to a common length with a
zero sentinel; the per-tile counts bound every loop, so padded entries are
never dereferenced.

Payloads are stored transposed (a column of the original tile becomes a
row) and packed contiguously, which is the layout the executor streams
through.  Transposition happens here, at encode time, as offline weight
preparation.

On-disk format "CTO1", all integers little-endian:

====== ======================= =========================================
offset size                    field
====== ======================= =========================================
0      4                       magic ``b"CTO1"``
4      1                       dtype code u8 (1 = real32)
5      3                       reserved, zero
8      4 * 7                   u32: K, N, g, input_tile_t, tile_count,
                               max_rows, max_cols
36     tile_count * 4          u32 row counts
..     tile_count * 4          u32 col counts
..     tile_count*max_rows*4   u32 row offsets, zero padded
..     tile_count*max_cols*4   u32 col offsets, zero padded
..     sum(rows*cols) * 4      float32 payload, per tile transposed
====== ======================= =========================================

A JSON sidecar with the tile geometry is written next to the binary for
human inspection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .core import IndexMask, TileConfig, VALUE_DTYPE
from .errors import CorruptEncodingError, InvalidInputError
from .patterns import Tile, TileSparseMatrix

CTO1_MAGIC = b"CTO1"
CTO1_DTYPE_REAL32 = 1
_CTO1_HEADER = struct.Struct("<4sB3s7I")

PAD_SENTINEL = 0


@dataclass(frozen=True)
class TransposedTile:
    """A tile payload stored column-of-original-as-row."""

    payload_t: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.payload_t, dtype=VALUE_DTYPE)
        if p.ndim != 2:
            raise InvalidInputError("transposed payload must be 2-D")
        p.setflags(write=False)
        object.__setattr__(self, "payload_t", p)

    @classmethod
    def from_payload(cls, payload: np.ndarray) -> "TransposedTile":
        return cls(np.ascontiguousarray(np.asarray(payload).T))

    def transpose(self) -> "TransposedTile":
        return TransposedTile(np.ascontiguousarray(self.payload_t.T))

    def to_payload(self) -> np.ndarray:
        return np.ascontiguousarray(self.payload_t.T)


@dataclass(frozen=True)
class CtoEncoding:
    """Offset-encoded tile matrix ready for single-pass fused execution."""

    original_dims: Tuple[int, int]
    config: TileConfig
    row_counts: np.ndarray
    col_counts: np.ndarray
    row_offsets: np.ndarray
    col_offsets: np.ndarray
    payload: np.ndarray

    def __post_init__(self):
        row_counts = np.ascontiguousarray(self.row_counts, dtype=np.uint32)
        col_counts = np.ascontiguousarray(self.col_counts, dtype=np.uint32)
        row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.uint32)
        col_offsets = np.ascontiguousarray(self.col_offsets, dtype=np.uint32)
        payload = np.ascontiguousarray(self.payload, dtype=VALUE_DTYPE).ravel()
        t = row_counts.size
        if t < 1:
            raise CorruptEncodingError("encoding must contain at least one tile")
        if col_counts.size != t:
            raise CorruptEncodingError("row/col count arrays disagree on tile count")
        if row_offsets.ndim != 2 or row_offsets.shape[0] != t:
            raise CorruptEncodingError("row offset matrix must have one row per tile")
        if col_offsets.ndim != 2 or col_offsets.shape[0] != t:
            raise CorruptEncodingError("col offset matrix must have one row per tile")
        if np.any(row_counts < 1) or np.any(col_counts < 1):
            raise CorruptEncodingError("every tile must keep at least one row and one column")
        if row_offsets.shape[1] < int(row_counts.max()):
            raise CorruptEncodingError("row offsets narrower than the largest row count")
        if col_offsets.shape[1] < int(col_counts.max()):
            raise CorruptEncodingError("col offsets narrower than the largest col count")
        expected = int(np.sum(row_counts.astype(np.int64) * col_counts.astype(np.int64)))
        if payload.size != expected:
            raise CorruptEncodingError(
                f"payload has {payload.size} values, tile dims require {expected}")
        for arr in (row_counts, col_counts, row_offsets, col_offsets, payload):
            arr.setflags(write=False)
        object.__setattr__(self, "row_counts", row_counts)
        object.__setattr__(self, "col_counts", col_counts)
        object.__setattr__(self, "row_offsets", row_offsets)
        object.__setattr__(self, "col_offsets", col_offsets)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "original_dims",
                           (int(self.original_dims[0]), int(self.original_dims[1])))

    @property
    def tile_count(self) -> int:
        return int(self.row_counts.size)

    def payload_bounds(self) -> np.ndarray:
        """Start offsets of each tile's payload slice (length tile_count + 1)."""
        sizes = self.row_counts.astype(np.int64) * self.col_counts.astype(np.int64)
        return np.concatenate([[0], np.cumsum(sizes)])

    def tile_rows(self, index: int) -> np.ndarray:
        """Kept original row indices of one tile, via offset arithmetic."""
        h = int(self.row_counts[index])
        offs = self.row_offsets[index, :h].astype(np.int64)
        rows = np.arange(h, dtype=np.int64) + offs
        k = self.original_dims[0]
        if rows.size and (np.any(np.diff(rows) <= 0) or rows[0] < 0 or rows[-1] >= k):
            raise CorruptEncodingError(
                f"tile {index}: reconstructed rows are not strictly increasing within [0, {k})")
        return rows

    def tile_cols(self, index: int) -> np.ndarray:
        """Kept original column indices of one tile, via offset arithmetic."""
        w = int(self.col_counts[index])
        offs = self.col_offsets[index, :w].astype(np.int64)
        cols = np.arange(w, dtype=np.int64) + offs
        n = self.original_dims[1]
        if cols.size and (np.any(np.diff(cols) <= 0) or cols[0] < 0 or cols[-1] >= n):
            raise CorruptEncodingError(
                f"tile {index}: reconstructed cols are not strictly increasing within [0, {n})")
        return cols

    def tile_payload_t(self, index: int) -> np.ndarray:
        """One tile's payload in the stored transposed layout (width x rows)."""
        bounds = self.payload_bounds()
        h = int(self.row_counts[index])
        w = int(self.col_counts[index])
        return self.payload[bounds[index]:bounds[index + 1]].reshape(w, h)

    def index_entries(self) -> int:
        """Total offset-list entries actually used (not counting padding)."""
        return int(self.row_counts.sum()) + int(self.col_counts.sum())

    def geometry(self) -> dict:
        return {
            "k": self.original_dims[0],
            "n": self.original_dims[1],
            "g": self.config.granularity_g,
            "input_tile_t": self.config.input_tile_t,
            "tiles": [
                {"rows": int(h), "cols": int(w)}
                for h, w in zip(self.row_counts.tolist(), self.col_counts.tolist())
            ],
        }


def encode_cto(t: TileSparseMatrix) -> CtoEncoding:
    """Encode a tile matrix as padded per-tile delta offsets plus a packed,
    transposed payload."""
    n_tiles = len(t.tiles)
    row_counts = np.array([tile.kept_rows.n_kept for tile in t.tiles], dtype=np.uint32)
    col_counts = np.array([tile.width for tile in t.tiles], dtype=np.uint32)
    max_rows = int(row_counts.max())
    max_cols = int(col_counts.max())
    row_offsets = np.full((n_tiles, max_rows), PAD_SENTINEL, dtype=np.uint32)
    col_offsets = np.full((n_tiles, max_cols), PAD_SENTINEL, dtype=np.uint32)
    chunks = []
    for i, tile in enumerate(t.tiles):
        rows = tile.kept_rows.kept
        cols = t.tile_columns(i)
        row_offsets[i, :rows.size] = rows - np.arange(rows.size)
        col_offsets[i, :cols.size] = cols - np.arange(cols.size)
        chunks.append(TransposedTile.from_payload(tile.payload).payload_t.ravel())
    return CtoEncoding(
        original_dims=t.original_dims,
        config=t.config,
        row_counts=row_counts,
        col_counts=col_counts,
        row_offsets=row_offsets,
        col_offsets=col_offsets,
        payload=np.concatenate(chunks),
    )


def decode_cto(c: CtoEncoding) -> TileSparseMatrix:
    """Exact inverse of :func:`encode_cto`; rejects malformed encodings."""
    k, n = c.original_dims
    tiles = []
    all_cols = []
    g = c.config.granularity_g
    for i in range(c.tile_count):
        rows = c.tile_rows(i)
        cols = c.tile_cols(i)
        if i < c.tile_count - 1 and cols.size != g:
            raise CorruptEncodingError(
                f"tile {i}: interior tiles must have width g={g}, got {cols.size}")
        all_cols.append(cols)
        payload = TransposedTile(c.tile_payload_t(i)).to_payload()
        tiles.append(Tile(kept_rows=IndexMask(k, rows), payload=payload))
    kept_cols = np.concatenate(all_cols)
    if np.any(np.diff(kept_cols) <= 0):
        raise CorruptEncodingError("tile column ranges overlap or are out of order")
    try:
        return TileSparseMatrix(config=c.config,
                                column_mask=IndexMask(n, kept_cols),
                                tiles=tuple(tiles),
                                original_dims=(k, n))
    except InvalidInputError as exc:
        raise CorruptEncodingError(f"decoded structure is inconsistent: {exc}") from exc


def write_cto1(path, c: CtoEncoding, sidecar: bool = True) -> None:
    """Write the CTO1 binary; optionally a ``<path>.json`` geometry sidecar."""
    path = Path(path)
    header = _CTO1_HEADER.pack(
        CTO1_MAGIC, CTO1_DTYPE_REAL32, b"\x00\x00\x00",
        c.original_dims[0], c.original_dims[1],
        c.config.granularity_g, c.config.input_tile_t,
        c.tile_count, c.row_offsets.shape[1], c.col_offsets.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(c.row_counts.astype("<u4").tobytes())
        fh.write(c.col_counts.astype("<u4").tobytes())
        fh.write(c.row_offsets.astype("<u4").tobytes())
        fh.write(c.col_offsets.astype("<u4").tobytes())
        fh.write(c.payload.astype("<f4").tobytes())
    if sidecar:
        side = path.with_name(path.name + ".json")
        side.write_text(json.dumps(c.geometry(), indent=2, sort_keys=True) + "\n")


def read_cto1(path) -> CtoEncoding:
    """Read a CTO1 file; malformed bytes raise :class:`CorruptEncodingError`."""
    data = Path(path).read_bytes()
    if len(data) < _CTO1_HEADER.size:
        raise CorruptEncodingError(f"{path}: truncated CTO1 header")
    magic, dtype_code, reserved, k, n, g, t_rows, tile_count, max_rows, max_cols = \
        _CTO1_HEADER.unpack_from(data)
    if magic != CTO1_MAGIC:
        raise CorruptEncodingError(f"{path}: bad magic {magic!r}")
    if dtype_code != CTO1_DTYPE_REAL32:
        raise CorruptEncodingError(f"{path}: unsupported dtype code {dtype_code}")
    if reserved != b"\x00\x00\x00":
        raise CorruptEncodingError(f"{path}: reserved header bytes must be zero")
    if tile_count < 1 or k < 1 or n < 1 or g < 1 or t_rows < 1:
        raise CorruptEncodingError(f"{path}: degenerate header fields")
    pos = _CTO1_HEADER.size

    def take(count, dtype):
        nonlocal pos
        nbytes = count * 4
        if pos + nbytes > len(data):
            raise CorruptEncodingError(f"{path}: truncated at byte {pos}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += nbytes
        return arr

    row_counts = take(tile_count, "<u4")
    col_counts = take(tile_count, "<u4")
    row_offsets = take(tile_count * max_rows, "<u4").reshape(tile_count, max_rows)
    col_offsets = take(tile_count * max_cols, "<u4").reshape(tile_count, max_cols)
    payload_len = int(np.sum(row_counts.astype(np.int64) * col_counts.astype(np.int64)))
    payload = take(payload_len, "<f4")
    if pos != len(data):
        raise CorruptEncodingError(f"{path}: {len(data) - pos} trailing bytes")
    try:
        return CtoEncoding(
            original_dims=(k, n),
            config=TileConfig(granularity_g=g, input_tile_t=t_rows),
            row_counts=row_counts.astype(np.uint32),
            col_counts=col_counts.astype(np.uint32),
            row_offsets=row_offsets.astype(np.uint32),
            col_offsets=col_offsets.astype(np.uint32),
            payload=payload.astype(VALUE_DTYPE),
        )
    except InvalidInputError as exc:
        raise CorruptEncodingError(str(exc)) from exc
