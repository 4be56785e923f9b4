"""Dense matrix carrier, tile geometry, index masks, and selection utilities.

Matrices are plain numpy arrays: 2-D, row-major, float32.  ``as_matrix`` is
the single validation chokepoint and everything downstream assumes its
output.  Dot products accumulate in float64 (see :mod:`tilesparse.executor`).

All types here are immutable after construction and safe to share across
threads; the operations are pure functions.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np

from .errors import InvalidInputError

VALUE_DTYPE = np.dtype(np.float32)
ACC_DTYPE = np.dtype(np.float64)

TGM1_MAGIC = b"TGM1"
TGM1_DTYPE_REAL32 = 1
_TGM1_HEADER = struct.Struct("<4sB3sII")


def as_matrix(values) -> np.ndarray:
    """Coerce ``values`` to the canonical dense carrier.

    Returns a C-contiguous 2-D float32 array with both dimensions >= 1.
    Raises :class:`InvalidInputError` otherwise.
    """
    m = np.ascontiguousarray(values, dtype=VALUE_DTYPE)
    if m.ndim != 2:
        raise InvalidInputError(f"matrix must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInputError(f"matrix dims must be >= 1, got {m.shape}")
    return m


def floor_count(fraction: float, n: int) -> int:
    """floor(fraction * n), evaluated in exact rational arithmetic.

    A guard at relative scale 2**-48 absorbs the binary representation error
    of decimal-intended fractions, so 0.37 of 100 is 37 even though
    float(0.37) sits just below 37/100.  Fractions genuinely below a
    boundary by more than that stay floored.
    """
    if n < 0:
        raise InvalidInputError(f"count must be non-negative, got {n}")
    prod = Fraction(float(fraction)) * n
    base = math.floor(prod)
    if prod > 0 and (base + 1 - prod) <= prod / (1 << 48):
        return base + 1
    return base


@dataclass(frozen=True)
class TileConfig:
    """Tile geometry: ``granularity_g`` is the tile width along N;
    ``input_tile_t`` is the executor's input-row blocking (also the FLOP
    model's T) and does not affect pruning decisions."""

    granularity_g: int = 128
    input_tile_t: int = 32

    def __post_init__(self):
        if self.granularity_g < 1:
            raise InvalidInputError(f"granularity_g must be >= 1, got {self.granularity_g}")
        if self.input_tile_t < 1:
            raise InvalidInputError(f"input_tile_t must be >= 1, got {self.input_tile_t}")


@dataclass(frozen=True)
class IndexMask:
    """Sorted unique indices kept out of a domain of ``domain_len`` slots."""

    domain_len: int
    kept: np.ndarray

    def __post_init__(self):
        if self.domain_len < 1:
            raise InvalidInputError(f"domain_len must be >= 1, got {self.domain_len}")
        kept = np.asarray(self.kept, dtype=np.int64).ravel()
        if kept.size and (kept[0] < 0 or kept[-1] >= self.domain_len or np.any(np.diff(kept) <= 0)):
            raise InvalidInputError("kept indices must be strictly increasing and within the domain")
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)

    @classmethod
    def from_bool(cls, flags) -> "IndexMask":
        flags = np.asarray(flags, dtype=bool).ravel()
        return cls(flags.size, np.flatnonzero(flags))

    @classmethod
    def full(cls, domain_len: int) -> "IndexMask":
        return cls(domain_len, np.arange(domain_len, dtype=np.int64))

    def to_bool(self) -> np.ndarray:
        flags = np.zeros(self.domain_len, dtype=bool)
        flags[self.kept] = True
        return flags

    @property
    def n_kept(self) -> int:
        return int(self.kept.size)

    @property
    def density(self) -> float:
        return self.kept.size / self.domain_len


@dataclass(frozen=True)
class Selection:
    """Deterministic outcome of an exact-count pruning selection."""

    pruned: np.ndarray
    kept: np.ndarray
    prune_count: int

    def __post_init__(self):
        for name in ("pruned", "kept"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def select_prune_units(scores: Iterable[Tuple[int, float]], target_sparsity: float) -> Selection:
    """Pick the ``floor(target_sparsity * n)`` lowest-scored units to prune.

    ``scores`` is an iterable of ``(unit_id, score)`` pairs.  Ties are broken
    by ascending unit id, so the result is a pure function of the multiset of
    pairs and never depends on input order.
    """
    pairs = list(scores)
    if not pairs:
        raise InvalidInputError("scores must be non-empty")
    if not 0.0 <= float(target_sparsity) <= 1.0:
        raise InvalidInputError(f"target_sparsity must be in [0, 1], got {target_sparsity}")
    ids = np.asarray([p[0] for p in pairs], dtype=np.int64)
    vals = np.asarray([p[1] for p in pairs], dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("scores must be finite")
    if np.unique(ids).size != ids.size:
        raise InvalidInputError("unit ids must be unique")
    count = floor_count(target_sparsity, ids.size)
    order = np.lexsort((ids, vals))
    pruned = np.sort(ids[order[:count]])
    kept = np.sort(ids[order[count:]])
    return Selection(pruned=pruned, kept=kept, prune_count=count)


def rank_units(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Argsort by (score asc, id asc); shared tie-break rule for all rankings."""
    return np.lexsort((np.asarray(ids, dtype=np.int64), np.asarray(scores, dtype=np.float64)))


def apply_column_mask(m: np.ndarray, mask: IndexMask) -> np.ndarray:
    """Gather the kept columns of ``m`` in their original relative order."""
    m = as_matrix(m)
    if mask.domain_len != m.shape[1]:
        raise InvalidInputError(
            f"mask domain {mask.domain_len} does not match column count {m.shape[1]}")
    if mask.n_kept == 0:
        raise InvalidInputError("empty condense: mask must keep at least one column")
    return np.ascontiguousarray(m[:, mask.kept])


def apply_row_mask(m: np.ndarray, mask: IndexMask) -> np.ndarray:
    """Gather the kept rows of ``m`` in their original relative order."""
    m = as_matrix(m)
    if mask.domain_len != m.shape[0]:
        raise InvalidInputError(
            f"mask domain {mask.domain_len} does not match row count {m.shape[0]}")
    if mask.n_kept == 0:
        raise InvalidInputError("empty condense: mask must keep at least one row")
    return np.ascontiguousarray(m[mask.kept, :])


def write_tgm1(path, m: np.ndarray) -> None:
    """Write a matrix in the TGM1 binary format.

    Layout: 16-byte header = magic ``b"TGM1"``, dtype code u8 (1 = real32),
    3 reserved zero bytes, rows u32 LE, cols u32 LE; then rows*cols float32
    LE values, row-major.  Round-trips are bit-exact.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    header = _TGM1_HEADER.pack(TGM1_MAGIC, TGM1_DTYPE_REAL32, b"\x00\x00\x00", rows, cols)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def read_tgm1(path) -> np.ndarray:
    """Read a TGM1 file written by :func:`write_tgm1`."""
    data = Path(path).read_bytes()
    if len(data) < _TGM1_HEADER.size:
        raise InvalidInputError(f"{path}: truncated TGM1 header")
    magic, dtype_code, reserved, rows, cols = _TGM1_HEADER.unpack_from(data)
    if magic != TGM1_MAGIC:
        raise InvalidInputError(f"{path}: bad magic {magic!r}")
    if dtype_code != TGM1_DTYPE_REAL32:
        raise InvalidInputError(f"{path}: unsupported dtype code {dtype_code}")
    if reserved != b"\x00\x00\x00":
        raise InvalidInputError(f"{path}: reserved header bytes must be zero")
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"{path}: dims must be >= 1, got {rows}x{cols}")
    expected = _TGM1_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_TGM1_HEADER.size)
    return np.ascontiguousarray(values.astype(VALUE_DTYPE, copy=True).reshape(rows, cols))
