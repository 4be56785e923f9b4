"""The six pruning patterns: EW, VW, BW, TW, TEW, TVW.

Every pattern maps a weight matrix plus a target sparsity to a
:class:`PrunePlan` (keep/prune decision per element over the original shape,
plus accounting), and the tile-based patterns additionally produce a
condensed :class:`TileSparseMatrix` and, for TEW/TVW, an overlay or
vector metadata.

Tile-wise pruning runs in two passes.  The column pass scores full-height
columns globally, prunes the lowest, and condenses survivors; the condensed
matrix is then cut into width-``g`` tiles and the row pass prunes whole
row segments ranked jointly across all tiles.  Hybrids build on this:
TEW over-prunes, then restores the highest-scored pruned elements into a
column-compressed overlay; TVW follows the tile passes with a fixed 2:4
selection along the reduction dimension inside every tile payload.

Pruning functions are pure; selections are deterministic with ties broken
by ascending unit id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    IndexMask,
    TileConfig,
    VALUE_DTYPE,
    as_matrix,
    floor_count,
    rank_units,
)
from .errors import InvalidInputError
from .scoring import MAGNITUDE, ScoreProvider, score_elements, score_group

PATTERNS = ("ew", "vw", "bw", "tw", "tew", "tvw")

PLAN_SCHEMA = "plan-v1"


@dataclass(frozen=True)
class Tile:
    """One condensed tile: which original rows survive and their values."""

    kept_rows: IndexMask
    payload: np.ndarray

    def __post_init__(self):
        payload = np.ascontiguousarray(self.payload, dtype=VALUE_DTYPE)
        if payload.ndim != 2 or payload.shape[1] < 1:
            raise InvalidInputError("tile payload must be 2-D with width >= 1")
        if payload.shape[0] != self.kept_rows.n_kept:
            raise InvalidInputError(
                f"payload height {payload.shape[0]} != kept row count {self.kept_rows.n_kept}")
        if self.kept_rows.n_kept == 0:
            raise InvalidInputError("a tile must keep at least one row")
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)

    @property
    def width(self) -> int:
        return int(self.payload.shape[1])


@dataclass(frozen=True)
class TileSparseMatrix:
    """Condensed tile-wise representation of a pruned K x N matrix.

    ``column_mask`` lists the globally surviving columns; the condensed
    columns are split into ``ceil(N' / g)`` contiguous tiles, all of width
    ``g`` except possibly the last.  Each tile keeps its own subset of the
    original K rows and stores the surviving values as a dense payload.
    """

    config: TileConfig
    column_mask: IndexMask
    tiles: Tuple[Tile, ...]
    original_dims: Tuple[int, int]

    def __post_init__(self):
        k, n = self.original_dims
        if k < 1 or n < 1:
            raise InvalidInputError(f"original dims must be >= 1, got {self.original_dims}")
        if self.column_mask.domain_len != n:
            raise InvalidInputError("column mask domain must equal the original column count")
        n_cond = self.column_mask.n_kept
        if n_cond == 0:
            raise InvalidInputError("at least one column must survive")
        g = self.config.granularity_g
        tiles = tuple(self.tiles)
        expected = math.ceil(n_cond / g)
        if len(tiles) != expected:
            raise InvalidInputError(f"expected {expected} tiles for {n_cond} condensed columns, got {len(tiles)}")
        widths = [t.width for t in tiles]
        if sum(widths) != n_cond:
            raise InvalidInputError("tile widths must partition the condensed columns")
        if any(w != g for w in widths[:-1]) or widths[-1] > g:
            raise InvalidInputError("all tiles must have width g except a narrower last tile")
        for t in tiles:
            if t.kept_rows.domain_len != k:
                raise InvalidInputError("tile row masks must cover the original K rows")
        object.__setattr__(self, "tiles", tiles)
        object.__setattr__(self, "original_dims", (int(k), int(n)))

    @property
    def n_condensed(self) -> int:
        return self.column_mask.n_kept

    @property
    def tile_widths(self) -> List[int]:
        return [t.width for t in self.tiles]

    def tile_columns(self, index: int) -> np.ndarray:
        """Original column indices covered by tile ``index``."""
        g = self.config.granularity_g
        start = index * g
        return self.column_mask.kept[start:start + self.tiles[index].width]

    def keep_mask(self) -> np.ndarray:
        """Boolean K x N mask of structural payload slots (True = stored)."""
        k, n = self.original_dims
        mask = np.zeros((k, n), dtype=bool)
        for i, tile in enumerate(self.tiles):
            mask[np.ix_(tile.kept_rows.kept, self.tile_columns(i))] = True
        return mask

    def reconstruct(self, overlay: Optional["SparseOverlay"] = None) -> np.ndarray:
        """Scatter payloads (and an optional overlay) back to dense K x N."""
        k, n = self.original_dims
        out = np.zeros((k, n), dtype=VALUE_DTYPE)
        for i, tile in enumerate(self.tiles):
            out[np.ix_(tile.kept_rows.kept, self.tile_columns(i))] = tile.payload
        if overlay is not None:
            if overlay.dims != self.original_dims:
                raise InvalidInputError("overlay dims must match the matrix dims")
            rows, cols = overlay.coords()
            out[rows, cols] = overlay.values
        return out


@dataclass(frozen=True)
class SparseOverlay:
    """Column-compressed store of individually restored elements."""

    dims: Tuple[int, int]
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k, n = self.dims
        col_ptr = np.asarray(self.col_ptr, dtype=np.int64)
        row_idx = np.asarray(self.row_idx, dtype=np.int64)
        values = np.asarray(self.values, dtype=VALUE_DTYPE)
        if col_ptr.shape != (n + 1,) or col_ptr[0] != 0 or col_ptr[-1] != row_idx.size:
            raise InvalidInputError("malformed overlay column pointers")
        if np.any(np.diff(col_ptr) < 0):
            raise InvalidInputError("overlay column pointers must be non-decreasing")
        if row_idx.size != values.size:
            raise InvalidInputError("overlay row indices and values must align")
        for c in range(n):
            rows = row_idx[col_ptr[c]:col_ptr[c + 1]]
            if rows.size and (rows[0] < 0 or rows[-1] >= k or np.any(np.diff(rows) <= 0)):
                raise InvalidInputError("overlay rows must be strictly increasing within a column")
        for arr in (col_ptr, row_idx, values):
            arr.setflags(write=False)
        object.__setattr__(self, "col_ptr", col_ptr)
        object.__setattr__(self, "row_idx", row_idx)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_coords(cls, dims, rows, cols, values) -> "SparseOverlay":
        k, n = dims
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=VALUE_DTYPE).ravel()
        if not (rows.size == cols.size == values.size):
            raise InvalidInputError("rows, cols, values must have equal length")
        order = np.lexsort((rows, cols))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size:
            dup = (np.diff(cols) == 0) & (np.diff(rows) == 0)
            if np.any(dup):
                raise InvalidInputError("duplicate overlay coordinates")
        col_ptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(col_ptr, cols + 1, 1)
        np.cumsum(col_ptr, out=col_ptr)
        return cls(dims=(int(k), int(n)), col_ptr=col_ptr, row_idx=rows, values=values)

    @classmethod
    def empty(cls, dims) -> "SparseOverlay":
        return cls.from_coords(dims, [], [], [])

    @property
    def nnz(self) -> int:
        return int(self.row_idx.size)

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        cols = np.repeat(np.arange(self.dims[1], dtype=np.int64), np.diff(self.col_ptr))
        return self.row_idx, cols

    def column(self, c: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.col_ptr[c], self.col_ptr[c + 1]
        return self.row_idx[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dims, dtype=VALUE_DTYPE)
        rows, cols = self.coords()
        out[rows, cols] = self.values
        return out


@dataclass(frozen=True)
class VwMeta:
    """Per-vector survivor offsets for n:m selections along K.

    ``kept_offsets`` holds one array per tile (a single entry for plain VW
    on a dense matrix) of shape ``(n_complete_vectors, width,
    keep_per_vector)``; every complete vector keeps exactly
    ``keep_per_vector`` elements.  Trailing ragged vectors are budgeted by
    their actual length and are not described here.
    """

    vector_len: int
    keep_per_vector: int
    kept_offsets: Tuple[np.ndarray, ...]


@dataclass
class PrunePlan:
    """Outcome of one pattern pruning: decisions plus accounting.

    ``element_mask`` is a boolean array over the original shape with True
    marking kept elements.  ``params`` records the pattern knobs actually
    used (including the per-pass sparsity shares for the tile patterns and
    the plan's declared ``slack_bound``); ``clamps`` counts budget that the
    minimum-keep rules refused rather than redistributed.
    """

    pattern: str
    target_sparsity: float
    achieved_sparsity: float
    shape: Tuple[int, int]
    element_mask: Optional[np.ndarray]
    params: dict = field(default_factory=dict)
    clamps: dict = field(default_factory=dict)
    tile_kept_rows: Optional[List[int]] = None
    tile_widths: Optional[List[int]] = None

    def to_json_dict(self) -> dict:
        doc = {
            "schema": PLAN_SCHEMA,
            "pattern": self.pattern,
            "target_sparsity": float(self.target_sparsity),
            "achieved_sparsity": float(self.achieved_sparsity),
            "shape": [int(self.shape[0]), int(self.shape[1])],
            "params": {k: (v if isinstance(v, str) else float(v)) for k, v in self.params.items()},
            "clamps": {k: int(v) for k, v in self.clamps.items()},
        }
        if self.tile_kept_rows is not None:
            doc["tiles"] = {
                "kept_rows": [int(v) for v in self.tile_kept_rows],
                "widths": [int(v) for v in self.tile_widths],
            }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PrunePlan":
        if doc.get("schema") != PLAN_SCHEMA:
            raise InvalidInputError(f"unsupported plan schema {doc.get('schema')!r}")
        tiles = doc.get("tiles") or {}
        return cls(
            pattern=doc["pattern"],
            target_sparsity=doc["target_sparsity"],
            achieved_sparsity=doc["achieved_sparsity"],
            shape=(int(doc["shape"][0]), int(doc["shape"][1])),
            element_mask=None,
            params=dict(doc.get("params", {})),
            clamps=dict(doc.get("clamps", {})),
            tile_kept_rows=tiles.get("kept_rows"),
            tile_widths=tiles.get("widths"),
        )


@dataclass
class PruneResult:
    """Normalized bundle returned by :func:`prune_matrix`."""

    plan: PrunePlan
    tile_matrix: Optional[TileSparseMatrix] = None
    overlay: Optional[SparseOverlay] = None
    vw_meta: Optional[VwMeta] = None


def _check_target(target_sparsity: float, low: float = 0.0) -> float:
    s = float(target_sparsity)
    if not low <= s < 1.0:
        raise InvalidInputError(f"target sparsity must be in [{low}, 1), got {s}")
    return s


def _finite_scores(scores: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("importance scores must be finite")
    return scores


def _achieved(mask: np.ndarray) -> float:
    return 1.0 - float(np.count_nonzero(mask)) / mask.size


def prune_ew(w, target_sparsity: float, provider: ScoreProvider = MAGNITUDE) -> PrunePlan:
    """Element-wise pruning: zero the globally lowest-scored elements."""
    w = as_matrix(w)
    s = _check_target(target_sparsity)
    scores = _finite_scores(score_elements(w, provider)).ravel()
    count = floor_count(s, scores.size)
    order = rank_units(np.arange(scores.size), scores)
    mask = np.ones(scores.size, dtype=bool)
    mask[order[:count]] = False
    mask = mask.reshape(w.shape)
    return PrunePlan(
        pattern="ew",
        target_sparsity=s,
        achieved_sparsity=_achieved(mask),
        shape=w.shape,
        element_mask=mask,
        params={"score": provider.kind, "slack_bound": 1.0 / w.size},
    )


def _vw_keep_mask(scores: np.ndarray, target_sparsity: float, vector_len: int):
    """Exact-count n:m selection along axis 0, independently per vector.

    Vectors run down each column in groups of ``vector_len`` rows; a
    trailing ragged vector is budgeted by its actual length.  Returns the
    boolean keep mask plus the kept offsets of the complete vectors.
    """
    k, n = scores.shape
    length = vector_len
    keep = np.ones((k, n), dtype=bool)
    n_full = k // length
    prune_full = floor_count(target_sparsity, length)
    keep_full = length - prune_full
    offsets = np.empty((n_full, n, keep_full), dtype=np.int8)
    if n_full:
        block = scores[:n_full * length].reshape(n_full, length, n).transpose(0, 2, 1)
        order = np.argsort(block, axis=2, kind="stable")
        if prune_full:
            pruned_off = order[:, :, :prune_full]
            vec_idx = np.repeat(np.arange(n_full), n * prune_full)
            col_idx = np.tile(np.repeat(np.arange(n), prune_full), n_full)
            rows = vec_idx * length + pruned_off.ravel()
            keep[rows, col_idx] = False
        offsets[:] = np.sort(order[:, :, prune_full:], axis=2)
    rem = k - n_full * length
    if rem:
        cnt = floor_count(target_sparsity, rem)
        if cnt:
            tail = scores[n_full * length:]
            order = np.argsort(tail, axis=0, kind="stable")
            pruned = order[:cnt]
            cols = np.broadcast_to(np.arange(n), pruned.shape)
            keep[n_full * length + pruned.ravel(), cols.ravel()] = False
    return keep, offsets


def prune_vw(w, target_sparsity: float, vector_len: int,
             provider: ScoreProvider = MAGNITUDE) -> Tuple[PrunePlan, VwMeta]:
    """Vector-wise pruning: within every length-``vector_len`` vector along
    K, prune the ``floor(s * len)`` lowest-scored elements."""
    w = as_matrix(w)
    s = _check_target(target_sparsity)
    if vector_len < 2:
        raise InvalidInputError(f"vector_len must be >= 2, got {vector_len}")
    scores = _finite_scores(score_elements(w, provider))
    keep, offsets = _vw_keep_mask(scores, s, vector_len)
    k = w.shape[0]
    slack = 1.0 / vector_len + (1.0 / k if k % vector_len else 0.0)
    plan = PrunePlan(
        pattern="vw",
        target_sparsity=s,
        achieved_sparsity=_achieved(keep),
        shape=w.shape,
        element_mask=keep,
        params={"score": provider.kind, "vector_len": vector_len, "slack_bound": slack},
    )
    meta = VwMeta(vector_len=vector_len,
                  keep_per_vector=vector_len - floor_count(s, vector_len),
                  kept_offsets=(offsets,))
    return plan, meta


def prune_bw(w, target_sparsity: float, block: int,
             provider: ScoreProvider = MAGNITUDE) -> PrunePlan:
    """Block-wise pruning: zero the lowest-scored block x block units."""
    w = as_matrix(w)
    s = _check_target(target_sparsity)
    if block < 1:
        raise InvalidInputError(f"block must be >= 1, got {block}")
    k, n = w.shape
    br, bc = min(block, k), min(block, n)
    grid = _finite_scores(score_group(w, (br, bc), provider))
    n_units = grid.size
    count = floor_count(s, n_units)
    order = rank_units(np.arange(n_units), grid.ravel())
    mask = np.ones((k, n), dtype=bool)
    grid_cols = grid.shape[1]
    for unit in order[:count]:
        gr, gc = divmod(int(unit), grid_cols)
        mask[gr * br:(gr + 1) * br, gc * bc:(gc + 1) * bc] = False
    slack = 1.0 / n_units + (br / k if k % br else 0.0) + (bc / n if n % bc else 0.0)
    return PrunePlan(
        pattern="bw",
        target_sparsity=s,
        achieved_sparsity=_achieved(mask),
        shape=w.shape,
        element_mask=mask,
        params={"score": provider.kind, "block": block, "slack_bound": slack},
    )


def _resurrect_best(candidate_flags: np.ndarray, scores: np.ndarray) -> int:
    """Index of the highest-scored candidate, ties to the lowest index."""
    cand = np.flatnonzero(candidate_flags)
    best = cand[np.argmax(scores[cand])]
    # argmax returns the first maximum, which is the lowest index
    return int(best)


def tw_joint_prune(mats: Sequence[np.ndarray], elem_scores: Sequence[np.ndarray],
                   per_dim_sparsity: float, g: int):
    """Joint two-pass tile pruning over one or more matrices.

    Columns of all matrices are ranked together, then row segments of all
    resulting tiles are ranked together (global weight pruning).  The
    minimum-keep rules guarantee >= 1 surviving column per matrix and >= 1
    surviving row segment per tile; refused budget is counted, never
    redistributed.  The single-matrix patterns and the cross-layer scheduler
    both build on this pass pair.
    """
    n_layers = len(mats)
    col_layer, col_id, col_score = [], [], []
    for li, sc in enumerate(elem_scores):
        cs = sc.sum(axis=0)
        col_layer.append(np.full(cs.size, li, dtype=np.int64))
        col_id.append(np.arange(cs.size, dtype=np.int64))
        col_score.append(cs)
    col_layer = np.concatenate(col_layer)
    col_id = np.concatenate(col_id)
    col_score = np.concatenate(col_score)
    total_cols = col_id.size

    budget_c = floor_count(per_dim_sparsity, total_cols)
    order = np.lexsort((col_id, col_layer, col_score))
    col_pruned = np.zeros(total_cols, dtype=bool)
    col_pruned[order[:budget_c]] = True
    cols_unmet = 0
    for li in range(n_layers):
        in_layer = col_layer == li
        if np.all(col_pruned[in_layer]):
            best = _resurrect_best(in_layer & col_pruned, col_score)
            col_pruned[best] = False
            cols_unmet += 1

    per_layer = []
    seg_layer, seg_tile, seg_row, seg_score = [], [], [], []
    for li, (w, sc) in enumerate(zip(mats, elem_scores)):
        k = w.shape[0]
        keep_cols = np.sort(col_id[(col_layer == li) & ~col_pruned])
        cond_scores = sc[:, keep_cols]
        n_cond = keep_cols.size
        n_tiles = math.ceil(n_cond / g)
        bounds = [(t * g, min((t + 1) * g, n_cond)) for t in range(n_tiles)]
        tile_seg_scores = [cond_scores[:, lo:hi].sum(axis=1) for lo, hi in bounds]
        for t, s_scores in enumerate(tile_seg_scores):
            seg_layer.append(np.full(k, li, dtype=np.int64))
            seg_tile.append(np.full(k, t, dtype=np.int64))
            seg_row.append(np.arange(k, dtype=np.int64))
            seg_score.append(s_scores)
        per_layer.append({"keep_cols": keep_cols, "bounds": bounds, "k": k})

    seg_layer = np.concatenate(seg_layer)
    seg_tile = np.concatenate(seg_tile)
    seg_row = np.concatenate(seg_row)
    seg_score = np.concatenate(seg_score)
    total_segments = seg_row.size
    # unit id within a layer is tile-major then row, matching the merge order
    seg_unit = seg_tile * np.array([pl["k"] for pl in per_layer])[seg_layer] + seg_row

    budget_r = floor_count(per_dim_sparsity, total_segments)
    order = np.lexsort((seg_unit, seg_layer, seg_score))
    seg_pruned = np.zeros(total_segments, dtype=bool)
    seg_pruned[order[:budget_r]] = True
    rows_unmet = 0
    for li, pl in enumerate(per_layer):
        for t in range(len(pl["bounds"])):
            in_tile = (seg_layer == li) & (seg_tile == t)
            if np.all(seg_pruned[in_tile]):
                best = _resurrect_best(in_tile & seg_pruned, seg_score)
                seg_pruned[best] = False
                rows_unmet += 1

    results = []
    for li, (w, pl) in enumerate(zip(mats, per_layer)):
        k, n = w.shape
        keep_cols = pl["keep_cols"]
        condensed = w[:, keep_cols]
        tiles = []
        mask = np.zeros((k, n), dtype=bool)
        for t, (lo, hi) in enumerate(pl["bounds"]):
            sel = (seg_layer == li) & (seg_tile == t) & ~seg_pruned
            rows = np.sort(seg_row[sel])
            tiles.append(Tile(kept_rows=IndexMask(k, rows),
                              payload=condensed[rows, lo:hi]))
            mask[np.ix_(rows, keep_cols[lo:hi])] = True
        results.append({
            "column_mask": IndexMask(n, keep_cols),
            "tiles": tuple(tiles),
            "keep_mask": mask,
        })
    clamps = {"columns_unmet": cols_unmet, "rows_unmet": rows_unmet}
    counts = {"total_cols": total_cols, "total_segments": total_segments}
    return results, clamps, counts


def _tw_slack(k: int, n: int, g: int, n_cond: int, total_segments: int) -> float:
    """Declared |achieved - target| bound for one tile-wise pass pair.

    Two floor roundings plus the width deficit of a ragged last tile,
    which global segment ranking can concentrate pruning into.
    """
    n_tiles = math.ceil(n_cond / g)
    ragged = (g * n_tiles - n_cond) / n
    return 1.0 / min(k, n) + 1.0 / g + 1.0 / total_segments + ragged


def prune_tw(w, target_sparsity: float, g: int, provider: ScoreProvider = MAGNITUDE,
             input_tile_t: int = 32) -> Tuple[PrunePlan, TileSparseMatrix]:
    """Tile-wise pruning: global column pass, condense, retile, then a
    global row-segment pass, with the per-dimension budget
    ``s = 1 - sqrt(1 - target)`` so the two passes compose to the target."""
    w = as_matrix(w)
    s_t = _check_target(target_sparsity)
    config = TileConfig(granularity_g=g, input_tile_t=input_tile_t)
    s = 1.0 - math.sqrt(1.0 - s_t)
    scores = _finite_scores(score_elements(w, provider))
    results, clamps, counts = tw_joint_prune([w], [scores], s, config.granularity_g)
    res = results[0]
    tsm = TileSparseMatrix(config=config, column_mask=res["column_mask"],
                           tiles=res["tiles"], original_dims=w.shape)
    mask = res["keep_mask"]
    k, n = w.shape
    plan = PrunePlan(
        pattern="tw",
        target_sparsity=s_t,
        achieved_sparsity=_achieved(mask),
        shape=w.shape,
        element_mask=mask,
        params={
            "score": provider.kind,
            "g": g,
            "column_share": s,
            "row_share": s,
            "slack_bound": _tw_slack(k, n, g, tsm.n_condensed, counts["total_segments"]),
        },
        clamps=clamps,
        tile_kept_rows=[t.kept_rows.n_kept for t in tsm.tiles],
        tile_widths=tsm.tile_widths,
    )
    return plan, tsm


def tew_restore(w: np.ndarray, provider: ScoreProvider, tw_keep_mask: np.ndarray,
                delta: float) -> Tuple[np.ndarray, SparseOverlay, int]:
    """Restore the ``floor(delta * K * N)`` highest-scored pruned elements.

    Scores come from the pre-prune weights with surviving elements zeroed
    out of the ranking; ties break to the lowest flat index.  Returns the
    widened keep mask, the overlay holding the restored values, and the
    restore count (capped at the number of pruned elements).
    """
    k, n = w.shape
    scores = score_elements(w, provider).ravel().copy()
    keep_flat = tw_keep_mask.ravel()
    scores[keep_flat] = 0.0
    pruned_ids = np.flatnonzero(~keep_flat)
    restore_count = min(floor_count(delta, k * n), pruned_ids.size)
    if restore_count:
        order = np.lexsort((pruned_ids, -scores[pruned_ids]))
        restored = np.sort(pruned_ids[order[:restore_count]])
    else:
        restored = np.empty(0, dtype=np.int64)
    rows, cols = np.unravel_index(restored, (k, n))
    overlay = SparseOverlay.from_coords((k, n), rows, cols, w[rows, cols])
    mask = tw_keep_mask.copy()
    mask.ravel()[restored] = True
    return mask, overlay, restore_count


def prune_tew(w, target_sparsity: float, delta: float, g: int,
              provider: ScoreProvider = MAGNITUDE,
              input_tile_t: int = 32) -> Tuple[PrunePlan, TileSparseMatrix, SparseOverlay]:
    """Tile-wise pruning with an element-wise remedy overlay.

    Runs TW at ``target + delta``, then restores the ``floor(delta * K * N)``
    highest-scored pruned elements into a column-compressed overlay, so the
    net sparsity lands near the target.  Restore scores are computed on the
    pre-TW weights with surviving elements zeroed out of the ranking.
    """
    w = as_matrix(w)
    s_t = _check_target(target_sparsity)
    delta = float(delta)
    if delta < 0:
        raise InvalidInputError(f"delta must be >= 0, got {delta}")
    if s_t + delta >= 1.0:
        raise InvalidInputError(f"target + delta must be < 1, got {s_t + delta}")
    tw_plan, tsm = prune_tw(w, s_t + delta, g, provider, input_tile_t)
    k, n = w.shape
    mask, overlay, restore_count = tew_restore(w, provider, tw_plan.element_mask, delta)
    plan = PrunePlan(
        pattern="tew",
        target_sparsity=s_t,
        achieved_sparsity=_achieved(mask),
        shape=w.shape,
        element_mask=mask,
        params={
            **tw_plan.params,
            "delta": delta,
            "tw_target": s_t + delta,
            "restored": restore_count,
            "slack_bound": tw_plan.params["slack_bound"] + 1.0 / (k * n),
        },
        clamps=tw_plan.clamps,
        tile_kept_rows=tw_plan.tile_kept_rows,
        tile_widths=tw_plan.tile_widths,
    )
    return plan, tsm, overlay


def tvw_stage(w: np.ndarray, provider: ScoreProvider, tsm0: TileSparseMatrix,
              tw_keep_mask: np.ndarray) -> Tuple[TileSparseMatrix, np.ndarray, VwMeta]:
    """Apply the fixed 2:4 selection inside every tile payload.

    Selections are re-scored on the condensed payload (equivalently, on the
    gathered element scores), vectors run down payload rows aligned to
    payload row zero.  Pruned slots stay in the payload as zeros.
    """
    scores = score_elements(w, provider)
    cond_scores = scores[:, tsm0.column_mask.kept]
    mask = tw_keep_mask.copy()
    new_tiles = []
    offsets = []
    gpos = 0
    for i, tile in enumerate(tsm0.tiles):
        lo, hi = gpos, gpos + tile.width
        gpos = hi
        tile_scores = cond_scores[tile.kept_rows.kept, lo:hi]
        keep_local, off = _vw_keep_mask(tile_scores, 0.5, 4)
        offsets.append(off)
        new_tiles.append(Tile(kept_rows=tile.kept_rows,
                              payload=tile.payload * keep_local))
        cols = tsm0.tile_columns(i)
        sub = mask[np.ix_(tile.kept_rows.kept, cols)]
        mask[np.ix_(tile.kept_rows.kept, cols)] = sub & keep_local
    tsm = TileSparseMatrix(config=tsm0.config, column_mask=tsm0.column_mask,
                           tiles=tuple(new_tiles), original_dims=w.shape)
    meta = VwMeta(vector_len=4, keep_per_vector=2, kept_offsets=tuple(offsets))
    return tsm, mask, meta


def prune_tvw(w, target_sparsity: float, g: int, provider: ScoreProvider = MAGNITUDE,
              input_tile_t: int = 32) -> Tuple[PrunePlan, TileSparseMatrix, VwMeta]:
    """Tile-wise pruning fused with a fixed 2:4 selection in every payload.

    The tile passes run at ``s = 1 - 2 * (1 - target)`` and the 2:4 stage
    halves the remainder, so the total lands near the target.  Because the
    2:4 stage always removes half, targets below 0.5 are rejected.
    """
    w = as_matrix(w)
    s_t = float(target_sparsity)
    if s_t < 0.5:
        raise InvalidInputError(
            f"tvw target must be >= 0.5 (the 2:4 stage fixes a 50% floor), got {s_t}")
    _check_target(s_t, low=0.5)
    tw_share = 1.0 - 2.0 * (1.0 - s_t)
    tw_plan, tsm0 = prune_tw(w, tw_share, g, provider, input_tile_t)
    tsm, mask, meta = tvw_stage(w, provider, tsm0, tw_plan.element_mask)
    k, n = w.shape
    # ragged tail vectors (height % 4) round the 2:4 stage by up to half an
    # element per payload column
    vw_slack = 0.5 * tsm0.n_condensed / (k * n)
    plan = PrunePlan(
        pattern="tvw",
        target_sparsity=s_t,
        achieved_sparsity=_achieved(mask),
        shape=w.shape,
        element_mask=mask,
        params={
            "score": provider.kind,
            "g": g,
            "tw_share": tw_share,
            "column_share": tw_plan.params["column_share"],
            "row_share": tw_plan.params["row_share"],
            "vector_len": 4,
            "keep_per_vector": 2,
            "slack_bound": tw_plan.params["slack_bound"] + vw_slack,
        },
        clamps=tw_plan.clamps,
        tile_kept_rows=[t.kept_rows.n_kept for t in tsm.tiles],
        tile_widths=tsm.tile_widths,
    )
    return plan, tsm, meta


def to_tile_sparse(w, element_mask: np.ndarray, config: TileConfig) -> TileSparseMatrix:
    """Pack any masked dense matrix into the tile representation.

    Columns with no survivors are condensed away and, per tile, rows with no
    survivors are dropped; remaining pruned positions stay in the payload as
    zeros.  This makes every pattern executable by the tile engines.
    """
    w = as_matrix(w)
    mask = np.asarray(element_mask, dtype=bool)
    if mask.shape != w.shape:
        raise InvalidInputError(f"mask shape {mask.shape} != matrix shape {w.shape}")
    keep_cols = np.flatnonzero(mask.any(axis=0))
    if keep_cols.size == 0:
        raise InvalidInputError("mask keeps no columns; nothing to condense")
    masked = np.where(mask, w, np.float32(0.0))
    cond_vals = masked[:, keep_cols]
    cond_mask = mask[:, keep_cols]
    g = config.granularity_g
    n_cond = keep_cols.size
    tiles = []
    for t in range(math.ceil(n_cond / g)):
        lo, hi = t * g, min((t + 1) * g, n_cond)
        rows = np.flatnonzero(cond_mask[:, lo:hi].any(axis=1))
        tiles.append(Tile(kept_rows=IndexMask(w.shape[0], rows),
                          payload=cond_vals[rows, lo:hi]))
    return TileSparseMatrix(config=config,
                            column_mask=IndexMask(w.shape[1], keep_cols),
                            tiles=tuple(tiles), original_dims=w.shape)


def prune_matrix(pattern: str, w, target_sparsity: float,
                 provider: ScoreProvider = MAGNITUDE, *, g: int = 128,
                 delta: float = 0.0, input_tile_t: int = 32) -> PruneResult:
    """Dispatch to a pattern by name.

    ``g`` is the shared granularity knob: tile width for tw/tew/tvw, vector
    length for vw, block edge for bw.
    """
    if pattern not in PATTERNS:
        raise InvalidInputError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")
    if pattern == "ew":
        return PruneResult(plan=prune_ew(w, target_sparsity, provider))
    if pattern == "vw":
        plan, meta = prune_vw(w, target_sparsity, g, provider)
        return PruneResult(plan=plan, vw_meta=meta)
    if pattern == "bw":
        return PruneResult(plan=prune_bw(w, target_sparsity, g, provider))
    if pattern == "tw":
        plan, tsm = prune_tw(w, target_sparsity, g, provider, input_tile_t)
        return PruneResult(plan=plan, tile_matrix=tsm)
    if pattern == "tew":
        plan, tsm, overlay = prune_tew(w, target_sparsity, delta, g, provider, input_tile_t)
        return PruneResult(plan=plan, tile_matrix=tsm, overlay=overlay)
    plan, tsm, meta = prune_tvw(w, target_sparsity, g, provider, input_tile_t)
    return PruneResult(plan=plan, tile_matrix=tsm, vw_meta=meta)
