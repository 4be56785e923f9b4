"""Sparse GEMM execution paths with a verified dense reference.

All kernels accumulate in float64 with a fixed ascending order over the
reduction dimension (per tile: ascending kept-row order), so the three tile
paths (per-tile, offset-fused, batched) produce bit-identical outputs and
every path can be checked against a masked dense reference within a tight
tolerance.

Outputs of the sparse paths are condensed to the surviving columns; use
:meth:`GemmOutput.expand` to place zero columns back at pruned positions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import ACC_DTYPE, IndexMask, TileConfig, as_matrix
from .errors import ContractViolationError, CorruptEncodingError, InvalidInputError
from .formats import CtoEncoding
from .patterns import SparseOverlay, TileSparseMatrix


def _mac_kernel(a64: np.ndarray, b64: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Rank-1 update loop: strictly ascending reduction order per element."""
    m, k = a64.shape
    n = b64.shape[1]
    if out is None:
        out = np.zeros((m, n), dtype=ACC_DTYPE)
    tmp = np.empty((m, n), dtype=ACC_DTYPE)
    for kk in range(k):
        np.multiply(a64[:, kk, None], b64[kk, None, :], out=tmp)
        out += tmp
    return out


def gemm_dense(a, b, config: Optional[TileConfig] = None) -> np.ndarray:
    """Reference dense product with float64 accumulation.

    Accumulation is strictly ascending in k for every output element, which
    makes the result bit-reproducible and equal to a naive triple loop.
    ``config`` only adds cache blocking over the output; it never changes
    the per-element operation order, so blocked and unblocked results are
    bit-identical.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"inner dims disagree: a is {a.shape}, b is {b.shape}")
    a64 = a.astype(ACC_DTYPE)
    b64 = b.astype(ACC_DTYPE)
    m, n = a.shape[0], b.shape[1]
    if config is None:
        return _mac_kernel(a64, b64)
    out = np.zeros((m, n), dtype=ACC_DTYPE)
    mt, nt = config.input_tile_t, config.granularity_g
    for m0 in range(0, m, mt):
        m1 = min(m0 + mt, m)
        for n0 in range(0, n, nt):
            n1 = min(n0 + nt, n)
            _mac_kernel(a64[m0:m1], b64[:, n0:n1], out=out[m0:m1, n0:n1])
    return out


@dataclass
class GemmOutput:
    """Condensed product plus the column map back to the original N."""

    condensed: np.ndarray
    column_map: IndexMask

    def expand(self) -> np.ndarray:
        """Full M x N result with zero columns at pruned positions."""
        m = self.condensed.shape[0]
        out = np.zeros((m, self.column_map.domain_len), dtype=ACC_DTYPE)
        out[:, self.column_map.kept] = self.condensed
        return out


@dataclass
class ExecutionTrace:
    """What a batched run did: per-tile work, assignment, and balance."""

    strategy: str
    workers: int
    per_tile_macs: List[int]
    assignment: List[int]
    per_worker_macs: List[int]

    @property
    def total_macs(self) -> int:
        return int(sum(self.per_tile_macs))

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    @property
    def imbalance(self) -> float:
        totals = np.asarray(self.per_worker_macs, dtype=np.float64)
        mean = totals.mean()
        return float(totals.max() / mean) if mean > 0 else 1.0

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "workers": self.workers,
            "per_tile_flops": [2 * m for m in self.per_tile_macs],
            "per_tile_macs": [int(m) for m in self.per_tile_macs],
            "assignment": [int(w) for w in self.assignment],
            "per_worker_flops": [2 * m for m in self.per_worker_macs],
            "imbalance": self.imbalance,
            "total_macs": self.total_macs,
            "total_flops": self.total_flops,
        }


def _tile_product(a64: np.ndarray, rows: np.ndarray, payload: np.ndarray) -> np.ndarray:
    a_sel = np.ascontiguousarray(a64[:, rows])
    p64 = np.ascontiguousarray(payload, dtype=ACC_DTYPE)
    return _mac_kernel(a_sel, p64)


def _check_problem(a: np.ndarray, original_k: int) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[1] != original_k:
        raise InvalidInputError(
            f"inner dims disagree: a has {a.shape[1]} cols, weights have K={original_k}")
    return a


def gemm_tile_sparse(a, b: TileSparseMatrix) -> GemmOutput:
    """Per-tile sparse GEMM: each tile gathers the input columns named by
    its kept rows and multiplies its payload; output is condensed to N'."""
    a = _check_problem(a, b.original_dims[0])
    a64 = a.astype(ACC_DTYPE)
    m = a.shape[0]
    out = np.empty((m, b.n_condensed), dtype=ACC_DTYPE)
    pos = 0
    for tile in b.tiles:
        out[:, pos:pos + tile.width] = _tile_product(a64, tile.kept_rows.kept, tile.payload)
        pos += tile.width
    return GemmOutput(condensed=out, column_map=b.column_mask)


def gemm_cto(a, c: CtoEncoding, check_padding: bool = False) -> GemmOutput:
    """Single-pass execution over the offset encoding.

    Gather indices come from offset arithmetic (position + offset); malformed
    offsets surface as :class:`CorruptEncodingError`.  With ``check_padding``
    the executor additionally asserts it never dereferences a padded entry.
    """
    k, n = c.original_dims
    a = _check_problem(a, k)
    a64 = a.astype(ACC_DTYPE)
    m = a.shape[0]
    n_cond = int(c.col_counts.sum())
    out = np.empty((m, n_cond), dtype=ACC_DTYPE)
    all_cols = []
    pos = 0
    for i in range(c.tile_count):
        rows = c.tile_rows(i)
        cols = c.tile_cols(i)
        if check_padding:
            assert rows.size == int(c.row_counts[i])
            assert cols.size == int(c.col_counts[i])
        all_cols.append(cols)
        payload = c.tile_payload_t(i).T
        out[:, pos:pos + cols.size] = _tile_product(a64, rows, payload)
        pos += cols.size
    kept_cols = np.concatenate(all_cols)
    if np.any(np.diff(kept_cols) <= 0):
        raise CorruptEncodingError("tile column ranges overlap or are out of order")
    return GemmOutput(condensed=out, column_map=IndexMask(n, kept_cols))


def gemm_tew(a, b: TileSparseMatrix, ov: SparseOverlay,
             tile_output: Optional[GemmOutput] = None) -> GemmOutput:
    """Tile product plus the overlay's column-compressed product, summed in
    the original column space and re-condensed to the union of surviving
    columns.  ``tile_output`` lets callers reuse an already computed tile
    product (for example from a batched run)."""
    if ov.dims != b.original_dims:
        raise InvalidInputError(
            f"overlay dims {ov.dims} do not match weights {b.original_dims}")
    a = _check_problem(a, b.original_dims[0])
    keep = b.keep_mask()
    ov_rows, ov_cols = ov.coords()
    if ov_rows.size and keep[ov_rows, ov_cols].any():
        raise ContractViolationError("overlay entries overlap tile payload positions")
    tile_out = tile_output if tile_output is not None else gemm_tile_sparse(a, b)
    full = tile_out.expand()
    a64 = a.astype(ACC_DTYPE)
    overlay_cols = np.unique(ov_cols)
    for col in overlay_cols:
        rows, vals = ov.column(int(col))
        full[:, col] += a64[:, rows] @ vals.astype(ACC_DTYPE)
    union = np.union1d(b.column_mask.kept, overlay_cols)
    column_map = IndexMask(b.original_dims[1], union)
    return GemmOutput(condensed=np.ascontiguousarray(full[:, union]), column_map=column_map)


def schedule_tiles(per_tile_macs: List[int], workers: int, strategy: str = "lpt") -> List[int]:
    """Assign tiles to workers; returns one worker index per tile.

    ``lpt`` places tiles in descending work order onto the least-loaded
    worker (ties to the lowest worker index); ``round_robin`` cycles tile i
    onto worker i % workers.  Both are deterministic.
    """
    if workers < 1:
        raise InvalidInputError(f"workers must be >= 1, got {workers}")
    n_tiles = len(per_tile_macs)
    if strategy == "round_robin":
        return [i % workers for i in range(n_tiles)]
    if strategy != "lpt":
        raise InvalidInputError(f"unknown strategy {strategy!r}")
    assignment = [0] * n_tiles
    loads = [0] * workers
    order = sorted(range(n_tiles), key=lambda i: (-per_tile_macs[i], i))
    for i in order:
        target = min(range(workers), key=lambda wkr: (loads[wkr], wkr))
        assignment[i] = target
        loads[target] += per_tile_macs[i]
    return assignment


def execute_batched(a, b: TileSparseMatrix, workers: int,
                    strategy: str = "lpt") -> Tuple[GemmOutput, ExecutionTrace]:
    """Run the tile products on up to ``workers`` threads.

    Tiles are prescheduled by per-tile multiply-add counts; each output
    column range is written by exactly one tile, so lanes never conflict and
    the numeric result is bit-identical to :func:`gemm_tile_sparse`.
    """
    a = _check_problem(a, b.original_dims[0])
    a64 = a.astype(ACC_DTYPE)
    m = a.shape[0]
    per_tile_macs = [m * t.width * t.kept_rows.n_kept for t in b.tiles]
    assignment = schedule_tiles(per_tile_macs, workers, strategy)
    starts = np.concatenate([[0], np.cumsum([t.width for t in b.tiles])])
    out = np.empty((m, b.n_condensed), dtype=ACC_DTYPE)

    def run_lane(worker: int) -> None:
        for i, tile in enumerate(b.tiles):
            if assignment[i] != worker:
                continue
            out[:, starts[i]:starts[i + 1]] = _tile_product(
                a64, tile.kept_rows.kept, tile.payload)

    if workers == 1:
        run_lane(0)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_lane, range(workers)))

    per_worker = [0] * workers
    for i, wkr in enumerate(assignment):
        per_worker[wkr] += per_tile_macs[i]
    trace = ExecutionTrace(strategy=strategy, workers=workers,
                           per_tile_macs=per_tile_macs, assignment=assignment,
                           per_worker_macs=per_worker)
    return GemmOutput(condensed=out, column_map=b.column_mask), trace


def masked_dense_reference(a, w, keep_mask: np.ndarray,
                           config: Optional[TileConfig] = None) -> np.ndarray:
    """Zero pruned positions in dense weights and run the reference kernel."""
    w = as_matrix(w)
    mask = np.asarray(keep_mask, dtype=bool)
    if mask.shape != w.shape:
        raise InvalidInputError(f"mask shape {mask.shape} != weights shape {w.shape}")
    return gemm_dense(a, np.where(mask, w, np.float32(0.0)), config)


def relative_error(result: np.ndarray, reference: np.ndarray) -> float:
    """max |result - reference| normalized by the largest reference magnitude."""
    result = np.asarray(result, dtype=ACC_DTYPE)
    reference = np.asarray(reference, dtype=ACC_DTYPE)
    if result.shape != reference.shape:
        raise InvalidInputError(f"shape mismatch: {result.shape} vs {reference.shape}")
    scale = float(np.max(np.abs(reference)))
    diff = float(np.max(np.abs(result - reference)))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale
