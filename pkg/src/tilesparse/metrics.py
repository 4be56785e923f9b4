"""Sparsity, FLOP, memory, and load-imbalance accounting.

FLOPs follow the tile structure: a GEMM against a condensed tile matrix
executes ``2 * M * width * kept_rows`` FLOPs per tile (multiply and add
counted separately), against ``2 * M * N * K`` dense.  When only an element
mask is available the matrix is accounted as width-1 column units.

The memory model prices the two index representations a CPU engine would
actually pick.  A mask-based tile stores one byte per flag over the tile's
original extent: K row flags plus one flag per original column in the
tile's span (its condensed width plus its share of pruned columns, so the
spans partition N).  The offset encoding stores two bytes per entry (u16
covers dims below 65536) for the kept rows and kept columns only.  Offsets
therefore cost strictly less below 50% per-tile density.  Latency is
deliberately not modeled; wall clock, where reported, is labeled machine
specific.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Union

import numpy as np

from .errors import InvalidInputError
from .patterns import PrunePlan, SparseOverlay, TileSparseMatrix

REPORT_SCHEMA = "report-v1"

MASK_FLAG_BYTES = 1
OFFSET_ENTRY_BYTES = 2
VALUE_BYTES = 4


@dataclass
class SparsityReport:
    pattern: str
    target: float
    achieved: float
    m_rows: int
    dense_flops: int
    sparse_flops: int
    flop_reduction: float
    imbalance: float
    per_tile_flops: List[int]
    memory: Dict[str, int]
    layers: Optional[List[dict]] = None

    def to_json_dict(self) -> dict:
        doc = {
            "schema": REPORT_SCHEMA,
            "pattern": self.pattern,
            "target": float(self.target),
            "achieved": float(self.achieved),
            "m_rows": int(self.m_rows),
            "dense_flops": int(self.dense_flops),
            "sparse_flops": int(self.sparse_flops),
            "flop_reduction": float(self.flop_reduction),
            "imbalance": float(self.imbalance),
            "per_tile_flops": [int(v) for v in self.per_tile_flops],
            "memory": {k: int(v) for k, v in self.memory.items()},
        }
        if self.layers is not None:
            doc["layers"] = self.layers
        return doc


def _column_spans(kept_cols: np.ndarray, widths: List[int], n: int) -> List[int]:
    """Original-column span of each tile; spans partition [0, n)."""
    spans = []
    pos = 0
    start = 0
    for w in widths:
        end = int(kept_cols[pos + w - 1])
        spans.append(end - start + 1)
        start = end + 1
        pos += w
    spans[-1] += n - 1 - int(kept_cols[-1])
    return spans


def _tile_shape_counts(rep: Union[TileSparseMatrix, np.ndarray]):
    """(kept_rows, width, span) triples per execution unit, plus dims."""
    if isinstance(rep, TileSparseMatrix):
        k, n = rep.original_dims
        widths = rep.tile_widths
        spans = _column_spans(rep.column_mask.kept, widths, n)
        triples = [(t.kept_rows.n_kept, t.width, span)
                   for t, span in zip(rep.tiles, spans)]
    else:
        mask = np.asarray(rep, dtype=bool)
        if mask.ndim != 2:
            raise InvalidInputError("element mask must be 2-D")
        k, n = mask.shape
        kept_cols = np.flatnonzero(mask.any(axis=0))
        if kept_cols.size == 0:
            raise InvalidInputError("mask keeps no columns")
        spans = _column_spans(kept_cols, [1] * kept_cols.size, n)
        triples = [(int(mask[:, c].sum()), 1, span)
                   for c, span in zip(kept_cols, spans)]
    return triples, (k, n)


def report(plan: PrunePlan, rep: Union[TileSparseMatrix, np.ndarray], m_rows: int,
           overlay: Optional[SparseOverlay] = None) -> SparsityReport:
    """Account one pruned matrix for a GEMM with ``m_rows`` input rows."""
    if m_rows < 1:
        raise InvalidInputError(f"m_rows must be >= 1, got {m_rows}")
    triples, (k, n) = _tile_shape_counts(rep)
    if (k, n) != tuple(plan.shape):
        raise InvalidInputError(
            f"plan shape {tuple(plan.shape)} does not match representation {(k, n)}")
    per_tile_flops = [2 * m_rows * h * w for h, w, _ in triples]
    sparse_flops = sum(per_tile_flops)
    overlay_nnz = overlay.nnz if overlay is not None else 0
    sparse_flops += 2 * m_rows * overlay_nnz
    dense_flops = 2 * m_rows * k * n
    mean_tile = sum(per_tile_flops) / len(per_tile_flops)
    imbalance = (max(per_tile_flops) / mean_tile) if mean_tile > 0 else 1.0

    payload_bytes = sum(h * w for h, w, _ in triples) * VALUE_BYTES
    index_bytes = sum(h + w for h, w, _ in triples) * OFFSET_ENTRY_BYTES
    mask_bytes = sum(k + span for _, _, span in triples) * MASK_FLAG_BYTES
    memory = {
        "dense_bytes": k * n * VALUE_BYTES,
        "payload_bytes": payload_bytes,
        "index_bytes": index_bytes,
        "mask_bytes": mask_bytes,
        "total_sparse_bytes": payload_bytes + index_bytes,
    }
    if overlay is not None:
        memory["overlay_bytes"] = (overlay.nnz * (VALUE_BYTES + OFFSET_ENTRY_BYTES)
                                   + (n + 1) * VALUE_BYTES)
        memory["total_sparse_bytes"] += memory["overlay_bytes"]
    return SparsityReport(
        pattern=plan.pattern,
        target=plan.target_sparsity,
        achieved=plan.achieved_sparsity,
        m_rows=m_rows,
        dense_flops=dense_flops,
        sparse_flops=sparse_flops,
        flop_reduction=1.0 - sparse_flops / dense_flops,
        imbalance=imbalance,
        per_tile_flops=per_tile_flops,
        memory=memory,
    )


def aggregate_reports(named: Dict[str, SparsityReport]) -> SparsityReport:
    """Roll per-layer reports into one, keeping the per-layer breakdown."""
    if not named:
        raise InvalidInputError("nothing to aggregate")
    reports = list(named.values())
    dense = sum(r.dense_flops for r in reports)
    sparse = sum(r.sparse_flops for r in reports)
    all_tiles = [f for r in reports for f in r.per_tile_flops]
    mean_tile = sum(all_tiles) / len(all_tiles)
    memory: Dict[str, int] = {}
    for r in reports:
        for key, val in r.memory.items():
            memory[key] = memory.get(key, 0) + val
    total = sum(r.dense_flops // (2 * r.m_rows) for r in reports)
    kept = sum(round((1.0 - r.achieved) * (r.dense_flops // (2 * r.m_rows)))
               for r in reports)
    return SparsityReport(
        pattern=reports[0].pattern,
        target=reports[0].target,
        achieved=1.0 - kept / total,
        m_rows=reports[0].m_rows,
        dense_flops=dense,
        sparse_flops=sparse,
        flop_reduction=1.0 - sparse / dense,
        imbalance=(max(all_tiles) / mean_tile) if mean_tile > 0 else 1.0,
        per_tile_flops=all_tiles,
        memory=memory,
        layers=[{"name": name, **r.to_json_dict()} for name, r in named.items()],
    )
