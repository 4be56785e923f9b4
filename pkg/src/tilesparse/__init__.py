"""Tile-wise sparsity engine: pruning, encodings, and verified sparse GEMM.

The package prunes weight matrices under six sparsity patterns (element,
vector, block, tile, tile+element overlay, tile+2:4), packs the survivors
into execution-friendly tile encodings, runs sparse GEMM on the CPU with a
masked dense reference for verification, and accounts FLOPs, memory, and
tile load balance.
"""

from .core import (
    IndexMask,
    Selection,
    TileConfig,
    apply_column_mask,
    apply_row_mask,
    as_matrix,
    floor_count,
    read_tgm1,
    select_prune_units,
    write_tgm1,
)
from .errors import (
    ContractViolationError,
    CorruptEncodingError,
    InvalidInputError,
    TileSparseError,
)
from .executor import (
    ExecutionTrace,
    GemmOutput,
    execute_batched,
    gemm_cto,
    gemm_dense,
    gemm_tew,
    gemm_tile_sparse,
    masked_dense_reference,
    relative_error,
    schedule_tiles,
)
from .formats import (
    CtoEncoding,
    TransposedTile,
    decode_cto,
    encode_cto,
    read_cto1,
    write_cto1,
)
from .metrics import SparsityReport, aggregate_reports, report
from .patterns import (
    PATTERNS,
    PrunePlan,
    PruneResult,
    SparseOverlay,
    Tile,
    TileSparseMatrix,
    VwMeta,
    prune_bw,
    prune_ew,
    prune_matrix,
    prune_tew,
    prune_tvw,
    prune_tw,
    prune_vw,
    to_tile_sparse,
)
from .scheduler import (
    Layer,
    LayerSet,
    PruneSchedule,
    ScheduleResult,
    global_rank,
    run_schedule,
    take_global_budget,
)
from .scoring import MAGNITUDE, ScoreProvider, score_elements, score_group

__version__ = "0.1.0"
