import numpy as np
import pytest

from tilesparse.core import as_matrix
from tilesparse.errors import InvalidInputError
from tilesparse.executor import execute_batched
from tilesparse.metrics import aggregate_reports, report
from tilesparse.patterns import prune_ew, prune_tew, prune_tw


class TestReport:
    def test_no_pruning(self):
        rng = np.random.default_rng(0)
        w = as_matrix(rng.normal(size=(16, 16)))
        plan, tsm = prune_tw(w, 0.0, 4)
        rep = report(plan, tsm, m_rows=8)
        assert rep.flop_reduction == 0.0
        assert rep.imbalance == 1.0
        assert rep.dense_flops == 2 * 8 * 16 * 16

    def test_flop_reduction_equals_achieved_for_tw(self):
        rng = np.random.default_rng(1)
        w = as_matrix(rng.normal(size=(64, 64)))
        plan, tsm = prune_tw(w, 0.75, 16)
        rep = report(plan, tsm, m_rows=32)
        assert rep.flop_reduction == pytest.approx(plan.achieved_sparsity, abs=1e-12)

    def test_uniform_tiles_imbalance_one(self):
        rng = np.random.default_rng(2)
        w = as_matrix(rng.normal(size=(16, 16)))
        plan, tsm = prune_tw(w, 0.0, 4)
        rep = report(plan, tsm, m_rows=4)
        assert rep.imbalance == 1.0

    def test_sparse_flops_equals_trace(self):
        rng = np.random.default_rng(3)
        a = as_matrix(rng.normal(size=(8, 32)))
        w = as_matrix(rng.normal(size=(32, 32)))
        plan, tsm = prune_tw(w, 0.5, 8)
        rep = report(plan, tsm, m_rows=8)
        _, trace = execute_batched(a, tsm, workers=2)
        assert rep.sparse_flops == trace.total_flops
        assert rep.per_tile_flops == [2 * m for m in trace.per_tile_macs]

    def test_mask_representation_counts_columns(self):
        rng = np.random.default_rng(4)
        w = as_matrix(rng.normal(size=(10, 10)))
        plan = prune_ew(w, 0.4)
        rep = report(plan, plan.element_mask, m_rows=5)
        kept = int(np.count_nonzero(plan.element_mask))
        assert rep.sparse_flops == 2 * 5 * kept
        assert rep.flop_reduction == pytest.approx(plan.achieved_sparsity, abs=1e-12)

    def test_overlay_flops_added(self):
        rng = np.random.default_rng(5)
        w = as_matrix(rng.normal(size=(16, 16)))
        plan, tsm, overlay = prune_tew(w, 0.5, 0.1, 4)
        rep = report(plan, tsm, m_rows=4, overlay=overlay)
        base = report(plan, tsm, m_rows=4)
        assert rep.sparse_flops == base.sparse_flops + 2 * 4 * overlay.nnz
        assert "overlay_bytes" in rep.memory

    def test_index_beats_mask_below_half_density(self):
        # target 0.84 puts both per-dimension budgets at 0.4, strictly below
        # the 0.5 crossover of u16 offsets vs byte flags
        rng = np.random.default_rng(6)
        w = as_matrix(rng.normal(size=(32, 32)))
        plan, tsm = prune_tw(w, 0.84, 8)
        rep = report(plan, tsm, m_rows=4)
        assert rep.memory["index_bytes"] < rep.memory["mask_bytes"]

    def test_index_beats_mask_for_every_quarter_density_tile(self):
        from tilesparse.core import TileConfig
        from tilesparse.patterns import to_tile_sparse

        rng = np.random.default_rng(6)
        w = as_matrix(rng.normal(size=(32, 32)))
        mask = np.zeros((32, 32), dtype=bool)
        mask[::4, ::4] = True  # 25% density in both dimensions, everywhere
        tsm = to_tile_sparse(w, mask, TileConfig(granularity_g=4))
        for i, tile in enumerate(tsm.tiles):
            h, width = tile.kept_rows.n_kept, tile.width
            index_bytes = 2 * (h + width)
            span = 16 if i < len(tsm.tiles) - 1 else 20  # trailing pruned cols
            mask_bytes = 32 + span
            assert index_bytes < mask_bytes

    def test_mask_beats_index_when_dense(self):
        rng = np.random.default_rng(7)
        w = as_matrix(rng.normal(size=(32, 32)))
        plan, tsm = prune_tw(w, 0.0, 8)
        rep = report(plan, tsm, m_rows=4)
        assert rep.memory["index_bytes"] > rep.memory["mask_bytes"]

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        w = as_matrix(rng.normal(size=(8, 8)))
        plan, _ = prune_tw(w, 0.5, 4)
        with pytest.raises(InvalidInputError):
            report(plan, np.ones((4, 4), dtype=bool), m_rows=2)

    def test_json_schema(self):
        rng = np.random.default_rng(9)
        w = as_matrix(rng.normal(size=(8, 8)))
        plan, tsm = prune_tw(w, 0.5, 4)
        doc = report(plan, tsm, m_rows=2).to_json_dict()
        assert doc["schema"] == "report-v1"
        assert set(doc) >= {"pattern", "target", "achieved", "dense_flops",
                            "sparse_flops", "flop_reduction", "imbalance", "memory"}


class TestAggregate:
    def test_two_layers(self):
        rng = np.random.default_rng(10)
        reports = {}
        for name, s in (("a", 0.25), ("b", 0.75)):
            w = as_matrix(rng.normal(size=(16, 16)))
            plan, tsm = prune_tw(w, s, 4)
            reports[name] = report(plan, tsm, m_rows=4)
        combined = aggregate_reports(reports)
        assert combined.dense_flops == sum(r.dense_flops for r in reports.values())
        assert combined.sparse_flops == sum(r.sparse_flops for r in reports.values())
        assert len(combined.layers) == 2

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            aggregate_reports({})
