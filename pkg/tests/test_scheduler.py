import json

import numpy as np
import pytest

from tilesparse.errors import ContractViolationError, InvalidInputError
from tilesparse.patterns import prune_bw, prune_ew, prune_vw
from tilesparse.scheduler import (
    Layer,
    LayerSet,
    PruneSchedule,
    global_rank,
    run_schedule,
    take_global_budget,
)


def single_layer(rng, shape=(16, 16), name="fc"):
    return LayerSet((Layer(name, rng.normal(size=shape)),))


class TestScheduleConfig:
    def test_stage_targets(self):
        sched = PruneSchedule("ew", target_sparsity=0.75, sparsity_step=0.25)
        assert sched.stage_targets() == [0.25, 0.5, 0.75]

    def test_single_stage_when_step_equals_target(self):
        sched = PruneSchedule("ew", target_sparsity=0.6, sparsity_step=0.6)
        assert sched.stage_targets() == [0.6]

    def test_final_stage_clamped_to_target(self):
        sched = PruneSchedule("ew", target_sparsity=0.5, sparsity_step=0.2)
        targets = sched.stage_targets()
        assert targets[-1] == 0.5
        assert len(targets) == 3

    def test_tvw_stages_respect_hardware_floor(self):
        sched = PruneSchedule("tvw", target_sparsity=0.75, sparsity_step=0.25, g=4)
        assert sched.stage_targets() == [0.5, 0.75]

    def test_rejects_bad_step(self):
        with pytest.raises(InvalidInputError):
            PruneSchedule("ew", target_sparsity=0.5, sparsity_step=0.0)
        with pytest.raises(InvalidInputError):
            PruneSchedule("ew", target_sparsity=0.5, sparsity_step=0.6)

    def test_json_round_trip(self):
        sched = PruneSchedule("tw", 0.75, 0.25, g=64, score="magnitude", use_global=True)
        doc = sched.to_json_dict()
        assert doc == {"pattern": "tw", "S": 0.75, "s_s": 0.25, "g": 64,
                       "delta": 0.0, "score": "magnitude", "global": True}
        assert PruneSchedule.from_json_dict(doc) == sched


class TestRunSchedule:
    @pytest.mark.parametrize("pattern,builder,kwargs", [
        ("ew", lambda w, s: prune_ew(w, s).element_mask, {}),
        ("vw", lambda w, s: prune_vw(w, s, 4)[0].element_mask, {"g": 4}),
        ("bw", lambda w, s: prune_bw(w, s, 4).element_mask, {"g": 4}),
    ])
    def test_multistage_equals_single_shot(self, pattern, builder, kwargs):
        rng = np.random.default_rng(0)
        layers = single_layer(rng)
        sched = PruneSchedule(pattern, target_sparsity=0.75, sparsity_step=0.25,
                              **kwargs)
        result = run_schedule(layers, sched)
        direct = builder(layers.layers[0].weights, 0.75)
        assert np.array_equal(result.masks["fc"], direct)

    def test_stage_log_structure(self):
        rng = np.random.default_rng(1)
        layers = single_layer(rng)
        sched = PruneSchedule("ew", 0.75, 0.25)
        result = run_schedule(layers, sched)
        assert [e["target"] for e in result.stage_log] == [0.25, 0.5, 0.75]
        assert all("overall_achieved" in e for e in result.stage_log)
        lines = result.stage_log_lines().strip().split("\n")
        assert len(lines) == 3
        assert json.loads(lines[0])["stage"] == 0

    def test_masks_monotone_across_stages(self):
        rng = np.random.default_rng(2)
        layers = single_layer(rng)
        sched = PruneSchedule("tw", 0.75, 0.25, g=4)
        result = run_schedule(layers, sched)
        achieved = [e["layers"]["fc"]["achieved"] for e in result.stage_log]
        assert achieved == sorted(achieved)
        assert result.plans["fc"].achieved_sparsity == achieved[-1]

    def test_hook_updates_survivors(self):
        rng = np.random.default_rng(3)
        layers = single_layer(rng)

        def boost(weights, masks):
            return {"fc": np.where(masks["fc"], weights["fc"] * 2.0, 0.0)}

        sched = PruneSchedule("ew", 0.5, 0.25)
        result = run_schedule(layers, sched, fine_tune=boost)
        # two hook invocations double the survivors twice
        survivors = result.masks["fc"]
        expect = layers.layers[0].weights * 4.0
        assert np.allclose(result.weights["fc"][survivors], expect[survivors])

    def test_hook_resurrecting_pruned_position_rejected(self):
        rng = np.random.default_rng(4)
        layers = single_layer(rng)

        def bad_hook(weights, masks):
            w = weights["fc"]
            w[~masks["fc"]] = 7.0
            return {"fc": w}

        sched = PruneSchedule("ew", 0.5, 0.5)
        with pytest.raises(ContractViolationError):
            run_schedule(layers, sched, fine_tune=bad_hook)

    def test_structures_reflect_final_weights(self):
        rng = np.random.default_rng(5)
        layers = single_layer(rng)

        def boost(weights, masks):
            return {"fc": np.where(masks["fc"], weights["fc"] + 1.0, 0.0)}

        sched = PruneSchedule("tw", 0.5, 0.5, g=4)
        result = run_schedule(layers, sched, fine_tune=boost)
        tsm = result.structures["fc"]
        assert np.array_equal(tsm.reconstruct(), result.weights["fc"])

    def test_tew_overlay_returned(self):
        rng = np.random.default_rng(6)
        layers = single_layer(rng)
        sched = PruneSchedule("tew", 0.5, 0.5, g=4, delta=0.1)
        result = run_schedule(layers, sched)
        overlay = result.overlays["fc"]
        assert overlay is not None and overlay.nnz > 0
        recon = result.structures["fc"].reconstruct(overlay)
        assert np.array_equal(recon, result.weights["fc"])

    def test_deterministic_plans(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(12, 12))
        for sched in (PruneSchedule("tw", 0.75, 0.25, g=4),
                      PruneSchedule("ew", 0.6, 0.2)):
            r1 = run_schedule(LayerSet((Layer("fc", w),)), sched)
            r2 = run_schedule(LayerSet((Layer("fc", w),)), sched)
            d1 = json.dumps(r1.plans["fc"].to_json_dict(), sort_keys=True)
            d2 = json.dumps(r2.plans["fc"].to_json_dict(), sort_keys=True)
            assert d1 == d2
            assert r1.stage_log_lines() == r2.stage_log_lines()


class TestGlobalRank:
    def test_two_layer_example(self):
        layers = LayerSet((Layer("a", [[1.0]]), Layer("b", [[5.0]])))
        ranking = global_rank(layers, "column")
        pruned = take_global_budget(ranking, 0.5)
        assert pruned == [(0, 0)]

    def test_identical_layers_tie_break(self):
        layers = LayerSet((Layer("a", [[2.0, 2.0]]), Layer("b", [[2.0, 2.0]])))
        ranking = global_rank(layers, "column")
        assert [(l, u) for l, u, _ in ranking] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert take_global_budget(ranking, 0.5) == [(0, 0), (0, 1)]

    def test_disjoint_ranges_fill_lowest_layer_first(self):
        rng = np.random.default_rng(8)
        layers = LayerSet((
            Layer("low", rng.uniform(0.0, 1.0, size=(4, 4))),
            Layer("mid", rng.uniform(10.0, 11.0, size=(4, 4))),
            Layer("high", rng.uniform(100.0, 101.0, size=(4, 4))),
        ))
        ranking = global_rank(layers, "element")
        pruned = take_global_budget(ranking, 16 / 48)
        assert {l for l, _ in pruned} == {0}

    def test_block_ranking_needs_param(self):
        layers = LayerSet((Layer("a", np.ones((4, 4))),))
        with pytest.raises(InvalidInputError):
            global_rank(layers, "block")
        ranking = global_rank(layers, "block", unit_param=2)
        assert len(ranking) == 4


class TestGlobalSchedules:
    def test_global_ew_budget_is_cross_layer(self):
        rng = np.random.default_rng(9)
        small = np.abs(rng.normal(size=(4, 4))) * 0.01
        big = np.abs(rng.normal(size=(4, 4))) + 10.0
        layers = LayerSet((Layer("small", small), Layer("big", big)))
        sched = PruneSchedule("ew", 0.5, 0.5, use_global=True)
        result = run_schedule(layers, sched)
        assert not result.masks["small"].any()
        assert result.masks["big"].all()

    def test_global_budget_exact_count(self):
        rng = np.random.default_rng(10)
        layers = LayerSet((Layer("a", rng.normal(size=(6, 7))),
                           Layer("b", rng.normal(size=(5, 9)))))
        sched = PruneSchedule("ew", 0.3, 0.3, use_global=True)
        result = run_schedule(layers, sched)
        total = 6 * 7 + 5 * 9
        pruned = sum(int(np.count_nonzero(~m)) for m in result.masks.values())
        assert pruned == int(0.3 * total)

    def test_global_tw_budgets_follow_importance(self):
        rng = np.random.default_rng(11)
        weak = rng.normal(size=(8, 8)) * 0.01
        strong = rng.normal(size=(8, 8)) * 10.0
        layers = LayerSet((Layer("weak", weak), Layer("strong", strong)))
        sched = PruneSchedule("tw", 0.5, 0.5, g=4, use_global=True)
        result = run_schedule(layers, sched)
        weak_sparsity = 1.0 - result.masks["weak"].mean()
        strong_sparsity = 1.0 - result.masks["strong"].mean()
        assert weak_sparsity > strong_sparsity
        # structures still reconstruct exactly
        for name in ("weak", "strong"):
            assert np.array_equal(result.structures[name].reconstruct(),
                                  result.weights[name])

    def test_global_tvw_keeps_24_constraint(self):
        rng = np.random.default_rng(12)
        layers = LayerSet((Layer("a", rng.normal(size=(16, 8))),
                           Layer("b", rng.normal(size=(16, 8)))))
        sched = PruneSchedule("tvw", 0.75, 0.75, g=4, use_global=True)
        result = run_schedule(layers, sched)
        for name in ("a", "b"):
            for tile in result.structures[name].tiles:
                h = tile.payload.shape[0]
                full = (h // 4) * 4
                if full:
                    counts = (tile.payload[:full] != 0).reshape(h // 4, 4, -1).sum(axis=1)
                    assert np.all(counts == 2)


class TestLayerSet:
    def test_rejects_duplicate_names(self):
        with pytest.raises(InvalidInputError):
            LayerSet((Layer("x", [[1.0]]), Layer("x", [[2.0]])))

    def test_rejects_empty(self):
        with pytest.raises(InvalidInputError):
            LayerSet(())

    def test_gradient_shape_checked(self):
        with pytest.raises(InvalidInputError):
            Layer("x", [[1.0, 2.0]], gradient=[[1.0]])

    def test_taylor_requires_gradient(self):
        layers = LayerSet((Layer("x", [[1.0, 2.0]]),))
        sched = PruneSchedule("ew", 0.5, 0.5, score="taylor")
        with pytest.raises(InvalidInputError):
            run_schedule(layers, sched)
