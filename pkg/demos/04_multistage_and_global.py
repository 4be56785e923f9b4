#!/usr/bin/env python3
# Gradual pruning with a fine-tune hook, and budgets that flow to the least
# important layer when ranking is global.

import numpy as np

from tilesparse import Layer, LayerSet, PruneSchedule, global_rank, run_schedule, take_global_budget

rng = np.random.default_rng(3)

# One layer, three stages. Each stage prunes from the current weights and
# the masks only grow; with a no-op hook and magnitude scores the final mask
# is the same as pruning straight to the target.
layers = LayerSet((Layer("fc", rng.normal(size=(24, 24)).astype(np.float32)),))
sched = PruneSchedule("ew", target_sparsity=0.75, sparsity_step=0.25)
result = run_schedule(layers, sched)
for entry in result.stage_log:
    print(f"stage {entry['stage']}: target {entry['target']:.2f} "
          f"achieved {entry['overall_achieved']:.4f}")

# A hook may adjust surviving values between stages (here: shrink them), but
# touching a pruned position raises a contract violation.
def shrink(weights, masks):
    return {name: np.where(masks[name], 0.9 * w, 0.0)
            for name, w in weights.items()}

result = run_schedule(layers, sched, fine_tune=shrink)
print("hook ran per stage; survivors scaled by 0.9^3 =",
      round(0.9 ** len(result.stage_log), 4))

# Global ranking: all units of all layers in one sorted list, so a layer
# whose weights matter less absorbs more of the budget.
weak = Layer("weak", (0.01 * rng.normal(size=(8, 8))).astype(np.float32))
strong = Layer("strong", (10.0 * rng.normal(size=(8, 8))).astype(np.float32))
both = LayerSet((weak, strong))
ranking = global_rank(both, "element")
pruned = take_global_budget(ranking, 0.5)
by_layer = {0: 0, 1: 0}
for layer_idx, _ in pruned:
    by_layer[layer_idx] += 1
print("\nglobal 50% budget landed:", by_layer[0], "units on 'weak',",
      by_layer[1], "on 'strong'")

sched = PruneSchedule("tw", 0.5, 0.5, g=4, use_global=True)
result = run_schedule(both, sched)
for name in ("weak", "strong"):
    print(f"{name}: achieved {result.plans[name].achieved_sparsity:.4f}")
