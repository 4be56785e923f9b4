"""Multi-stage pruning over a set of layers with cross-layer budgeting.

A schedule raises the sparsity target step by step; every stage prunes from
the current (previously masked, possibly fine-tuned) weights, then hands the
surviving values to a fine-tune hook.  Masks only ever grow: a stage's
decisions are intersected with the running keep mask, and the hook may
update surviving values but never resurrect pruned positions.

With ``use_global`` set, pruning units are ranked jointly across layers so
the budget distributes unevenly by importance: tile column and row-segment
units, block units, and (on request) individual elements all share the one
merge-and-rank mechanism.  Vector-wise budgets are inherently per vector, so
vw schedules ignore the flag.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import TileConfig, as_matrix, floor_count
from .errors import ContractViolationError, InvalidInputError
from .patterns import (
    PATTERNS,
    PrunePlan,
    PruneResult,
    SparseOverlay,
    Tile,
    TileSparseMatrix,
    _achieved,
    prune_matrix,
    tew_restore,
    tvw_stage,
    tw_joint_prune,
)
from .scoring import ScoreProvider, score_elements, score_group

FineTuneHook = Callable[[Dict[str, np.ndarray], Dict[str, np.ndarray]],
                        Optional[Dict[str, np.ndarray]]]


@dataclass(frozen=True)
class Layer:
    name: str
    weights: np.ndarray
    gradient: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "weights", as_matrix(self.weights))
        if self.gradient is not None:
            grad = as_matrix(self.gradient)
            if grad.shape != self.weights.shape:
                raise InvalidInputError(
                    f"layer {self.name!r}: gradient shape {grad.shape} != weights {self.weights.shape}")
            object.__setattr__(self, "gradient", grad)


@dataclass(frozen=True)
class LayerSet:
    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise InvalidInputError("layer set must contain at least one layer")
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise InvalidInputError("layer names must be unique")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def build(cls, named_weights, gradients: Optional[dict] = None) -> "LayerSet":
        gradients = gradients or {}
        return cls(tuple(Layer(name, w, gradients.get(name))
                         for name, w in named_weights))

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


@dataclass(frozen=True)
class PruneSchedule:
    """Multi-stage schedule: pattern, final target S, step, and knobs.

    ``g`` is the shared granularity (tile width, vector length, or block
    edge, depending on the pattern)."""

    pattern: str
    target_sparsity: float
    sparsity_step: float
    g: int = 128
    delta: float = 0.0
    score: str = "magnitude"
    use_global: bool = False

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise InvalidInputError(f"unknown pattern {self.pattern!r}")
        s, step = float(self.target_sparsity), float(self.sparsity_step)
        if not (0.0 < step <= s < 1.0):
            raise InvalidInputError(
                f"need 0 < sparsity_step <= target_sparsity < 1, got step={step}, S={s}")
        if self.pattern == "tvw" and s < 0.5:
            raise InvalidInputError("tvw schedules need a target of at least 0.5")
        if self.g < 1:
            raise InvalidInputError(f"g must be >= 1, got {self.g}")
        if self.delta < 0 or s + self.delta >= 1.0:
            raise InvalidInputError(f"delta must satisfy 0 <= delta < 1 - S, got {self.delta}")

    def to_json_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "S": float(self.target_sparsity),
            "s_s": float(self.sparsity_step),
            "g": int(self.g),
            "delta": float(self.delta),
            "score": self.score,
            "global": bool(self.use_global),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PruneSchedule":
        try:
            return cls(
                pattern=doc["pattern"],
                target_sparsity=doc["S"],
                sparsity_step=doc.get("s_s", doc["S"]),
                g=int(doc.get("g", 128)),
                delta=float(doc.get("delta", 0.0)),
                score=doc.get("score", "magnitude"),
                use_global=bool(doc.get("global", False)),
            )
        except KeyError as exc:
            raise InvalidInputError(f"schedule config missing key {exc}") from exc

    def stage_targets(self) -> List[float]:
        """Per-stage sparsity targets; the final stage lands exactly on S.

        tvw stages below the 0.5 hardware floor are raised to 0.5 (the first
        stage is then pure 2:4) and duplicates collapse.
        """
        floor_min = 0.5 if self.pattern == "tvw" else 0.0
        targets: List[float] = []
        s_t = 0.0
        while s_t < self.target_sparsity - 1e-12:
            s_t = min(s_t + self.sparsity_step, self.target_sparsity)
            t = max(s_t, floor_min)
            if not targets or t > targets[-1]:
                targets.append(t)
        return targets


@dataclass
class ScheduleResult:
    """Everything a finished schedule produced, keyed by layer name."""

    plans: Dict[str, PrunePlan]
    masks: Dict[str, np.ndarray]
    weights: Dict[str, np.ndarray]
    structures: Dict[str, Optional[TileSparseMatrix]]
    overlays: Dict[str, Optional[SparseOverlay]]
    stage_log: List[dict]

    def stage_log_lines(self) -> str:
        """The stage log as JSON lines."""
        return "".join(json.dumps(entry, sort_keys=True) + "\n"
                       for entry in self.stage_log)


def _provider_for(layer: Layer, kind: str) -> ScoreProvider:
    if kind == "taylor" and layer.gradient is None:
        raise InvalidInputError(f"layer {layer.name!r} has no gradient for taylor scores")
    return ScoreProvider(kind, layer.gradient if kind == "taylor" else None)


def global_rank(layers: LayerSet, unit_kind: str, score_kind: str = "magnitude",
                unit_param: Optional[int] = None) -> List[Tuple[int, int, float]]:
    """Merged cross-layer unit ranking, lowest score first.

    ``unit_kind`` is one of ``element``, ``column``, or ``block`` (block
    needs ``unit_param`` as the block edge).  Ties break by
    (layer index, unit id), so the ranking is deterministic.
    """
    recs_layer, recs_unit, recs_score = [], [], []
    for li, layer in enumerate(layers):
        provider = _provider_for(layer, score_kind)
        w = layer.weights
        if unit_kind == "element":
            scores = score_elements(w, provider).ravel()
        elif unit_kind == "column":
            scores = score_group(w, (w.shape[0], 1), provider).ravel()
        elif unit_kind == "block":
            if unit_param is None:
                raise InvalidInputError("block ranking needs unit_param (the block edge)")
            br, bc = min(unit_param, w.shape[0]), min(unit_param, w.shape[1])
            scores = score_group(w, (br, bc), provider).ravel()
        else:
            raise InvalidInputError(f"unknown unit kind {unit_kind!r}")
        recs_layer.append(np.full(scores.size, li, dtype=np.int64))
        recs_unit.append(np.arange(scores.size, dtype=np.int64))
        recs_score.append(scores)
    layer_arr = np.concatenate(recs_layer)
    unit_arr = np.concatenate(recs_unit)
    score_arr = np.concatenate(recs_score)
    if not np.all(np.isfinite(score_arr)):
        raise InvalidInputError("importance scores must be finite")
    order = np.lexsort((unit_arr, layer_arr, score_arr))
    return [(int(layer_arr[i]), int(unit_arr[i]), float(score_arr[i])) for i in order]


def take_global_budget(ranking: Sequence[Tuple[int, int, float]],
                       target_sparsity: float) -> List[Tuple[int, int]]:
    """First ``floor(s * total)`` unit ids out of a merged ranking."""
    count = floor_count(target_sparsity, len(ranking))
    return [(layer, unit) for layer, unit, _ in ranking[:count]]


def _tile_family_stage(pattern: str, weights: Dict[str, np.ndarray],
                       layers: LayerSet, schedule: PruneSchedule,
                       s_t: float) -> Dict[str, PruneResult]:
    """One global stage for tw/tew/tvw: joint tile passes, then the
    per-layer remedy or 2:4 stage."""
    if pattern == "tw":
        total = s_t
    elif pattern == "tew":
        total = s_t + schedule.delta
    else:
        total = 1.0 - 2.0 * (1.0 - s_t)
    if total >= 1.0:
        raise InvalidInputError(f"stage target {total} out of range")
    per_dim = 1.0 - math.sqrt(1.0 - max(total, 0.0))
    mats, scores, names = [], [], []
    for layer in layers:
        w = weights[layer.name]
        provider = _provider_for(layer, schedule.score)
        mats.append(w)
        scores.append(score_elements(w, provider))
        names.append(layer.name)
    results, clamps, counts = tw_joint_prune(mats, scores, per_dim, schedule.g)
    out: Dict[str, PruneResult] = {}
    for layer, w, res in zip(layers, mats, results):
        tsm = TileSparseMatrix(config=TileConfig(granularity_g=schedule.g),
                               column_mask=res["column_mask"],
                               tiles=res["tiles"], original_dims=w.shape)
        mask = res["keep_mask"]
        overlay = None
        vw_meta = None
        provider = _provider_for(layer, schedule.score)
        if pattern == "tew":
            mask, overlay, _ = tew_restore(w, provider, mask, schedule.delta)
        elif pattern == "tvw":
            tsm, mask, vw_meta = tvw_stage(w, provider, tsm, mask)
        plan = PrunePlan(
            pattern=pattern,
            target_sparsity=s_t,
            achieved_sparsity=_achieved(mask),
            shape=w.shape,
            element_mask=mask,
            params={"score": schedule.score, "g": schedule.g,
                    "column_share": per_dim, "row_share": per_dim},
            clamps=dict(clamps),
            tile_kept_rows=[t.kept_rows.n_kept for t in tsm.tiles],
            tile_widths=tsm.tile_widths,
        )
        out[layer.name] = PruneResult(plan=plan, tile_matrix=tsm,
                                      overlay=overlay, vw_meta=vw_meta)
    return out


def _flat_units_stage(pattern: str, weights: Dict[str, np.ndarray],
                      layers: LayerSet, schedule: PruneSchedule,
                      s_t: float) -> Dict[str, PruneResult]:
    """One global stage for ew/bw: merged exact-count ranking."""
    layer_arr, unit_arr, score_arr, meta = [], [], [], []
    for li, layer in enumerate(layers):
        w = weights[layer.name]
        provider = _provider_for(layer, schedule.score)
        if pattern == "ew":
            scores = score_elements(w, provider).ravel()
            meta.append(None)
        else:
            br, bc = min(schedule.g, w.shape[0]), min(schedule.g, w.shape[1])
            grid = score_group(w, (br, bc), provider)
            scores = grid.ravel()
            meta.append((br, bc, grid.shape[1]))
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError("importance scores must be finite")
        layer_arr.append(np.full(scores.size, li, dtype=np.int64))
        unit_arr.append(np.arange(scores.size, dtype=np.int64))
        score_arr.append(scores)
    layer_arr = np.concatenate(layer_arr)
    unit_arr = np.concatenate(unit_arr)
    score_arr = np.concatenate(score_arr)
    budget = floor_count(s_t, unit_arr.size)
    order = np.lexsort((unit_arr, layer_arr, score_arr))
    chosen = order[:budget]
    out: Dict[str, PruneResult] = {}
    for li, layer in enumerate(layers):
        w = weights[layer.name]
        units = unit_arr[chosen[layer_arr[chosen] == li]]
        mask = np.ones(w.shape, dtype=bool)
        if pattern == "ew":
            mask.ravel()[units] = False
        else:
            br, bc, grid_cols = meta[li]
            for unit in units:
                gr, gc = divmod(int(unit), grid_cols)
                mask[gr * br:(gr + 1) * br, gc * bc:(gc + 1) * bc] = False
        plan = PrunePlan(
            pattern=pattern,
            target_sparsity=s_t,
            achieved_sparsity=_achieved(mask),
            shape=w.shape,
            element_mask=mask,
            params={"score": schedule.score, "global_units": float(unit_arr.size),
                    **({"block": schedule.g} if pattern == "bw" else {})},
        )
        out[layer.name] = PruneResult(plan=plan)
    return out


def _prune_stage(weights: Dict[str, np.ndarray], layers: LayerSet,
                 schedule: PruneSchedule, s_t: float) -> Dict[str, PruneResult]:
    if schedule.use_global and schedule.pattern in ("tw", "tew", "tvw"):
        return _tile_family_stage(schedule.pattern, weights, layers, schedule, s_t)
    if schedule.use_global and schedule.pattern in ("ew", "bw"):
        return _flat_units_stage(schedule.pattern, weights, layers, schedule, s_t)
    out = {}
    for layer in layers:
        provider = _provider_for(layer, schedule.score)
        out[layer.name] = prune_matrix(schedule.pattern, weights[layer.name], s_t,
                                       provider, g=schedule.g, delta=schedule.delta)
    return out


def _apply_hook(fine_tune: Optional[FineTuneHook], weights: Dict[str, np.ndarray],
                masks: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    if fine_tune is None:
        return weights
    updated = fine_tune({k: v.copy() for k, v in weights.items()},
                        {k: v.copy() for k, v in masks.items()})
    if updated is None:
        return weights
    merged = dict(weights)
    for name, new_w in updated.items():
        if name not in weights:
            raise ContractViolationError(f"hook returned unknown layer {name!r}")
        new_w = as_matrix(new_w)
        if new_w.shape != weights[name].shape:
            raise ContractViolationError(f"hook changed the shape of layer {name!r}")
        if np.any(new_w[~masks[name]] != 0):
            raise ContractViolationError(
                f"hook resurrected pruned positions in layer {name!r}")
        merged[name] = new_w
    return merged


def _regather(tsm: TileSparseMatrix, w: np.ndarray) -> TileSparseMatrix:
    """Rebuild payloads from the current weight values, keeping the structure."""
    cond = w[:, tsm.column_mask.kept]
    tiles = []
    pos = 0
    for tile in tsm.tiles:
        tiles.append(Tile(kept_rows=tile.kept_rows,
                          payload=cond[tile.kept_rows.kept, pos:pos + tile.width]))
        pos += tile.width
    return TileSparseMatrix(config=tsm.config, column_mask=tsm.column_mask,
                            tiles=tiles, original_dims=tsm.original_dims)


def run_schedule(layers: LayerSet, schedule: PruneSchedule,
                 fine_tune: Optional[FineTuneHook] = None) -> ScheduleResult:
    """Run the full multi-stage loop and return final plans plus a stage log.

    Per stage: prune the current weights at the stage target, intersect with
    the running masks, zero newly pruned values, then let ``fine_tune``
    adjust surviving values.  The final artifacts are regathered from the
    final weights so hook updates are reflected in the payloads.
    """
    weights = {layer.name: layer.weights.copy() for layer in layers}
    masks = {layer.name: np.ones(layer.weights.shape, dtype=bool) for layer in layers}
    stage_log: List[dict] = []
    last_results: Dict[str, PruneResult] = {}

    for stage_idx, s_t in enumerate(schedule.stage_targets()):
        results = _prune_stage(weights, layers, schedule, s_t)
        for name, res in results.items():
            masks[name] &= res.plan.element_mask
            weights[name] = np.where(masks[name], weights[name], np.float32(0.0))
        weights = _apply_hook(fine_tune, weights, masks)
        entry = {
            "stage": stage_idx,
            "target": float(s_t),
            "layers": {
                name: {
                    "achieved": _achieved(masks[name]),
                    "clamps": {k: int(v) for k, v in res.plan.clamps.items()},
                }
                for name, res in results.items()
            },
        }
        total = sum(m.size for m in masks.values())
        kept = sum(int(np.count_nonzero(m)) for m in masks.values())
        entry["overall_achieved"] = 1.0 - kept / total
        stage_log.append(entry)
        last_results = results

    plans: Dict[str, PrunePlan] = {}
    structures: Dict[str, Optional[TileSparseMatrix]] = {}
    overlays: Dict[str, Optional[SparseOverlay]] = {}
    for layer in layers:
        name = layer.name
        res = last_results[name]
        mask = masks[name]
        tsm = res.tile_matrix
        overlay = res.overlay
        if tsm is not None:
            tsm = _regather(tsm, weights[name])
        if overlay is not None:
            rows, cols = overlay.coords()
            overlay = SparseOverlay.from_coords(overlay.dims, rows, cols,
                                                weights[name][rows, cols])
        plans[name] = PrunePlan(
            pattern=schedule.pattern,
            target_sparsity=schedule.target_sparsity,
            achieved_sparsity=_achieved(mask),
            shape=mask.shape,
            element_mask=mask,
            params=dict(res.plan.params),
            clamps=dict(res.plan.clamps),
            tile_kept_rows=res.plan.tile_kept_rows,
            tile_widths=res.plan.tile_widths,
        )
        structures[name] = tsm
        overlays[name] = overlay
    return ScheduleResult(plans=plans, masks=masks, weights=weights,
                          structures=structures, overlays=overlays,
                          stage_log=stage_log)
