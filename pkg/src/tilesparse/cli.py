"""Command-line pipeline: prune, exec, verify, bench, report.

Artifacts flow between subcommands as files: TGM1 matrices, CTO1 encodings
(with a JSON geometry sidecar), plan-v1 JSON (carrying the TEW overlay when
present), report-v1 JSON, and a bench CSV.  Synthetic matrices come from a
counter-based Philox generator keyed by ``--seed`` plus a stream id, so
every subcommand is reproducible and reruns write byte-identical artifacts;
the one exception is the bench CSV's wall_ms column, which is machine
specific and labeled as such.

Exit codes: 0 success, 2 invalid input (including corrupt encodings),
3 contract violation, 4 verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import TileConfig, read_tgm1, write_tgm1
from .errors import ContractViolationError, CorruptEncodingError, InvalidInputError
from .executor import (
    execute_batched,
    gemm_dense,
    gemm_tew,
    relative_error,
)
from .formats import decode_cto, encode_cto, read_cto1, write_cto1
from .metrics import report
from .patterns import PATTERNS, PrunePlan, SparseOverlay, to_tile_sparse
from .scheduler import Layer, LayerSet, PruneSchedule, run_schedule

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_CONTRACT_VIOLATION = 3
EXIT_VERIFY_MISMATCH = 4

VERIFY_TOLERANCE = 1e-12

_STREAM_WEIGHTS = 0
_STREAM_INPUT = 1
_STREAM_GRAD = 2


def synthetic_matrix(seed: int, rows: int, cols: int, stream: int = 0) -> np.ndarray:
    """Gaussian(0, 1) float32 matrix from a counter-based generator."""
    key = np.array([seed, stream], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((rows, cols)).astype(np.float32)


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _overlay_to_json(overlay: SparseOverlay) -> dict:
    rows, cols = overlay.coords()
    return {
        "rows": [int(r) for r in rows],
        "cols": [int(c) for c in cols],
        "values": [float(v) for v in overlay.values],
    }


def _overlay_from_json(doc: dict, dims: Tuple[int, int]) -> SparseOverlay:
    return SparseOverlay.from_coords(
        dims, doc["rows"], doc["cols"],
        np.array(doc["values"], dtype=np.float32))


def _load_plan(path) -> Tuple[PrunePlan, Optional[dict]]:
    doc = json.loads(Path(path).read_text())
    plan = PrunePlan.from_json_dict(doc)
    return plan, doc.get("overlay")


def _parse_shape(text: str) -> Tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise InvalidInputError(f"expected ROWSxCOLS, got {text!r}") from exc


def _load_layers(args) -> LayerSet:
    layers: List[Layer] = []
    grads = list(args.grad or [])
    inputs = list(args.input or [])
    if inputs and args.synthetic:
        raise InvalidInputError("give either --input files or --synthetic, not both")
    if not inputs and not args.synthetic:
        raise InvalidInputError("one of --input or --synthetic is required")
    if grads and len(grads) != len(inputs):
        raise InvalidInputError("--grad must be given once per --input")
    if inputs:
        names = []
        for i, path in enumerate(inputs):
            name = Path(path).stem
            if name in names:
                name = f"{name}_{i}"
            names.append(name)
            grad = read_tgm1(grads[i]) if grads else None
            layers.append(Layer(name, read_tgm1(path), grad))
    else:
        rows, cols = _parse_shape(args.synthetic)
        w = synthetic_matrix(args.seed, rows, cols, _STREAM_WEIGHTS)
        grad = None
        if args.score == "taylor":
            grad = synthetic_matrix(args.seed, rows, cols, _STREAM_GRAD)
        layers.append(Layer("synthetic", w, grad))
    return LayerSet(tuple(layers))


def _schedule_from_args(args) -> PruneSchedule:
    if args.schedule:
        doc = json.loads(Path(args.schedule).read_text())
        return PruneSchedule.from_json_dict(doc)
    if args.sparsity is None:
        raise InvalidInputError("--sparsity is required without --schedule")
    step = args.step if args.step is not None else args.sparsity
    return PruneSchedule(
        pattern=args.pattern,
        target_sparsity=args.sparsity,
        sparsity_step=step,
        g=args.g,
        delta=args.delta,
        score=args.score,
        use_global=args.use_global,
    )


def _passthrough_result(layers: LayerSet, args):
    """Zero-sparsity plans without a schedule (a schedule needs step > 0)."""
    from .patterns import prune_matrix
    from .scheduler import ScheduleResult

    plans, masks, weights, structures, overlays = {}, {}, {}, {}, {}
    for layer in layers:
        res = prune_matrix(args.pattern, layer.weights, 0.0,
                           g=args.g, delta=args.delta)
        plans[layer.name] = res.plan
        masks[layer.name] = res.plan.element_mask
        weights[layer.name] = layer.weights
        structures[layer.name] = res.tile_matrix
        overlays[layer.name] = res.overlay
    return ScheduleResult(plans=plans, masks=masks, weights=weights,
                          structures=structures, overlays=overlays, stage_log=[])


def cmd_prune(args) -> int:
    layers = _load_layers(args)
    if not args.schedule and args.sparsity == 0.0:
        result = _passthrough_result(layers, args)
        schedule = None
    else:
        schedule = _schedule_from_args(args)
        result = run_schedule(layers, schedule)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    multi = len(layers) > 1

    def path_for(name: str, suffix: str) -> Path:
        stem = f"{out.name}.{name}" if multi else out.name
        return out.with_name(stem + suffix)

    (out.parent / (out.name + ".stages.jsonl")).write_text(result.stage_log_lines())
    g = schedule.g if schedule is not None else args.g
    for layer in layers:
        name = layer.name
        plan = result.plans[name]
        tsm = result.structures[name]
        if tsm is None:
            tsm = to_tile_sparse(result.weights[name], result.masks[name],
                                 TileConfig(granularity_g=g))
        plan_doc = plan.to_json_dict()
        overlay = result.overlays[name]
        if overlay is not None:
            plan_doc["overlay"] = _overlay_to_json(overlay)
        _dump_json(path_for(name, ".plan.json"), plan_doc)
        write_cto1(path_for(name, ".cto"), encode_cto(tsm))
        print(f"{name}: pattern={plan.pattern} target={plan.target_sparsity:.4f} "
              f"achieved={plan.achieved_sparsity:.4f} tiles={len(tsm.tiles)}")
    return EXIT_OK


def _load_pruned(args) -> Tuple:
    enc = read_cto1(args.cto)
    tsm = decode_cto(enc)
    overlay = None
    if args.plan:
        plan, overlay_doc = _load_plan(args.plan)
        if overlay_doc:
            overlay = _overlay_from_json(overlay_doc, tsm.original_dims)
    else:
        plan = None
    return enc, tsm, overlay, plan


def _input_matrix(args, k: int) -> np.ndarray:
    if args.a:
        a = read_tgm1(args.a)
        if a.shape[1] != k:
            raise InvalidInputError(
                f"input matrix has {a.shape[1]} cols, weights expect K={k}")
        return a
    return synthetic_matrix(args.seed, args.m, k, _STREAM_INPUT)


def cmd_exec(args) -> int:
    _, tsm, overlay, _ = _load_pruned(args)
    a = _input_matrix(args, tsm.original_dims[0])
    output, trace = execute_batched(a, tsm, workers=args.workers,
                                    strategy=args.strategy)
    if overlay is not None and overlay.nnz:
        output = gemm_tew(a, tsm, overlay, tile_output=output)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tgm1(out.with_name(out.name + ".out.tgm"),
               output.expand().astype(np.float32))
    _dump_json(out.with_name(out.name + ".trace.json"), trace.to_json_dict())
    print(f"executed {trace.total_flops} flops on {args.workers} workers "
          f"(imbalance {trace.imbalance:.3f})")
    return EXIT_OK


def cmd_verify(args) -> int:
    enc, tsm, overlay, _ = _load_pruned(args)
    a = _input_matrix(args, tsm.original_dims[0])
    if args.source:
        source = read_tgm1(args.source)
        if source.shape != tsm.original_dims:
            raise InvalidInputError("source matrix shape does not match the encoding")
        masked = tsm.reconstruct(overlay)
        check = tsm.keep_mask()
        if overlay is not None and overlay.nnz:
            rows, cols = overlay.coords()
            check[rows, cols] = True
        if not np.array_equal(masked[check], source[check]):
            bad = np.argwhere((masked != source) & check)[0]
            print(f"MISMATCH: payload differs from source at ({bad[0]}, {bad[1]})")
            return EXIT_VERIFY_MISMATCH

    from .executor import gemm_cto, gemm_tile_sparse

    tile_oracle = gemm_dense(a, tsm.reconstruct())
    checks = {
        "tile_sparse": (gemm_tile_sparse(a, tsm), tile_oracle),
        "cto": (gemm_cto(a, enc, check_padding=True), tile_oracle),
        "batched": (execute_batched(a, tsm, workers=args.workers)[0], tile_oracle),
    }
    bit_ref = checks["tile_sparse"][0].condensed.tobytes()
    for name in ("cto", "batched"):
        if checks[name][0].condensed.tobytes() != bit_ref:
            print(f"MISMATCH: {name} output is not bit-identical to tile_sparse")
            return EXIT_VERIFY_MISMATCH
    if overlay is not None and overlay.nnz:
        checks["tew"] = (gemm_tew(a, tsm, overlay),
                         gemm_dense(a, tsm.reconstruct(overlay)))

    worst = 0.0
    for name, (out, oracle) in checks.items():
        expanded = out.expand()
        err = relative_error(expanded, oracle)
        worst = max(worst, err)
        if err > VERIFY_TOLERANCE:
            diff = np.abs(expanded - oracle)
            i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
            print(f"MISMATCH: {name} deviates by {err:.3e} "
                  f"(first worst coordinate ({i}, {j}))")
            return EXIT_VERIFY_MISMATCH
    print(f"max relative error {worst:.3e} over {len(checks)} paths")
    return EXIT_OK


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    sparsities = [float(s) for s in args.sparsities.split(",")]
    workers_list = [int(wk) for wk in args.workers_grid.split(",")]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for size in sizes:
        w = synthetic_matrix(args.seed, size, size, _STREAM_WEIGHTS)
        a = synthetic_matrix(args.seed, size, size, _STREAM_INPUT)
        for s in sparsities:
            from .patterns import prune_matrix

            res = prune_matrix(args.pattern, w, s, g=args.g, delta=args.delta)
            tsm = res.tile_matrix
            if tsm is None:
                tsm = to_tile_sparse(w, res.plan.element_mask,
                                     TileConfig(granularity_g=args.g))
            rep = report(res.plan, tsm, m_rows=size, overlay=res.overlay)
            for workers in workers_list:
                for strategy in ("lpt", "round_robin"):
                    start = time.perf_counter()
                    output, trace = execute_batched(a, tsm, workers=workers,
                                                    strategy=strategy)
                    if res.overlay is not None and res.overlay.nnz:
                        output = gemm_tew(a, tsm, res.overlay, tile_output=output)
                    wall_ms = (time.perf_counter() - start) * 1e3
                    rows.append({
                        "size": size,
                        "pattern": args.pattern,
                        "sparsity": s,
                        "workers": workers,
                        "strategy": strategy,
                        "flops": rep.sparse_flops,
                        "wall_ms": f"{wall_ms:.3f}",
                        "imbalance": f"{trace.imbalance:.6f}",
                    })
    with open(out, "w", newline="") as fh:
        fh.write("# wall_ms is machine-specific; all other columns are deterministic\n")
        writer = csv.DictWriter(fh, fieldnames=["size", "pattern", "sparsity",
                                                "workers", "strategy", "flops",
                                                "wall_ms", "imbalance"])
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} bench rows to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    plan, overlay_doc = _load_plan(args.plan)
    tsm = decode_cto(read_cto1(args.cto))
    overlay = None
    if overlay_doc:
        overlay = _overlay_from_json(overlay_doc, tsm.original_dims)
    rep = report(plan, tsm, m_rows=args.m, overlay=overlay)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(out, rep.to_json_dict())
    print(f"flop_reduction={rep.flop_reduction:.4f} imbalance={rep.imbalance:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilesparse",
        description="Tile-wise sparsity: prune, encode, execute, verify, report.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="prune weights and write plan + CTO1")
    p.add_argument("--input", action="append", help="TGM1 weight matrix (repeatable)")
    p.add_argument("--grad", action="append", help="TGM1 gradient matrix per input")
    p.add_argument("--synthetic", help="generate ROWSxCOLS Gaussian weights instead")
    p.add_argument("--pattern", choices=PATTERNS, default="tw")
    p.add_argument("--sparsity", type=float, help="target sparsity S")
    p.add_argument("--step", type=float, help="per-stage sparsity step (default: S)")
    p.add_argument("--g", type=int, default=128,
                   help="granularity: tile width / vector length / block edge")
    p.add_argument("--delta", type=float, default=0.0, help="TEW restore fraction")
    p.add_argument("--score", choices=("magnitude", "taylor"), default="magnitude")
    p.add_argument("--global", dest="use_global", action="store_true",
                   help="rank pruning units across all input layers")
    p.add_argument("--schedule", help="JSON schedule file overriding the flags above")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_prune)

    x = sub.add_parser("exec", help="run sparse GEMM against a CTO1 artifact")
    x.add_argument("--cto", required=True)
    x.add_argument("--plan", help="plan JSON (needed for the TEW overlay)")
    x.add_argument("--a", help="TGM1 input matrix")
    x.add_argument("--m", type=int, default=64, help="synthetic input rows")
    x.add_argument("--workers", type=int, default=1)
    x.add_argument("--strategy", choices=("lpt", "round_robin"), default="lpt")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True, help="output prefix")
    x.set_defaults(func=cmd_exec)

    v = sub.add_parser("verify", help="check every executor path against the oracle")
    v.add_argument("--cto", required=True)
    v.add_argument("--plan", help="plan JSON (needed for the TEW overlay)")
    v.add_argument("--a", help="TGM1 input matrix")
    v.add_argument("--m", type=int, default=64, help="synthetic input rows")
    v.add_argument("--source", help="original TGM1 weights for payload cross-check")
    v.add_argument("--workers", type=int, default=2)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="sweep sizes and sparsities, write CSV")
    b.add_argument("--sizes", default="256")
    b.add_argument("--sparsities", default="0,0.25,0.5,0.75")
    b.add_argument("--pattern", choices=PATTERNS, default="tw")
    b.add_argument("--g", type=int, default=128)
    b.add_argument("--delta", type=float, default=0.0)
    b.add_argument("--workers-grid", default="1", dest="workers_grid",
                   help="comma-separated worker counts")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="CSV path")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="write a report-v1 JSON for an artifact")
    r.add_argument("--plan", required=True)
    r.add_argument("--cto", required=True)
    r.add_argument("--m", type=int, required=True, help="GEMM input rows M")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CorruptEncodingError as exc:
        print(f"error: corrupt encoding: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except InvalidInputError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except ContractViolationError as exc:
        print(f"error: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT_VIOLATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
