import csv
import json

import numpy as np
import pytest

from tilesparse.cli import main, synthetic_matrix
from tilesparse.core import read_tgm1, write_tgm1
from tilesparse.executor import execute_batched
from tilesparse.formats import decode_cto, read_cto1


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture
def weights_file(tmp_path):
    w = synthetic_matrix(123, 48, 40, stream=9)
    path = tmp_path / "weights.tgm"
    write_tgm1(path, w)
    return path


class TestPrune:
    def test_tw_writes_plan_and_cto(self, tmp_path, weights_file):
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--pattern", "tw",
                    "--sparsity", "0.75", "--g", "8", "--out", out])
        assert code == 0
        plan = json.loads((tmp_path / "art.plan.json").read_text())
        assert plan["schema"] == "plan-v1"
        assert plan["params"]["column_share"] == 0.5
        assert plan["params"]["row_share"] == 0.5
        assert (tmp_path / "art.cto").exists()
        assert (tmp_path / "art.cto.json").exists()
        assert (tmp_path / "art.stages.jsonl").exists()

    def test_zero_sparsity_passthrough(self, tmp_path, weights_file):
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--pattern", "tw",
                    "--sparsity", "0", "--g", "8", "--out", out])
        assert code == 0
        plan = json.loads((tmp_path / "art.plan.json").read_text())
        assert plan["achieved_sparsity"] == 0.0
        tsm = decode_cto(read_cto1(tmp_path / "art.cto"))
        assert np.array_equal(tsm.reconstruct(), read_tgm1(weights_file))

    def test_single_shot_plan_achieves_target(self, tmp_path, weights_file):
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--pattern", "ew",
                    "--sparsity", "0.25", "--out", out])
        assert code == 0
        plan = json.loads((tmp_path / "art.plan.json").read_text())
        assert plan["achieved_sparsity"] == 0.25

    def test_tvw_below_floor_exits_2(self, tmp_path, weights_file, capsys):
        code = run(["prune", "--input", weights_file, "--pattern", "tvw",
                    "--sparsity", "0.4", "--g", "8",
                    "--out", tmp_path / "art"])
        assert code == 2

    def test_tew_overlay_embedded_in_plan(self, tmp_path, weights_file):
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--pattern", "tew",
                    "--sparsity", "0.5", "--delta", "0.05", "--g", "8",
                    "--out", out])
        assert code == 0
        plan = json.loads((tmp_path / "art.plan.json").read_text())
        assert len(plan["overlay"]["rows"]) == int(0.05 * 48 * 40)

    def test_deterministic_artifacts(self, tmp_path):
        outs = []
        for sub in ("one", "two"):
            out = tmp_path / sub / "art"
            code = run(["prune", "--synthetic", "32x32", "--pattern", "tw",
                        "--sparsity", "0.5", "--g", "8", "--seed", "7",
                        "--out", out])
            assert code == 0
            outs.append(out)
        for suffix in (".plan.json", ".cto", ".stages.jsonl"):
            a = (outs[0].parent / ("art" + suffix)).read_bytes()
            b = (outs[1].parent / ("art" + suffix)).read_bytes()
            assert a == b

    def test_multi_layer_global(self, tmp_path):
        w1 = synthetic_matrix(5, 16, 16, stream=9) * 0.01
        w2 = synthetic_matrix(6, 16, 16, stream=9) * 10.0
        p1, p2 = tmp_path / "small.tgm", tmp_path / "big.tgm"
        write_tgm1(p1, w1)
        write_tgm1(p2, w2)
        out = tmp_path / "art"
        code = run(["prune", "--input", p1, "--input", p2, "--pattern", "ew",
                    "--sparsity", "0.5", "--global", "--out", out])
        assert code == 0
        small = json.loads((tmp_path / "art.small.plan.json").read_text())
        big = json.loads((tmp_path / "art.big.plan.json").read_text())
        assert small["achieved_sparsity"] > big["achieved_sparsity"]

    def test_schedule_json_config(self, tmp_path, weights_file):
        sched = tmp_path / "sched.json"
        sched.write_text(json.dumps({"pattern": "tw", "S": 0.75, "s_s": 0.25,
                                     "g": 8, "score": "magnitude", "global": False}))
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--schedule", sched,
                    "--out", out])
        assert code == 0
        lines = (tmp_path / "art.stages.jsonl").read_text().strip().split("\n")
        assert [json.loads(l)["target"] for l in lines] == [0.25, 0.5, 0.75]

    def test_missing_input_exits_2(self, tmp_path):
        code = run(["prune", "--input", tmp_path / "missing.tgm",
                    "--pattern", "tw", "--sparsity", "0.5",
                    "--out", tmp_path / "art"])
        assert code == 2


class TestExecVerify:
    def _prune(self, tmp_path, weights_file, pattern="tw", extra=()):
        out = tmp_path / "art"
        code = run(["prune", "--input", weights_file, "--pattern", pattern,
                    "--sparsity", "0.75", "--g", "8", "--out", out, *extra])
        assert code == 0
        return out

    def test_exec_writes_output_and_trace(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file)
        code = run(["exec", "--cto", tmp_path / "art.cto", "--m", "8",
                    "--workers", "2", "--seed", "3", "--out", tmp_path / "run"])
        assert code == 0
        result = read_tgm1(tmp_path / "run.out.tgm")
        assert result.shape == (8, 40)
        trace = json.loads((tmp_path / "run.trace.json").read_text())
        assert trace["workers"] == 2
        assert sum(trace["per_tile_macs"]) == trace["total_macs"]

    def test_exec_matches_library(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file)
        code = run(["exec", "--cto", tmp_path / "art.cto", "--m", "8",
                    "--seed", "3", "--out", tmp_path / "run"])
        assert code == 0
        tsm = decode_cto(read_cto1(tmp_path / "art.cto"))
        a = synthetic_matrix(3, 8, 48, stream=1)
        expect, _ = execute_batched(a, tsm, workers=1)
        got = read_tgm1(tmp_path / "run.out.tgm")
        assert np.array_equal(got, expect.expand().astype(np.float32))

    def test_verify_fresh_prune_exits_0(self, tmp_path, weights_file, capsys):
        self._prune(tmp_path, weights_file)
        code = run(["verify", "--cto", tmp_path / "art.cto",
                    "--source", weights_file, "--m", "16", "--seed", "4"])
        assert code == 0
        assert "max relative error" in capsys.readouterr().out

    def test_verify_tew_with_overlay(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file, pattern="tew",
                    extra=("--delta", "0.05"))
        code = run(["verify", "--cto", tmp_path / "art.cto",
                    "--plan", tmp_path / "art.plan.json",
                    "--source", weights_file, "--m", "16"])
        assert code == 0

    def test_verify_corrupt_cto_exits_2(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file)
        path = tmp_path / "art.cto"
        raw = bytearray(path.read_bytes())
        raw[1] ^= 0x55  # dtype code byte
        path.write_bytes(bytes(raw))
        code = run(["verify", "--cto", path, "--m", "8"])
        assert code == 2

    def test_verify_tampered_payload_exits_4(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file)
        path = tmp_path / "art.cto"
        raw = bytearray(path.read_bytes())
        raw[-2] ^= 0x40  # inside the last payload float
        path.write_bytes(bytes(raw))
        code = run(["verify", "--cto", path, "--source", weights_file, "--m", "8"])
        assert code == 4

    def test_verify_dense_encoding_error_exactly_zero(self, tmp_path, weights_file, capsys):
        out = tmp_path / "art"
        run(["prune", "--input", weights_file, "--pattern", "tw",
             "--sparsity", "0", "--g", "8", "--out", out])
        code = run(["verify", "--cto", tmp_path / "art.cto", "--m", "8"])
        assert code == 0
        assert "max relative error 0.000e+00" in capsys.readouterr().out

    def test_exec_rerun_byte_identical(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file)
        for sub in ("r1", "r2"):
            code = run(["exec", "--cto", tmp_path / "art.cto", "--m", "8",
                        "--workers", "2", "--seed", "3",
                        "--out", tmp_path / sub / "run"])
            assert code == 0
        for suffix in ("run.out.tgm", "run.trace.json"):
            a = (tmp_path / "r1" / suffix).read_bytes()
            b = (tmp_path / "r2" / suffix).read_bytes()
            assert a == b

    def test_exec_with_overlay_matches_library(self, tmp_path, weights_file):
        self._prune(tmp_path, weights_file, pattern="tew", extra=("--delta", "0.05"))
        code = run(["exec", "--cto", tmp_path / "art.cto",
                    "--plan", tmp_path / "art.plan.json",
                    "--m", "8", "--seed", "3", "--out", tmp_path / "run"])
        assert code == 0
        from tilesparse.cli import _load_plan, _overlay_from_json
        from tilesparse.executor import gemm_tew

        tsm = decode_cto(read_cto1(tmp_path / "art.cto"))
        _, overlay_doc = _load_plan(tmp_path / "art.plan.json")
        overlay = _overlay_from_json(overlay_doc, tsm.original_dims)
        a = synthetic_matrix(3, 8, 48, stream=1)
        expect = gemm_tew(a, tsm, overlay)
        got = read_tgm1(tmp_path / "run.out.tgm")
        assert np.array_equal(got, expect.expand().astype(np.float32))


class TestBenchReport:
    def test_bench_csv_columns(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = run(["bench", "--sizes", "32", "--sparsities", "0,0.5",
                    "--pattern", "tw", "--g", "8", "--workers-grid", "1,2",
                    "--seed", "1", "--out", out])
        assert code == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        rows = list(csv.DictReader(lines))
        assert len(rows) == 2 * 2 * 2  # sparsities x workers x strategies
        assert set(rows[0]) == {"size", "pattern", "sparsity", "workers",
                                "strategy", "flops", "wall_ms", "imbalance"}

    def test_bench_flops_match_report(self, tmp_path):
        out = tmp_path / "bench.csv"
        run(["bench", "--sizes", "32", "--sparsities", "0.75", "--pattern", "tw",
             "--g", "8", "--seed", "1", "--out", out])
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        row = next(iter(csv.DictReader(lines)))
        from tilesparse.metrics import report as mk_report
        from tilesparse.patterns import prune_tw

        w = synthetic_matrix(1, 32, 32, stream=0)
        plan, tsm = prune_tw(w, 0.75, 8)
        rep = mk_report(plan, tsm, m_rows=32)
        assert int(row["flops"]) == rep.sparse_flops

    def test_dense_point_zero_reduction(self, tmp_path):
        out = tmp_path / "bench.csv"
        run(["bench", "--sizes", "16", "--sparsities", "0", "--pattern", "tw",
             "--g", "8", "--seed", "1", "--out", out])
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        row = next(iter(csv.DictReader(lines)))
        assert int(row["flops"]) == 2 * 16 * 16 * 16

    def test_report_roundtrip(self, tmp_path):
        out = tmp_path / "art"
        run(["prune", "--synthetic", "32x32", "--pattern", "tw",
             "--sparsity", "0.75", "--g", "8", "--seed", "2", "--out", out])
        code = run(["report", "--plan", tmp_path / "art.plan.json",
                    "--cto", tmp_path / "art.cto", "--m", "32",
                    "--out", tmp_path / "report.json"])
        assert code == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["schema"] == "report-v1"
        assert abs(doc["flop_reduction"] - doc["achieved"]) < 1e-12


class TestSynthetic:
    def test_streams_are_independent(self):
        w = synthetic_matrix(9, 8, 8, stream=0)
        a = synthetic_matrix(9, 8, 8, stream=1)
        assert not np.array_equal(w, a)

    def test_seeded_reproducibility(self):
        assert np.array_equal(synthetic_matrix(4, 6, 6), synthetic_matrix(4, 6, 6))
