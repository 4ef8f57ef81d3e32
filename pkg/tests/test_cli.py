"""Command-line behavior: exit codes, output shapes, replay bundles."""

import json

from teasim import asm
from teasim.cli import main


def write_prog(tmp_path, text, name="prog.asm"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestRun:
    def test_isa_run_halts(self, tmp_path, capsys):
        path = write_prog(tmp_path, asm.bundled_text("primality"))
        assert main(["run", "--machine", "isa", path]) == 0
        out = capsys.readouterr().out
        assert "%teasim-state isa" in out
        assert "halt 1" in out

    def test_ma_run_matches_register(self, tmp_path, capsys):
        path = write_prog(tmp_path, asm.bundled_text("primality"))
        assert main(["run", "--machine", "ma", path]) == 0
        out = capsys.readouterr().out
        # r10 = 1: 97 is prime
        rf_line = next(l for l in out.splitlines() if l.startswith("rf"))
        assert rf_line.split()[11] == "0x1"

    def test_budget_exhaustion_exit_code(self, tmp_path, capsys):
        path = write_prog(tmp_path, "jge r0 0\n")  # no halt ever commits
        assert main(["run", path, "--max-steps", "60"]) == 3
        capsys.readouterr()

    def test_parse_error_exit_code(self, tmp_path, capsys):
        path = write_prog(tmp_path, "loadi r99 1\n")
        assert main(["run", path]) == 2
        assert "unknown register" in capsys.readouterr().err

    def test_trace_mode(self, tmp_path, capsys):
        path = write_prog(tmp_path, "loadi r1 7\nhalt\n")
        assert main(["run", path, "--trace", "--max-steps", "50"]) == 0
        out = capsys.readouterr().out
        assert "cyc 0 | fetch" in out
        assert "commit" in out

    def test_param_override(self, tmp_path, capsys):
        path = write_prog(tmp_path, "halt\n")
        assert main(["run", path, "--param", "rs-count=6"]) == 0
        out = capsys.readouterr().out
        assert "param rs-count 6" in out

    def test_ma_h_emits_history(self, tmp_path, capsys):
        path = write_prog(tmp_path, "loadi r1 7\nhalt\n")
        assert main(["run", path, "--machine", "ma-h"]) == 0
        assert "%teasim-history" in capsys.readouterr().out


class TestCheck:
    def test_clean_suite_exit_zero(self, capsys):
        assert main(["check", "--suite", "entangled", "--trials", "15",
                     "--seed", "5"]) == 0
        assert "0 failing" in capsys.readouterr().out

    def test_buggy_suite_exit_one_and_json(self, capsys):
        rc = main(["check", "--suite", "spectre-buggy", "--trials", "10",
                   "--seed", "5", "--json"])
        assert rc == 1
        doc = json.loads(capsys.readouterr().out)
        assert doc["schema"] == "teasim-report/1"
        assert doc["tea_count"] >= 1

    def test_unknown_suite(self, capsys):
        assert main(["check", "--suite", "nope"]) == 2
        capsys.readouterr()

    def test_bundle_write_and_replay(self, tmp_path, capsys):
        rc = main(["check", "--suite", "meltdown-buggy", "--trials", "2",
                   "--seed", "5", "--bundle-dir", str(tmp_path)])
        assert rc == 1
        capsys.readouterr()
        bundles = list(tmp_path.glob("*.bundle"))
        assert bundles
        assert main(["check", "--replay", str(bundles[0])]) == 1
        out = capsys.readouterr().out
        assert "tea-meltdown" in out


class TestDemoBench:
    def test_meltdown_demo(self, capsys):
        assert main(["demo", "meltdown"]) == 0
        out = capsys.readouterr().out
        assert "recovered (r10):   57" in out
        assert "architectural run (r10):        none" in out

    def test_spectre_demo(self, capsys):
        assert main(["demo", "spectre"]) == 0
        out = capsys.readouterr().out
        assert "unauthorized" in out
        assert "(empty)" in out

    def test_bench_reports_rates(self, capsys):
        assert main(["bench", "--seconds", "0.1"]) == 0
        out = capsys.readouterr().out
        assert "steps/s" in out and "ratio" in out
