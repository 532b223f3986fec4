"""CLI behavior: exit codes, report output, loop and ablation tables."""

import json
from pathlib import Path

import pytest

from armcheck.cli import main
from armcheck.fixtures import fixture_path, fixture_text

SCENE = str(fixture_path("scenes/recycling.json"))
CLEAN = str(fixture_path("programs/recycling_clean.txt"))
LOWPASS = str(fixture_path("programs/recycling_lowpass.txt"))
IMPROVING = str(fixture_path("scripts/improving.json"))
STAGNANT = str(fixture_path("scripts/stagnant.json"))
MANIFEST = str(fixture_path("ablation_manifest.json"))


@pytest.fixture()
def fast_config(tmp_path):
    cfg = tmp_path / "fast.json"
    cfg.write_text(json.dumps({"omega_nom": 2.5}))
    return str(cfg)


@pytest.fixture()
def warn_program(tmp_path):
    p = tmp_path / "warny.txt"
    p.write_text("move_to(0.35, -0.15, 0.35)\nmove_to(0.00, 0.34, 0.35)\nmove_to(0.35, -0.15, 0.35)\n")
    return str(p)


class TestRun:
    def test_clean_program_exit_0_score_10(self, tmp_path, capsys):
        out = tmp_path / "t.jsonl"
        code = main(["run", CLEAN, "--scene", SCENE, "--out", str(out)])
        captured = capsys.readouterr()
        assert code == 0
        assert out.exists()
        assert "score: 10/10" in captured.out

    def test_warning_exit_1(self, tmp_path, fast_config, warn_program, capsys):
        code = main([
            "run", warn_program, "--scene", SCENE, "--config", fast_config,
            "--out", str(tmp_path / "t.jsonl"),
        ])
        captured = capsys.readouterr()
        assert code == 1
        assert "score: " in captured.out

    def test_error_exit_2(self, tmp_path, capsys):
        code = main(["run", LOWPASS, "--scene", SCENE, "--out", str(tmp_path / "t.jsonl")])
        capsys.readouterr()
        assert code == 2

    def test_unreachable_exit_3(self, tmp_path, capsys):
        p = tmp_path / "far.txt"
        p.write_text("open_gripper()\nmove_to(2.0, 0.0, 0.2)\n")
        code = main(["run", str(p), "--scene", SCENE, "--out", str(tmp_path / "t.jsonl")])
        captured = capsys.readouterr()
        assert code == 3
        assert "line 2" in captured.err

    def test_critic_subset_two_reports(self, tmp_path, capsys):
        code = main([
            "run", CLEAN, "--scene", SCENE, "--critics", "joint_speed,collision",
            "--format", "json", "--out", str(tmp_path / "t.jsonl"),
        ])
        captured = capsys.readouterr()
        assert code == 0
        body = json.loads(captured.out)
        assert [r["critic"] for r in body["reports"]] == ["collision", "joint_speed"]
        assert body["score"] is None

    def test_syntax_error_exit_65(self, tmp_path, capsys):
        p = tmp_path / "bad.txt"
        p.write_text("move_to(0.1,\n")
        code = main(["run", str(p), "--scene", SCENE])
        capsys.readouterr()
        assert code == 65


class TestVerify:
    def _write_trace(self, tmp_path, program=CLEAN, config=None):
        out = tmp_path / "trace.jsonl"
        argv = ["run", program, "--scene", SCENE, "--out", str(out)]
        if config:
            argv += ["--config", config]
        assert main(argv) in (0, 1, 2)
        return out

    def test_clean_trace_exit_0(self, tmp_path, capsys):
        trace = self._write_trace(tmp_path)
        capsys.readouterr()
        code = main(["verify", str(trace), "--scene", SCENE])
        captured = capsys.readouterr()
        assert code == 0
        assert "score: 10/10" in captured.out

    def test_warning_trace_exit_1(self, tmp_path, fast_config, warn_program, capsys):
        trace = self._write_trace(tmp_path, program=warn_program, config=fast_config)
        capsys.readouterr()
        assert main(["verify", str(trace), "--scene", SCENE]) == 1
        capsys.readouterr()

    def test_run_then_verify_identical_reports(self, tmp_path, capsys):
        out = tmp_path / "trace.jsonl"
        main(["run", LOWPASS, "--scene", SCENE, "--out", str(out), "--format", "json"])
        run_out = json.loads(capsys.readouterr().out)
        main(["verify", str(out), "--scene", SCENE, "--format", "json"])
        verify_out = json.loads(capsys.readouterr().out)
        assert run_out == verify_out

    def test_malformed_line_exit_65_names_line(self, tmp_path, capsys):
        trace = self._write_trace(tmp_path)
        capsys.readouterr()
        lines = trace.read_text().splitlines()
        lines[6] = "{broken"
        trace.write_text("\n".join(lines))
        code = main(["verify", str(trace), "--scene", SCENE])
        captured = capsys.readouterr()
        assert code == 65
        assert "line 7" in captured.err

    def test_unknown_critic_exit_64(self, tmp_path, capsys):
        trace = self._write_trace(tmp_path)
        capsys.readouterr()
        code = main(["verify", str(trace), "--scene", SCENE, "--critics", "gravity"])
        capsys.readouterr()
        assert code == 64


class TestLoop:
    def test_improving_script(self, fast_config, capsys):
        code = main([
            "loop", "clear the table into the trash bin", "--scene", SCENE,
            "--mock-script", IMPROVING, "--config", fast_config, "--format", "json",
        ])
        captured = capsys.readouterr()
        assert code == 0
        body = json.loads(captured.out)
        scores = [a["score"] for a in body["attempts"]]
        assert scores == sorted(scores)
        assert len(scores) <= 5
        assert body["termination"] == "AllOk"

    def test_stagnant_unchanged_at_two(self, fast_config, capsys):
        code = main([
            "loop", "clear the table", "--scene", SCENE,
            "--mock-script", STAGNANT, "--config", fast_config, "--format", "json",
        ])
        captured = capsys.readouterr()
        assert code == 0
        body = json.loads(captured.out)
        assert body["termination"] == "Unchanged"
        assert len(body["attempts"]) == 2

    def test_max_attempts_one(self, fast_config, capsys):
        code = main([
            "loop", "clear the table", "--scene", SCENE,
            "--mock-script", IMPROVING, "--config", fast_config,
            "--max-attempts", "1", "--format", "json",
        ])
        captured = capsys.readouterr()
        assert code == 0
        assert len(json.loads(captured.out)["attempts"]) == 1

    def test_prose_script_exit_4(self, tmp_path, fast_config, capsys):
        script = tmp_path / "prose.json"
        script.write_text(json.dumps({"responses": ["no code", "still none", "sorry"]}))
        code = main([
            "loop", "task", "--scene", SCENE, "--mock-script", str(script),
            "--config", fast_config,
        ])
        capsys.readouterr()
        assert code == 4

    def test_table_output_shape(self, fast_config, capsys):
        main([
            "loop", "clear the table", "--scene", SCENE,
            "--mock-script", STAGNANT, "--config", fast_config,
        ])
        captured = capsys.readouterr()
        lines = captured.out.splitlines()
        assert lines[0].split() == ["Attempt", "Score"]
        assert lines[1].split()[0] == "1"


class TestAblate:
    def test_fixture_tasks(self, capsys):
        code = main(["ablate", "--manifest", MANIFEST, "--format", "json"])
        captured = capsys.readouterr()
        assert code == 0
        body = json.loads(captured.out)
        assert len(body["tasks"]) == 3
        for row in body["tasks"]:
            assert row["external"]["score"] >= row["embedded"]["score"]

    def test_embedded_leaves_violation_undetected(self, capsys):
        main(["ablate", "--manifest", MANIFEST, "--format", "json"])
        body = json.loads(capsys.readouterr().out)
        for row in body["tasks"]:
            non_ok = [c for c, f in row["embedded"]["flags"].items() if f != "OK"]
            assert non_ok, f"embedded {row['task']} unexpectedly clean"

    def test_text_table_has_average_row(self, capsys):
        code = main(["ablate", "--manifest", MANIFEST])
        captured = capsys.readouterr()
        assert code == 0
        assert "Average" in captured.out
        assert "Attempt" in captured.out and "Score" in captured.out

    def test_single_task_manifest(self, tmp_path, capsys):
        manifest = json.loads(fixture_text("ablation_manifest.json"))
        manifest["tasks"] = manifest["tasks"][:1]
        # keep relative paths valid by writing next to the original
        out = Path(str(fixture_path("ablation_manifest.json"))).parent / "_single.json"
        out.write_text(json.dumps(manifest))
        try:
            code = main(["ablate", "--manifest", str(out)])
            captured = capsys.readouterr()
            assert code == 0
            lines = [l for l in captured.out.splitlines() if l.strip()]
            assert len(lines) == 4  # two header rows, one task, one average
        finally:
            out.unlink()

    def test_missing_embedded_script_exit_64(self, tmp_path, capsys):
        manifest = json.loads(fixture_text("ablation_manifest.json"))
        manifest["tasks"][0]["embedded_script"] = "scripts/nonexistent.json"
        out = Path(str(fixture_path("ablation_manifest.json"))).parent / "_broken.json"
        out.write_text(json.dumps(manifest))
        try:
            code = main(["ablate", "--manifest", str(out)])
            capsys.readouterr()
            assert code == 64
        finally:
            out.unlink()


class TestUsage:
    def test_missing_file_exit_64(self, capsys):
        code = main(["run", "/nonexistent/prog.txt", "--scene", SCENE])
        capsys.readouterr()
        assert code == 64

    def test_usage_error_exit_64(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run"])  # missing required args
        capsys.readouterr()
        assert exc.value.code == 64
