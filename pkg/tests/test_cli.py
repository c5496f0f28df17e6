import csv
import json
import subprocess
import sys

import pytest

from pfn.harness.cli import main
from pfn.harness.train import METRIC_COLUMNS

TINY = ["--max-iter", "2", "--train-count", "2", "--height", "32", "--width", "32", "--sc", "2", "--pc", "2",
        "--set", "train.val_count=2"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestInspect:
    def test_default_full_model(self, capsys):
        code, out, _ = run(["inspect", "--json"], capsys)
        stats = json.loads(out)["stats"]
        assert code == 0
        assert stats["sa_count_per_scale"] == [32, 16, 8, 4, 2]
        assert stats["fusion_count"] == 30
        assert stats["max_conv_depth_input_to_output"] == 13

    def test_table_output(self, capsys):
        code, out, _ = run(["inspect", "--scales", "3", "--sc", "2", "--pc", "2", "--output-scales", "3"], capsys)
        assert code == 0 and "param_count" in out and "8 4 2" in out

    def test_invalid_kernel(self, capsys):
        code, _, err = run(["inspect", "--kernel", "4"], capsys)
        assert code == 2 and "kernel" in err

    def test_from_config_file(self, tmp_path, capsys):
        (tmp_path / "c.ini").write_text("[model]\nscales = 2\noutput_scales = 2\nn = 1, 1\n")
        code, out, _ = run(["inspect", "--config", str(tmp_path / "c.ini"), "--json"], capsys)
        assert json.loads(out)["stats"]["sa_count_per_scale"] == [1, 1]


class TestTrainEval:
    def test_train_then_eval(self, runs_dir, capsys):
        code, out, _ = run(["train", "--name", "t1", "--quiet", *TINY], capsys)
        assert code == 0
        run_dir = runs_dir / "t1"
        with open(run_dir / "metrics.csv") as f:
            assert tuple(next(csv.reader(f))) == METRIC_COLUMNS
        code, out, _ = run(["eval", str(run_dir), "--no-median-scaling"], capsys)
        assert code == 0 and "abs_rel" in out
        summary = json.loads((run_dir / "eval" / "eval_depth.json").read_text())
        assert summary["median_scaling"] is False and summary["frames"] == 2

    def test_default_run_name_uses_hash(self, runs_dir, capsys):
        code, out, _ = run(["train", "--quiet", *TINY], capsys)
        assert code == 0
        [d] = list(runs_dir.iterdir())
        assert d.name.startswith("depth-") and len(d.name) == len("depth-") + 16

    def test_config_file_overrides_flags(self, runs_dir, tmp_path, capsys):
        (tmp_path / "c.ini").write_text("[train]\nmax_iter = 1\n")
        code, _, _ = run(["train", "--name", "t2", "--quiet", *TINY, "--config", str(tmp_path / "c.ini")], capsys)
        assert code == 0
        assert json.loads((runs_dir / "t2" / "summary.json").read_text())["steps"] == 1

    def test_progress_lines(self, runs_dir, capsys):
        code, out, _ = run(["train", "--name", "t3", "--log-every", "1", *TINY], capsys)
        assert code == 0 and out.count("step ") >= 2 and "photometric=" in out

    def test_resume(self, runs_dir, capsys):
        run(["train", "--name", "t4", "--quiet", *TINY], capsys)
        code, out, _ = run(["train", "--name", "t4", "--quiet", "--resume", "--max-iter", "3",
                            *TINY[2:]], capsys)
        assert code == 0 and json.loads((runs_dir / "t4" / "summary.json").read_text())["steps"] == 3

    def test_eval_incompatible(self, runs_dir, capsys):
        run(["train", "--name", "t5", "--quiet", *TINY], capsys)
        code, _, err = run(["eval", str(runs_dir / "t5"), "--sc", "3", "--pc", "2", "--height", "32", "--width", "32"], capsys)
        assert code == 2 and "model.sc" in err

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        code, _, err = run(["eval", str(tmp_path)], capsys)
        assert code == 2 and "no checkpoint" in err

    def test_bad_set_syntax(self, capsys):
        code, _, err = run(["train", "--set", "max_iter=3"], capsys)
        assert code == 2 and "section.key" in err

    def test_unknown_key(self, capsys):
        code, _, err = run(["train", "--set", "model.width=3"], capsys)
        assert code == 2 and "unknown" in err


class TestGenData:
    def test_export_and_evaluate_manifest(self, runs_dir, tmp_path, capsys):
        code, out, _ = run(["gen-data", "--out", str(tmp_path / "d"), "--count", "2", "--height", "32", "--width", "32"], capsys)
        assert code == 0 and (tmp_path / "d" / "manifest.json").exists()
        assert len(list((tmp_path / "d").glob("*.ppm"))) == 6
        run(["train", "--name", "t6", "--quiet", *TINY], capsys)
        code, out, _ = run(["eval", str(runs_dir / "t6"), "--manifest", str(tmp_path / "d" / "manifest.json"),
                            "--out", str(tmp_path / "e")], capsys)
        assert code == 0 and (tmp_path / "e" / "eval_depth.csv").exists()


class TestGradcheck:
    def test_selected_ops(self, capsys):
        code, out, _ = run(["gradcheck", "--ops", "conv2d", "warp", "--ops-only"], capsys)
        assert code == 0 and "2/2 passed" in out

    def test_impossible_tolerance_fails(self, capsys):
        code, out, _ = run(["gradcheck", "--ops", "exp", "--ops-only", "--op-tol", "1e-30"], capsys)
        assert code == 1 and "FAIL" in out

    def test_model_check(self, capsys):
        code, out, _ = run(["gradcheck", "--ops", "add", "--entries", "2"], capsys)
        assert code == 0 and "pfn S=3" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pfn", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "inspect", "gen-data", "gradcheck"):
        assert cmd in proc.stdout


def test_requires_subcommand(capsys):
    with pytest.raises(SystemExit):
        main([])
