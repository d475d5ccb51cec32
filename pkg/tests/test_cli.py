"""Command-line surface: exit codes, JSON output shapes, artifacts on disk."""

import io
import json
import re
from contextlib import redirect_stdout

import numpy as np
import pytest

from weedmtl.cli import dispatch
from weedmtl.data import load_image, load_manifest
from weedmtl.model import ModelConfig
from weedmtl.profile import profile


def run(capsys, *argv):
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth + train pass shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run_dir = root / "run"
    outs = {}
    for name, argv in [
        ("synth", ["synth", "--out", str(data), "--n", "1", "--species", "2",
                   "--image-size", "32", "--seed", "3"]),
        ("train", ["train", "--manifest", str(data / "manifest.json"),
                   "--out", str(run_dir), "--size", "small", "--epochs", "1",
                   "--batch-size", "8", "--warmup", "1", "--seed", "0"]),
    ]:
        buf = io.StringIO()
        with redirect_stdout(buf):
            code = dispatch(argv)
        assert code == 0, f"{name} failed: {buf.getvalue()}"
        outs[name] = json.loads(buf.getvalue())
    return {"data": data, "run": run_dir, "synth": outs["synth"],
            "train": outs["train"]}


class TestUsageErrors:
    def test_no_arguments_exits_2(self, capsys):
        code, _, _ = run(capsys)
        assert code == 2

    def test_unknown_subcommand_exits_2(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 2

    def test_missing_required_flag_exits_2(self, capsys):
        code, _, _ = run(capsys, "synth")
        assert code == 2

    def test_version_exits_0(self, capsys):
        code, out, _ = run(capsys, "--version")
        assert code == 0


class TestDomainErrors:
    def test_bad_kernel_is_a_config_error(self, capsys):
        code, _, err = run(capsys, "describe", "--kernel", "x9y")
        assert code == 1
        assert err.startswith("error:config:")

    def test_bench_insists_on_all_tasks(self, capsys):
        code, _, err = run(capsys, "bench", "--tasks", "seg",
                           "--input-size", "64", "--warmup", "1", "--iters", "1")
        assert code == 1
        assert err.startswith("error:config:")

    def test_missing_checkpoint_is_a_data_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "eval", "--checkpoint",
                           str(tmp_path / "nope.npz"), "--manifest",
                           str(tmp_path / "manifest.json"))
        assert code == 1
        assert err.startswith("error:data:")

    def test_bad_split_fractions(self, capsys, tmp_path):
        code, _, err = run(capsys, "synth", "--out", str(tmp_path / "d"),
                           "--split", "0.5,0.5")
        assert code == 1
        assert err.startswith("error:config:")


class TestDescribe:
    def test_json_matches_library_profile(self, capsys):
        code, out, _ = run(capsys, "describe")
        assert code == 0
        got = json.loads(out)
        rep = profile(ModelConfig(), input_hw=(512, 512))
        assert got["total_params"] == rep.total_params
        assert got["total_flops"] == rep.total_flops
        assert got["convention"] == rep.convention

    def test_sweep_emits_the_ablation_grid(self, capsys):
        code, out, _ = run(capsys, "describe", "--sweep")
        assert code == 0
        rows = [json.loads(line) for line in out.strip().splitlines()]
        # 3 sizes + 7 kernel configs + no-SE + 3 aggregation widths
        assert len(rows) == 14
        assert all(r["params"] > 0 and r["flops"] > 0 for r in rows)
        by_size = {r["size"]: r["params"] for r in rows[:3]}
        assert by_size["small"] < by_size["medium"] < by_size["large"]

    def test_out_writes_profile_and_run_config(self, capsys, tmp_path):
        out_dir = tmp_path / "prof"
        code, _, _ = run(capsys, "describe", "--out", str(out_dir))
        assert code == 0
        saved = json.loads((out_dir / "profile.json").read_text())
        assert saved["total_params"] > 0
        rc = json.loads((out_dir / "run_config.json").read_text())
        assert rc["command"] == "describe"
        assert "resolved" in rc and "version" in rc


class TestSynthCommand:
    def test_manifest_is_loadable_and_partitioned(self, pipeline):
        # 2 species x 11 weeks x 1 replicate
        assert pipeline["synth"]["samples"] == 22
        manifest = load_manifest(pipeline["data"] / "manifest.json",
                                 check_files=True)
        assert len(manifest.entries) == 22
        splits = {e.split for e in manifest.entries}
        assert splits == {"train", "val", "test"}
        assert len(manifest.split("train")) >= 8

    def test_run_config_written(self, pipeline):
        rc = json.loads((pipeline["data"] / "run_config.json").read_text())
        assert rc["command"] == "synth"
        assert rc["resolved"]["seed"] == 3


class TestTrainCommand:
    def test_artifacts_on_disk(self, pipeline):
        run_dir = pipeline["run"]
        lines = (run_dir / "loss.csv").read_text().strip().splitlines()
        assert lines[0].startswith("iter,")
        assert len(lines) - 1 == pipeline["train"]["iterations"]
        assert (run_dir / "checkpoint.npz").is_file()
        rc = json.loads((run_dir / "run_config.json").read_text())
        assert rc["command"] == "train"

    def test_stdout_reports_the_run(self, pipeline):
        info = pipeline["train"]
        assert info["iterations"] >= 1
        assert np.isfinite(info["final_loss"])
        assert info["checkpoint"].endswith("checkpoint.npz")

    def test_resume_runs_the_remaining_iterations(self, capsys, pipeline, tmp_path):
        out2 = tmp_path / "resumed"
        code, out, _ = run(capsys, "train",
                           "--manifest", str(pipeline["data"] / "manifest.json"),
                           "--out", str(out2),
                           "--resume", str(pipeline["run"] / "checkpoint.npz"),
                           "--epochs", "2", "--batch-size", "8", "--warmup", "1")
        assert code == 0
        info = json.loads(out)
        done = pipeline["train"]["iterations"]
        assert info["iterations"] == 2 * done
        rows = (out2 / "loss.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 2 * done - done
        assert [int(r.split(",")[0]) for r in rows] == list(range(done, 2 * done))


class TestEvalCommand:
    def test_report_on_stdout_and_disk(self, capsys, pipeline, tmp_path):
        out_dir = tmp_path / "metrics"
        code, out, _ = run(capsys, "eval",
                           "--checkpoint", str(pipeline["run"] / "checkpoint.npz"),
                           "--manifest", str(pipeline["data"] / "manifest.json"),
                           "--split", "train", "--out", str(out_dir))
        assert code == 0
        report = json.loads(out)
        for block in ("segmentation", "height", "week"):
            assert block in report
        assert report["num_samples"] == len(
            load_manifest(pipeline["data"] / "manifest.json").split("train"))
        saved = json.loads((out_dir / "metrics_train.json").read_text())
        assert saved == report


class TestGradcheckCommand:
    def test_tiny_model_check_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--tiny")
        assert code == 0
        tally = re.search(r"(\d+)/(\d+) checks passed", out)
        assert tally is not None
        assert tally.group(1) == tally.group(2)


class TestBenchCommand:
    def test_reports_latency_ratio(self, capsys):
        code, out, _ = run(capsys, "bench", "--size", "small",
                           "--input-size", "64", "--warmup", "1", "--iters", "3")
        assert code == 0
        info = json.loads(out)
        assert set(info["single_task_ms"]) == {"seg", "height", "week"}
        assert info["multitask_ms"] > 0
        total = sum(info["single_task_ms"].values())
        assert info["single_task_sum_ms"] == pytest.approx(total)
        assert info["latency_ratio"] == pytest.approx(info["multitask_ms"] / total)


class TestGradcamCommand:
    def test_writes_one_heatmap_per_task(self, capsys, pipeline, tmp_path):
        manifest = load_manifest(pipeline["data"] / "manifest.json")
        image = manifest.resolve(manifest.split("train")[0].image_path)
        out_dir = tmp_path / "cam"
        code, out, _ = run(capsys, "gradcam",
                           "--checkpoint", str(pipeline["run"] / "checkpoint.npz"),
                           "--image", str(image), "--out", str(out_dir))
        assert code == 0
        summary = json.loads(out)
        assert set(summary) == {"seg", "height", "week"}
        for task, info in summary.items():
            # 32x32 input -> maps at 1/8 resolution
            assert info["shape"] == [1, 1, 4, 4]
            heat = load_image(out_dir / f"gradcam_{task}.png")
            assert heat.shape == (3, 4, 4)
            assert float(heat.min()) >= 0.0 and float(heat.max()) <= 1.0
        rc = json.loads((out_dir / "run_config.json").read_text())
        assert rc["command"] == "gradcam"
