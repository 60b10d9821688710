import json
from pathlib import Path

import pytest

from albox.cli import main
from albox.formats import read_cycle_reports


def experiment_config_dict(out_dir, strategy="mus_cdb", seeds=(0,), cycles=2):
    return {
        "strategy": strategy,
        "cycles": cycles,
        "seeds": list(seeds),
        "output_dir": str(out_dir),
        "scoring": {"theta": 0.10},
        "sampler": {"budget": 8},
        "surrogate": {"steps": 20, "learning_rate": 0.5},
        "pool": {
            "synthetic": {
                "num_classes": 4,
                "num_images": 16,
                "objects_per_image": [2, 4],
                "class_frequency_exponent": 1.0,
                "scene_size": 512.0,
                "box_size_range": [20.0, 60.0],
                "noise": {
                    "prob_temperature": 1.0,
                    "confusion_rate": 0.05,
                    "box_jitter_sigma": 2.0,
                    "false_positive_rate": 0.2,
                    "miss_rate": 0.1,
                },
                "feature_dim": 4,
                "feature_separation": 3.0,
                "initial_labeled_fraction": 0.1,
            }
        },
    }


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestUsageErrors:
    def test_no_command(self, capsys):
        assert main([]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert main(["run"]) == 1


class TestGenerate:
    def test_writes_pool_files(self, tmp_path, capsys):
        config = write_config(tmp_path, experiment_config_dict(tmp_path / "out"))
        gen_dir = tmp_path / "gen"
        assert main(["generate", "--config", config, "--out", str(gen_dir), "--seed", "3"]) == 0
        assert (gen_dir / "classes.txt").exists()
        assert (gen_dir / "predictions.jsonl").exists()
        assert (gen_dir / "image_features.jsonl").exists()
        assert len(list((gen_dir / "gt").glob("*.txt"))) == 16

    def test_generated_files_validate(self, tmp_path):
        config = write_config(tmp_path, experiment_config_dict(tmp_path / "out"))
        gen_dir = tmp_path / "gen"
        main(["generate", "--config", config, "--out", str(gen_dir), "--seed", "3"])
        classes = ",".join(f"class_{k}" for k in range(4))
        gt_files = [str(p) for p in sorted((gen_dir / "gt").glob("*.txt"))]
        assert main(["validate", "--format", "dota", "--classes", classes] + gt_files) == 0
        assert main(["validate", "--format", "predictions", str(gen_dir / "predictions.jsonl")]) == 0
        assert main(["validate", "--format", "features", str(gen_dir / "image_features.jsonl")]) == 0


class TestRun:
    def test_run_and_resume_identical(self, tmp_path):
        full_dir = tmp_path / "full"
        config_full = write_config(
            tmp_path, experiment_config_dict(full_dir, cycles=3), "full.json"
        )
        assert main(["run", "--config", config_full]) == 0

        split_dir = tmp_path / "split"
        config_split = write_config(
            tmp_path, experiment_config_dict(split_dir, cycles=3), "split.json"
        )
        assert main(["run", "--config", config_split, "--stop-after-cycle", "1"]) == 0
        assert main(["run", "--config", config_split, "--resume"]) == 0

        full_report = (full_dir / "seed_0" / "reports.csv").read_bytes()
        split_report = (split_dir / "seed_0" / "reports.csv").read_bytes()
        assert full_report == split_report

    def test_seed_override(self, tmp_path):
        out = tmp_path / "out"
        config = write_config(tmp_path, experiment_config_dict(out, seeds=(0, 1, 2)))
        assert main(["run", "--config", config, "--seed", "7"]) == 0
        assert (out / "seed_7").exists()
        assert not (out / "seed_0").exists()

    def test_bad_config_is_data_error(self, tmp_path):
        payload = experiment_config_dict(tmp_path / "out")
        payload["strategy"] = "unheard_of"
        config = write_config(tmp_path, payload)
        assert main(["run", "--config", config]) == 2

    def test_missing_output_dir_is_data_error(self, tmp_path):
        payload = experiment_config_dict(tmp_path / "out")
        del payload["output_dir"]
        config = write_config(tmp_path, payload)
        assert main(["run", "--config", config]) == 2


class TestSweep:
    def test_sweep_writes_table(self, tmp_path):
        out = tmp_path / "sweep"
        config = write_config(tmp_path, experiment_config_dict(out, cycles=1))
        assert main(["sweep", "--config", config, "--thetas", "0.05,0.10,0.15"]) == 0
        table = (out / "sweep.csv").read_text().splitlines()
        assert table[0] == "theta,seed,cycle,macro_recall"
        assert len(table) == 1 + 3


class TestCompare:
    def test_compare_two_runs(self, tmp_path, capsys):
        dir_a = tmp_path / "a"
        dir_b = tmp_path / "b"
        main(["run", "--config", write_config(tmp_path, experiment_config_dict(dir_a), "a.json")])
        main([
            "run",
            "--config",
            write_config(tmp_path, experiment_config_dict(dir_b, strategy="random"), "b.json"),
        ])
        out_file = tmp_path / "table.csv"
        assert main(["compare", str(dir_a), str(dir_b), "--out", str(out_file)]) == 0
        lines = out_file.read_text().splitlines()
        assert len(lines) == 1 + 4  # 2 runs x 2 cycles
        assert main(["compare", str(tmp_path / "missing")]) == 2


class TestValidate:
    def test_malformed_dota_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.txt"
        bad.write_text("0 0 2 0 2 2 0 2 plane 0\n0 0 2 0 2 2 plane 0\n")
        code = main(["validate", "--format", "dota", "--classes", "plane", str(bad)])
        assert code == 2
        err = capsys.readouterr().err
        assert "line 2" in err

    def test_malformed_predictions_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"image_id": 0}\n')
        assert main(["validate", "--format", "predictions", str(bad)]) == 2
        assert "line 1" in capsys.readouterr().err

    def test_valid_config(self, tmp_path):
        config = write_config(tmp_path, experiment_config_dict(tmp_path / "out"))
        assert main(["validate", "--format", "config", config]) == 0

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", "--format", "predictions", str(tmp_path / "nope.jsonl")]) == 2
