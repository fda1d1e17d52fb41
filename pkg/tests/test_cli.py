import csv
import json
import subprocess
import sys

import pytest

from wdncnn import checkpoint as ckpt
from wdncnn.cli import main
from wdncnn.config import ConfigError, RunConfig, load_run_config, parse_run_config
from wdncnn.imageio import read_image
from wdncnn.model import WDnCNNConfig, zero_model
from wdncnn.training import TrainingState

TINY = {
    "model": {"mapping_depth": 3, "feature_width": 8},
    "train": {
        "patch_size": 16, "patches_per_epoch": 8, "batch_size": 4, "lr_initial": 1e-3, "lr_final": 1e-5,
        "epochs_per_bdt_block": 1, "pretrain_max_epochs": 2, "finetune_epochs": 3,
    },
    "eval": {"sigmas": [25, 50, 75]},
    "wavelet": {"bank": "haar"},
}


@pytest.fixture
def tiny_config(tmp_path, data_dir):
    raw = json.loads(json.dumps(TINY))
    raw["io"] = {"train_dir": str(data_dir / "images" / "train")}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(raw))
    return path


def log_without_seconds(path):
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]


@pytest.fixture
def zero_ckpt(tmp_path):
    path = tmp_path / "zero.ckpt"
    cfg = parse_run_config({"model": {"mapping_depth": 3, "feature_width": 8}, "wavelet": {"bank": "haar"}, "train": {"patch_size": 16}})
    ckpt.save_checkpoint(path, TrainingState(zero_model(WDnCNNConfig.miniature())), cfg.digest(), {"bank": "haar", "run_config": cfg.to_dict()})
    return path


class TestConfig:
    def test_shipped_configs_parse(self):
        from pathlib import Path

        root = Path(__file__).parent.parent / "configs"
        desk = load_run_config(root / "desk.json")
        assert desk.model.feature_width == 8 and desk.wavelet.bank == "haar"
        paper = load_run_config(root / "paper.json")
        assert (paper.model.mapping_depth, paper.model.feature_width, paper.train.batch_size) == (16, 72, 128)
        assert (paper.train.lr_initial, paper.train.lr_final, paper.wavelet.bank) == (1e-4, 1e-7, "dmey")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="train: unknown key"):
            parse_run_config({"train": {"learning_rate": 1}})

    def test_bad_type_names_field(self):
        with pytest.raises(ConfigError, match="train.batch_size"):
            parse_run_config({"train": {"batch_size": "8"}})

    def test_patch_shorter_than_filter(self):
        with pytest.raises(ConfigError, match="patch_size"):
            parse_run_config({"train": {"patch_size": 50}, "wavelet": {"bank": "dmey"}})

    def test_seed_override_changes_digest(self):
        a = parse_run_config({"wavelet": {"bank": "haar"}}, seed=1)
        b = parse_run_config({"wavelet": {"bank": "haar"}}, seed=2)
        assert a.train.seed == 1 and a.digest() != b.digest()

    def test_round_trip_through_dict(self):
        cfg = parse_run_config(TINY)
        assert parse_run_config(cfg.to_dict()) == cfg

    def test_defaults(self):
        assert RunConfig().train.batch_size == 128


class TestTrain:
    def test_missing_config_exits_1(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1
        assert not (tmp_path / "o").exists()

    def test_invalid_config_no_side_effects(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"batch_size": 0}}))
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert not (tmp_path / "o").exists()

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 1

    def test_run_outputs(self, tmp_path, tiny_config):
        out = tmp_path / "run"
        assert main(["train", "--config", str(tiny_config), "--out", str(out)]) == 0
        rows = log_without_seconds(out / "train_log.csv")
        assert len(rows) == 1 + 5
        assert [r[1] for r in rows[1:]] == ["pretrain"] * 2 + ["finetune"] * 3
        for name in ("final.ckpt", "pretrain_final.ckpt", "latest.ckpt", "config.json", "finetune_epoch0001.ckpt"):
            assert (out / name).exists(), name
        state, digest, _ = ckpt.load_checkpoint(out / "final.ckpt")
        assert state.finished and digest == load_run_config(tiny_config).digest()

    def test_same_seed_identical_checkpoints(self, tmp_path, tiny_config):
        for d in ("a", "b"):
            assert main(["--seed", "5", "train", "--config", str(tiny_config), "--out", str(tmp_path / d)]) == 0
        assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
        assert log_without_seconds(tmp_path / "a" / "train_log.csv") == log_without_seconds(tmp_path / "b" / "train_log.csv")
        assert (tmp_path / "a" / "config.json").read_bytes() == (tmp_path / "b" / "config.json").read_bytes()

    def test_resume_equals_uninterrupted(self, tmp_path, tiny_config):
        full, part = tmp_path / "full", tmp_path / "part"
        assert main(["train", "--config", str(tiny_config), "--out", str(full)]) == 0
        assert main(["train", "--config", str(tiny_config), "--out", str(part), "--max-epochs", "3"]) == 0
        assert not (part / "final.ckpt").exists()
        assert main(["train", "--config", str(tiny_config), "--out", str(part), "--resume"]) == 0
        assert (full / "final.ckpt").read_bytes() == (part / "final.ckpt").read_bytes()
        assert log_without_seconds(full / "train_log.csv") == log_without_seconds(part / "train_log.csv")

    def test_resume_with_other_config_rejected(self, tmp_path, tiny_config):
        out = tmp_path / "r"
        assert main(["train", "--config", str(tiny_config), "--out", str(out), "--max-epochs", "1"]) == 0
        assert main(["--seed", "9", "train", "--config", str(tiny_config), "--out", str(out), "--resume"]) == 2


class TestDenoise:
    def test_zero_checkpoint_sigma_zero(self, tmp_path, zero_ckpt, data_dir):
        src = data_dir / "images" / "heldout" / "coins.pgm"
        out = tmp_path / "d.pgm"
        assert main(["denoise", str(src), "--checkpoint", str(zero_ckpt), "--sigma", "0", "--out", str(out)]) == 0
        assert out.read_bytes() == src.read_bytes()

    def test_reference_prints_psnr(self, tmp_path, zero_ckpt, data_dir, capsys):
        src = data_dir / "images" / "heldout" / "coins.pgm"
        assert main(["denoise", str(src), "--checkpoint", str(zero_ckpt), "--sigma", "25", "--out", str(tmp_path / "d.pgm"), "--reference", str(src)]) == 0
        assert "psnr_noisy inf" in capsys.readouterr().out

    def test_add_noise_matches_eval_row(self, tmp_path, zero_ckpt, data_dir, capsys):
        heldout = data_dir / "images" / "heldout"
        assert main(["--seed", "3", "denoise", str(heldout / "rocket.pgm"), "--checkpoint", str(zero_ckpt), "--sigma", "50", "--out", str(tmp_path / "d.pgm"), "--add-noise"]) == 0
        printed = dict(line.split() for line in capsys.readouterr().out.splitlines())
        assert main(["--seed", "3", "eval", str(heldout), "--checkpoint", str(zero_ckpt), "--sigmas", "50", "--out", str(tmp_path / "ev")]) == 0
        row = [r for r in csv.DictReader((tmp_path / "ev" / "report.csv").open()) if r["name"] == "rocket.pgm"][0]
        assert printed["psnr_noisy"] == row["psnr_noisy"]
        assert printed["psnr_denoised"] == row["psnr_denoised"]

    def test_sigma_out_of_range(self, tmp_path, zero_ckpt, data_dir):
        src = data_dir / "images" / "heldout" / "coins.pgm"
        assert main(["denoise", str(src), "--checkpoint", str(zero_ckpt), "--sigma", "90", "--out", str(tmp_path / "d.pgm")]) == 1

    def test_corrupt_checkpoint_exits_2(self, tmp_path, zero_ckpt, data_dir):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(zero_ckpt.read_bytes()[:-10])
        src = data_dir / "images" / "heldout" / "coins.pgm"
        assert main(["denoise", str(src), "--checkpoint", str(bad), "--sigma", "25", "--out", str(tmp_path / "d.pgm")]) == 2


class TestEval:
    def test_report(self, tmp_path, zero_ckpt, data_dir):
        heldout = data_dir / "images" / "heldout"
        for d in ("a", "b"):
            assert main(["eval", str(heldout), "--checkpoint", str(zero_ckpt), "--out", str(tmp_path / d)]) == 0
        rows = list(csv.DictReader((tmp_path / "a" / "report.csv").open()))
        assert len(rows) == 2 * 3 + 3
        assert [r["name"] for r in rows[-3:]] == ["AVERAGE"] * 3
        assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
        assert "config digest" in (tmp_path / "a" / "report.txt").read_text()

    def test_empty_dir(self, tmp_path, zero_ckpt):
        (tmp_path / "empty").mkdir()
        assert main(["eval", str(tmp_path / "empty"), "--checkpoint", str(zero_ckpt)]) != 0

    def test_mismatched_config(self, tmp_path, zero_ckpt, data_dir, tiny_config):
        assert main(["eval", str(data_dir / "images" / "heldout"), "--checkpoint", str(zero_ckpt), "--config", str(tiny_config)]) == 2


class TestDiagnostics:
    def test_gradcheck_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        assert "within 0.0001" in capsys.readouterr().out

    def test_gradcheck_catches_fault(self, capsys):
        assert main(["gradcheck", "--inject-fault"]) == 3
        assert "FAIL" in capsys.readouterr().out

    @pytest.mark.parametrize("bank,tol", [("haar", 1e-12), ("sym8", 1e-10), ("dmey", 1e-8)])
    def test_dwt(self, tmp_path, data_dir, capsys, bank, tol):
        src = data_dir / "images" / "camera256.pgm"
        assert main(["dwt", str(src), "--bank", bank, "--out", str(tmp_path)]) == 0
        values = dict(line.split()[:2] for line in capsys.readouterr().out.splitlines() if line.startswith(("round", "energy", "ll_")))
        assert float(values["round_trip_max_abs_error"]) < tol
        assert float(values["ll_energy_share"]) > 0.9
        assert read_image(tmp_path / "ll.pgm").shape[0] == 1

    def test_dwt_unknown_bank(self, data_dir):
        assert main(["dwt", str(data_dir / "images" / "camera256.pgm"), "--bank", "db2"]) == 1

    def test_entry_point(self, data_dir):
        res = subprocess.run(
            [sys.executable, "-m", "wdncnn.cli", "dwt", str(data_dir / "images" / "camera256.pgm"), "--bank", "haar"],
            capture_output=True, text=True,
        )
        assert res.returncode == 0 and "energy_ratio" in res.stdout
