import numpy as np

from advprune.cli import main
from advprune.config import serialize_config

from test_harness import tiny_config


def write_config(tmp_path, cfg):
    p = tmp_path / "cfg.txt"
    p.write_text(serialize_config(cfg))
    return p


class TestTrainCommand:
    def test_train_and_artifacts(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config())
        rc = main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "test a1=" in out
        assert (tmp_path / "out" / "run.csv").exists()

    def test_seed_override_changes_rows(self, tmp_path):
        cfg_path = write_config(tmp_path, tiny_config())
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "s1"),
                     "--seed", "11"]) == 0
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "s2"),
                     "--seed", "12"]) == 0
        a = (tmp_path / "s1" / "run.csv").read_text()
        b = (tmp_path / "s2" / "run.csv").read_text()
        assert a != b

    def test_env_out_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ADVPRUNE_OUT", str(tmp_path / "root"))
        cfg_path = write_config(tmp_path, tiny_config())
        assert main(["train", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "root" / "run" / "run.csv").exists()

    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.txt")]) == 3

    def test_invalid_config_is_validation_error(self, tmp_path):
        cfg = tiny_config()
        text = serialize_config(cfg).replace("pruner.algorithm=none", "pruner.algorithm=zap")
        p = tmp_path / "bad.txt"
        p.write_text(text)
        assert main(["train", "--config", str(p)]) == 2


class TestEvalAndHistogram:
    def test_eval_checkpoint(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config())
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        capsys.readouterr()
        rc = main([
            "eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
            "--attack", "fgsm:eps=0.05",
            "--data", "blobs:n=30,classes=2,dim=2,spread=0.08,seed=4",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("accuracy=")

    def test_histogram_deterministic(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config())
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        rc1 = main(["histogram", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
                    "--out", str(tmp_path / "h1.svg")])
        rc2 = main(["histogram", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
                    "--out", str(tmp_path / "h2.svg")])
        assert rc1 == rc2 == 0
        assert (tmp_path / "h1.svg").read_bytes() == (tmp_path / "h2.svg").read_bytes()

    def test_compare_command(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tiny_config())
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r1")])
        main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r2")])
        capsys.readouterr()
        rc = main(["compare", str(tmp_path / "r1" / "run.csv"), str(tmp_path / "r2" / "run.csv"),
                   "--out", str(tmp_path / "cmp.csv")])
        assert rc == 0
        assert "metric" in capsys.readouterr().out
        assert (tmp_path / "cmp.csv").exists()
