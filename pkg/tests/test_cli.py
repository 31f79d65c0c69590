"""Command-line behavior: exit codes, determinism, reports, resume."""

import json
import re

import numpy as np
import pytest

from contextdub.cli import EXIT_CONFIG, EXIT_DATA, _metric_rows, main
from contextdub.corpus import load_manifest
from contextdub.synthesis import Predictions
from contextdub.tensor import Tensor
from contextdub.training import load_dataset


def write_config(path, **overrides):
    cfg = {
        "seed": 4,
        "model": {"hidden_dim": 16, "mel_bins": 8, "vocab_size": 12,
                  "raw_feature_dim": 8, "text_encoder_layers": 1,
                  "mel_decoder_layers": 1, "dropout": 0.0},
        "optimizer": {"warmup_steps": 10},
        "training": {"steps": 4, "log_every": 1, "eval_every": 2,
                     "val_fraction": 0.25},
        "corpus": {"num_triples": 8, "phoneme_vocab_size": 12,
                   "phonemes_per_sentence": [6, 8], "duration_frames": [3, 4],
                   "raw_feature_dim": 8, "mel_bins": 8, "seed": 4},
    }
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def cli_env(tmp_path):
    config = write_config(tmp_path / "config.json")
    corpus = tmp_path / "corpus"
    assert main(["gen-data", "--config", str(config), "--out", str(corpus)]) == 0
    return {"config": config, "corpus": corpus, "tmp": tmp_path}


class TestGenData:
    def test_exit_zero_and_manifest(self, cli_env):
        assert (cli_env["corpus"] / "manifest").exists()

    def test_malformed_config_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{\n  broken\n}")
        code = main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == EXIT_CONFIG
        assert "line 2" in capsys.readouterr().err

    def test_unknown_key_exit_two(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"corpus": {"bogus_knob": 3}}))
        assert main(["gen-data", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == EXIT_CONFIG
        assert "bogus_knob" in capsys.readouterr().err

    def test_same_seed_identical_digest(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json")
        digests = []
        for name in ("a", "b"):
            assert main(["gen-data", "--config", str(config),
                         "--out", str(tmp_path / name)]) == 0
            out = capsys.readouterr().out
            digests.append(re.search(r"corpus sha256 (\w+)", out).group(1))
        assert digests[0] == digests[1]


class TestTrain:
    def test_writes_log_and_checkpoints(self, cli_env, capsys):
        run = cli_env["tmp"] / "run"
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(run)]) == 0
        assert (run / "last.ckpt").exists()
        assert (run / "best.ckpt").exists()
        log = (run / "train_log.txt").read_text().splitlines()
        assert log[0].startswith("# step")
        assert len(log) >= 4

    def test_seed_determinism_of_first_steps(self, cli_env):
        logs = []
        for name in ("r1", "r2"):
            run = cli_env["tmp"] / name
            assert main(["train", "--config", str(cli_env["config"]),
                         "--corpus", str(cli_env["corpus"]),
                         "--out", str(run), "--steps", "2"]) == 0
            logs.append((run / "train_log.txt").read_text())
        assert logs[0] == logs[1]

    def test_resume_continues_exact_trajectory(self, cli_env):
        full = cli_env["tmp"] / "full"
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(full),
                     "--steps", "4"]) == 0
        part = cli_env["tmp"] / "part"
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(part),
                     "--steps", "2"]) == 0
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(part),
                     "--steps", "2", "--resume", str(part / "last.ckpt")]) == 0
        full_log = (full / "train_log.txt").read_text().splitlines()
        part_log = (part / "train_log.txt").read_text().splitlines()
        assert full_log[1:5] == [l for l in part_log[1:] if l][:4]

    def test_missing_corpus_exit_data(self, cli_env, capsys):
        code = main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["tmp"] / "nowhere"),
                     "--out", str(cli_env["tmp"] / "r")])
        assert code == EXIT_DATA

    def test_damaged_corpus_exit_data(self, cli_env):
        manifest = load_manifest(cli_env["corpus"])
        victim = cli_env["corpus"] / manifest.records[0].tensors["mel"]
        victim.unlink()
        code = main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]),
                     "--out", str(cli_env["tmp"] / "r")])
        assert code == EXIT_DATA

    def test_ablate_flag_round_trips_to_checkpoint(self, cli_env):
        run = cli_env["tmp"] / "ab"
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(run),
                     "--steps", "1", "--ablate", "pre,caa"]) == 0
        header = json.loads(open(run / "last.ckpt", "rb").readline())
        assert sorted(header["trainer"]["ablate"]) == ["caa", "pre"]

    def test_unknown_ablation_flag_exit_config(self, cli_env, capsys):
        code = main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]),
                     "--out", str(cli_env["tmp"] / "r"), "--ablate", "wibble"])
        assert code == EXIT_CONFIG
        assert "wibble" in capsys.readouterr().err


class TestEval:
    @pytest.fixture
    def trained(self, cli_env):
        run = cli_env["tmp"] / "trained"
        assert main(["train", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(run),
                     "--steps", "2"]) == 0
        return run / "last.ckpt"

    def test_report_row_count_matches_split(self, cli_env, trained, capsys):
        out = cli_env["tmp"] / "ev"
        assert main(["eval", "--checkpoint", str(trained),
                     "--corpus", str(cli_env["corpus"]), "--split", "all",
                     "--val-fraction", "0.25", "--out", str(out)]) == 0
        lines = (out / "report.txt").read_text().strip().splitlines()
        assert len(lines) == 1 + 8 + 1  # header, one row per sample, mean

    def test_mean_matches_recomputation_from_rows(self, cli_env, trained, capsys):
        assert main(["eval", "--checkpoint", str(trained),
                     "--corpus", str(cli_env["corpus"]), "--split", "all",
                     "--metrics", "pitch_mse"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        header = lines[0].split("\t")
        col = header.index("pitch_mse")
        values = [float(l.split("\t")[col]) for l in lines[1:-1]]
        reported_mean = float(lines[-1].split("\t")[col])
        assert reported_mean == pytest.approx(np.mean(values), abs=1e-3)

    def test_unknown_metric_lists_valid_names(self, cli_env, trained, capsys):
        code = main(["eval", "--checkpoint", str(trained),
                     "--corpus", str(cli_env["corpus"]), "--metrics", "gpe,bogus"])
        assert code == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "bogus" in err and "pitch_mse" in err

    def test_self_targets_score_zero(self, cli_env):
        # predictions := targets must produce exact zeros for gpe/ffe/wer
        samples = load_dataset(load_manifest(cli_env["corpus"]))

        class Oracle:
            def eval(self):
                return self

            def __call__(self, sample, ablate=()):
                return Predictions(mel=Tensor(sample.mel),
                                   pitch=Tensor(sample.pitch),
                                   energy=Tensor(sample.energy),
                                   current_text=Tensor(np.zeros((1, 1))),
                                   fused={})

        report = _metric_rows(Oracle(), samples, ["gpe", "ffe", "wer", "pitch_mse"])
        means = report.means()
        assert means["gpe"] == 0.0 and means["ffe"] == 0.0
        assert means["wer"] == 0.0 and means["pitch_mse"] == 0.0


class TestAblate:
    def test_table_row_count(self, cli_env, capsys):
        out = cli_env["tmp"] / "abl"
        code = main(["ablate", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]), "--out", str(out),
                     "--ablate", "pre,global+local", "--seeds", "1",
                     "--steps", "1"])
        assert code == 0
        table = (out / "ablation_report.txt").read_text().strip().splitlines()
        assert len(table) == 1 + 1 + 2  # header, full, two ablations
        assert table[1].startswith("full")
        assert any(line.startswith("w/o Previous Sentence") for line in table)
        assert any("w/o Global & w/o Local" in line for line in table)

    def test_unknown_flag_exit_config(self, cli_env, capsys):
        code = main(["ablate", "--config", str(cli_env["config"]),
                     "--corpus", str(cli_env["corpus"]),
                     "--ablate", "nope", "--seeds", "1"])
        assert code == EXIT_CONFIG


class TestDumpGraph:
    def test_structured_text_to_stdout(self, capsys):
        assert main(["dump-graph", "--length", "2"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("graph length=2")
        assert "Tc[1]:" in out

    def test_invalid_length_exit_config(self, capsys):
        assert main(["dump-graph", "--length", "0"]) == EXIT_CONFIG


def test_env_var_supplies_corpus_root(cli_env, monkeypatch, capsys):
    monkeypatch.setenv("M2CI_DATA_DIR", str(cli_env["corpus"]))
    run = cli_env["tmp"] / "envrun"
    assert main(["train", "--config", str(cli_env["config"]),
                 "--out", str(run), "--steps", "1"]) == 0
    monkeypatch.delenv("M2CI_DATA_DIR")
    code = main(["train", "--config", str(cli_env["config"]),
                 "--out", str(run), "--steps", "1"])
    assert code == EXIT_CONFIG
