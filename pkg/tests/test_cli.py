"""Command-line surface: flags, exit codes, and end-to-end command flow."""

import json

import pytest

from casnet.cli import main
from conftest import SMALL_ENC, SMALL_SEP


@pytest.fixture(scope="module")
def corpus_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "corpus.json"
    path.write_text(
        json.dumps(
            {
                "duration_s": 0.4,
                "counts": {"train": 3, "valid": 2, "test": 2},
                "speaker_counts": {"train": 3, "valid": 2, "test": 2},
                "n_channels": 3,
                "holdout_channel": 2,
                "seed": 13,
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def train_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "train.json"
    path.write_text(
        json.dumps(
            {
                "epochs": 1,
                "batch_size": 2,
                "segment_s": 0.3,
                "lr_init": 1e-3,
                "separator": SMALL_SEP,
                "chanenc": SMALL_ENC,
            }
        )
    )
    return path


@pytest.fixture(scope="module")
def cli_corpus(corpus_config_file, tmp_path_factory, capsysbinary=None):
    out = tmp_path_factory.mktemp("cli_corpus")
    assert main(["gen-corpus", "--out", str(out), "--config", str(corpus_config_file)]) == 0
    return out


@pytest.fixture(scope="module")
def cli_checkpoint(cli_corpus, train_config_file, tmp_path_factory):
    path = tmp_path_factory.mktemp("cli_ck") / "model.ck"
    code = main(
        [
            "train",
            "--corpus", str(cli_corpus),
            "--out", str(path),
            "--config", str(train_config_file),
            "--strategy", "guide-same",
            "--gamma", "0.0",
            "--seed", "1",
        ]
    )
    assert code == 0
    return path


class TestHelp:
    def test_top_level_help_lists_all_commands(self, capsys):
        assert main(["--help"]) == 0
        out = capsys.readouterr().out
        for command in ("gen-corpus", "train", "eval", "embed", "grad-check", "compare"):
            assert command in out

    @pytest.mark.parametrize(
        "command", ["gen-corpus", "train", "eval", "embed", "grad-check", "compare"]
    )
    def test_subcommand_help(self, command, capsys):
        assert main([command, "--help"]) == 0
        assert "--help" not in capsys.readouterr().err

    def test_unknown_flag_is_validation_failure(self, capsys):
        assert main(["grad-check", "--no-such-flag"]) == 1

    def test_bad_choice_is_validation_failure(self, capsys):
        assert main(["eval", "--checkpoint", "x", "--corpus", "y", "--emb-source", "bogus"]) == 1


class TestExitCodes:
    def test_missing_corpus_is_io_failure(self, tmp_path, capsys):
        code = main(
            ["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "m.ck")]
        )
        assert code == 2

    def test_missing_checkpoint_is_io_failure(self, cli_corpus, tmp_path, capsys):
        code = main(
            ["eval", "--checkpoint", str(tmp_path / "nope.ck"), "--corpus", str(cli_corpus)]
        )
        assert code == 2

    def test_semantic_validation_is_exit_one(self, tmp_path, capsys):
        # two channels leave nothing to hold out; rejected at config validation
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_channels": 2}))
        code = main(["gen-corpus", "--out", str(tmp_path / "c"), "--config", str(bad)])
        assert code == 1
        assert "n_channels" in capsys.readouterr().err


class TestGenCorpus:
    def test_echoes_config_and_seed(self, cli_corpus, corpus_config_file, tmp_path, capsys):
        out = tmp_path / "again"
        assert main(["gen-corpus", "--out", str(out), "--config", str(corpus_config_file)]) == 0
        stdout = capsys.readouterr().out
        assert stdout.startswith("config: ")
        assert "seed: 13" in stdout

    def test_seed_override_and_determinism(self, corpus_config_file, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert (
                main(
                    [
                        "gen-corpus",
                        "--out", str(out),
                        "--config", str(corpus_config_file),
                        "--seed", "99",
                    ]
                )
                == 0
            )
        assert (a / "manifest_train.jsonl").read_bytes() == (b / "manifest_train.jsonl").read_bytes()
        cfg = json.loads((a / "corpus_config.json").read_text())
        assert cfg["seed"] == 99


class TestEvalAndCompare:
    def test_eval_writes_reports(self, cli_corpus, cli_checkpoint, tmp_path, capsys):
        csv_path, json_path = tmp_path / "r.csv", tmp_path / "r.json"
        code = main(
            [
                "eval",
                "--checkpoint", str(cli_checkpoint),
                "--corpus", str(cli_corpus),
                "--emb-source", "same",
                "--csv", str(csv_path),
                "--json", str(json_path),
            ]
        )
        assert code == 0
        assert csv_path.exists() and json_path.exists()
        assert "mean SI-SNRi" in capsys.readouterr().out

    def test_no_film_equals_bypass_of_same_checkpoint(self, cli_corpus, cli_checkpoint, tmp_path, capsys):
        paths = [tmp_path / "x.csv", tmp_path / "y.csv"]
        for path in paths:
            assert (
                main(
                    [
                        "eval",
                        "--checkpoint", str(cli_checkpoint),
                        "--corpus", str(cli_corpus),
                        "--emb-source", "no-film",
                        "--csv", str(path),
                    ]
                )
                == 0
            )
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_compare_merges_reports(self, cli_corpus, cli_checkpoint, tmp_path, capsys):
        reports = []
        for source in ("same", "gaussian"):
            path = tmp_path / f"{source}.csv"
            assert (
                main(
                    [
                        "eval",
                        "--checkpoint", str(cli_checkpoint),
                        "--corpus", str(cli_corpus),
                        "--emb-source", source,
                        "--csv", str(path),
                    ]
                )
                == 0
            )
            reports.append(str(path))
        merged = tmp_path / "merged.csv"
        assert main(["compare", *reports, "--out", str(merged)]) == 0
        out = capsys.readouterr().out
        assert "beats_gaussian" in out
        assert merged.read_text().count("\n") == 3


class TestEmbed:
    def test_embeddings_export_jsonl(self, cli_corpus, cli_checkpoint, tmp_path, capsys):
        out = tmp_path / "emb.jsonl"
        code = main(
            [
                "embed",
                "--checkpoint", str(cli_checkpoint),
                "--corpus", str(cli_corpus),
                "--split", "test",
                "--out", str(out),
            ]
        )
        assert code == 0
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(lines) == 6  # 2 test mixtures x 3 channels
        assert set(lines[0]) == {"mixture_id", "channel_id", "vector"}
        assert len(lines[0]["vector"]) == SMALL_ENC["embed_dim"]


class TestGradCheckCommand:
    def test_full_suite_exits_zero(self, capsys):
        assert main(["grad-check"]) == 0
        out = capsys.readouterr().out
        assert "all" in out and "passed" in out and "FAIL" not in out

    def test_filtered_run_passes(self, capsys):
        assert main(["grad-check", "--only", "linear"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "seed: 0" in out

    def test_unmatched_filter_is_validation_failure(self, capsys):
        assert main(["grad-check", "--only", "zzz-no-such-op"]) == 1
