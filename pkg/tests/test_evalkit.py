"""Evaluation protocol: path equivalence, determinism, report round-trips."""

import numpy as np
import pytest

from casnet.checkpoint import save_checkpoint
from casnet.corpus import CorpusConfig, build_corpus
from casnet.evalkit import (
    EvalReport,
    MixtureEval,
    compare,
    evaluate,
    read_report_csv,
    summarize,
    write_report_csv,
    write_report_json,
)
from casnet.film import CasNet, EmbeddingSource
from casnet.separator import TasNet
from conftest import small_enc_config, small_sep_config


@pytest.fixture(scope="module")
def checkpoints(tiny_corpus, tmp_path_factory):
    """A conditioned model plus a baseline sharing its separator weights."""
    root, _, _ = tiny_corpus
    out = tmp_path_factory.mktemp("ckpts")
    casnet = CasNet(small_sep_config(), small_enc_config(n_channel_classes=4), seed=12)
    tasnet = TasNet(small_sep_config(), seed=99)
    shared = {
        name[len("separator.") :]: arr
        for name, arr in casnet.state_dict().items()
        if name.startswith("separator.")
    }
    tasnet.load_state_dict(shared)
    cas_path, tas_path = out / "cas.ck", out / "tas.ck"
    save_checkpoint(
        cas_path,
        "casnet",
        {"separator": casnet.sep_cfg.to_dict(), "chanenc": casnet.enc_cfg.to_dict()},
        casnet.state_dict(),
        {"gamma": 0.01, "strategy": "perturb"},
    )
    save_checkpoint(
        tas_path, "tasnet", {"separator": tasnet.cfg.to_dict()}, tasnet.state_dict()
    )
    return cas_path, tas_path


class TestEvaluate:
    def test_bypass_matches_baseline_evaluator_exactly(self, checkpoints, tiny_corpus):
        root, _, _ = tiny_corpus
        cas_path, tas_path = checkpoints
        a = evaluate(cas_path, root, emb_source=EmbeddingSource.BYPASS, seed=3)
        b = evaluate(tas_path, root, emb_source=EmbeddingSource.BYPASS, seed=3)
        assert [m.si_snr for m in a.per_mixture] == [m.si_snr for m in b.per_mixture]
        assert [m.si_snri for m in a.per_mixture] == [m.si_snri for m in b.per_mixture]

    def test_identical_seeds_identical_reports(self, checkpoints, tiny_corpus):
        root, _, _ = tiny_corpus
        cas_path, _ = checkpoints
        a = evaluate(cas_path, root, emb_source="gaussian", seed=5)
        b = evaluate(cas_path, root, emb_source="gaussian", seed=5)
        assert a == b

    def test_default_channels_are_the_holdout(self, checkpoints, tiny_corpus):
        root, config, _ = tiny_corpus
        cas_path, _ = checkpoints
        report = evaluate(cas_path, root, emb_source="same", seed=0)
        assert report.channels == [config.holdout_channel]
        assert all(m.channel_id == config.holdout_channel for m in report.per_mixture)

    def test_gamma_read_from_checkpoint(self, checkpoints, tiny_corpus):
        root, _, _ = tiny_corpus
        cas_path, _ = checkpoints
        report = evaluate(cas_path, root, emb_source="same", seed=0)
        assert report.gamma == 0.01

    def test_every_embedding_source_runs(self, checkpoints, tiny_corpus):
        root, _, manifests = tiny_corpus
        cas_path, _ = checkpoints
        n = len([r for r in manifests["test"].records if r.channel_id == 3])
        for source in EmbeddingSource:
            if source is EmbeddingSource.OTHER_CHANNEL:
                continue  # training-time source; needs off-holdout channels
            report = evaluate(cas_path, root, emb_source=source, seed=1)
            assert report.n_mixtures == n
            assert np.isfinite(report.mean_si_snri)

    def test_baseline_checkpoint_rejects_embedding_sources(self, checkpoints, tiny_corpus):
        root, _, _ = tiny_corpus
        _, tas_path = checkpoints
        with pytest.raises(ValueError, match="no channel path"):
            evaluate(tas_path, root, emb_source="same")

    def test_other_same_channel_needs_two_mixtures(self, checkpoints, tmp_path):
        cas_path, _ = checkpoints
        lonely = tmp_path / "lonely"
        build_corpus(
            CorpusConfig(
                duration_s=0.3,
                counts={"train": 2, "valid": 1, "test": 1},
                speaker_counts={"train": 2, "valid": 2, "test": 2},
                seed=2,
            ),
            lonely,
        )
        with pytest.raises(ValueError, match=">= 2 mixtures per channel"):
            evaluate(cas_path, lonely, emb_source="other-same-channel")


class TestReports:
    def test_csv_roundtrip(self, checkpoints, tiny_corpus, tmp_path):
        root, _, _ = tiny_corpus
        cas_path, _ = checkpoints
        report = evaluate(cas_path, root, emb_source="same", seed=4)
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        back = read_report_csv(path)
        assert back.model_id == report.model_id
        assert back.per_mixture == report.per_mixture
        assert back.mean_si_snri == pytest.approx(report.mean_si_snri)

    def test_json_report_has_breakdown(self, checkpoints, tiny_corpus, tmp_path):
        import json

        root, _, _ = tiny_corpus
        cas_path, _ = checkpoints
        report = evaluate(cas_path, root, emb_source="all-ones", seed=4)
        path = tmp_path / "report.json"
        write_report_json(report, path)
        doc = json.loads(path.read_text())
        assert doc["emb_source"] == "all-ones"
        assert len(doc["per_mixture"]) == report.n_mixtures
        assert "mean_si_snri" in doc

    def test_summarize_mentions_the_essentials(self, checkpoints, tiny_corpus):
        root, _, _ = tiny_corpus
        cas_path, _ = checkpoints
        line = summarize(evaluate(cas_path, root, emb_source="no-film", seed=0))
        assert "no-film" in line and "SI-SNRi" in line


def test_perfect_oracle_improvement_is_maximal(tiny_corpus):
    """Estimates equal to the targets score the cap minus the mixture score."""
    from casnet.audio import load_wav
    from casnet.evalkit import _pit_scores
    from casnet.objectives import si_snr
    from casnet.tensor import Tensor

    root, _, manifests = tiny_corpus
    record = manifests["test"].records[0]
    mixture = load_wav(root / record.mix_path).samples
    targets = np.stack([load_wav(root / p).samples for p in record.source_paths])
    scores, perm = _pit_scores(Tensor(targets), targets)
    mix_scores = [si_snr(mixture, targets[j]).item() for j in perm]
    si_snri = float(np.mean(scores) - np.mean(mix_scores))
    assert scores == [60.0, 60.0]
    assert si_snri == pytest.approx(60.0 - float(np.mean(mix_scores)))


def _fake_report(model_id, emb_source, si_snri, gamma=0.01):
    return EvalReport(
        model_id=model_id,
        emb_source=emb_source,
        gamma=gamma,
        split="test",
        channels=[3],
        seed=0,
        per_mixture=[MixtureEval("m-0", 3, si_snri + 1.0, si_snri)],
    )


class TestCompare:
    def test_one_row_per_report(self):
        text, csv_string, rows = compare(
            [_fake_report("a", "same", 9.6), _fake_report("a", "gaussian", 7.7)]
        )
        assert len(rows) == 2
        assert csv_string.count("\n") == 3  # header + 2 rows

    def test_ordering_flag(self):
        informative_wins = compare(
            [_fake_report("a", "same", 9.6), _fake_report("a", "gaussian", 7.7)]
        )[2]
        assert informative_wins[0]["beats_gaussian"] == "yes"
        noise_wins = compare(
            [_fake_report("a", "same", 5.0), _fake_report("a", "gaussian", 7.7)]
        )[2]
        assert noise_wins[0]["beats_gaussian"] == "no"
        no_reference = compare([_fake_report("a", "same", 5.0)])[2]
        assert no_reference[0]["beats_gaussian"] == "-"

    def test_csv_round_trips_through_standard_parser(self):
        import csv as csv_mod
        import io

        _, csv_string, rows = compare(
            [_fake_report("a", "same", 9.6), _fake_report("b", "gaussian", 7.7)]
        )
        parsed = list(csv_mod.DictReader(io.StringIO(csv_string)))
        assert len(parsed) == len(rows)
        assert parsed[0]["model_id"] == "a"

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            compare([])
