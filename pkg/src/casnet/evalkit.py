"""Hold-out evaluation under every embedding source, plus comparison tables.

An evaluation runs a checkpoint over one manifest split (optionally filtered
to specific channels, typically the held-out one), records the PIT-matched
SI-SNR and SI-SNR improvement per mixture, and aggregates means.  Reports
serialize to a flat per-mixture CSV and a JSON document; ``compare`` merges
any number of reports into one table with an ordering flag showing whether
informative embeddings beat random-noise embeddings.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .corpus import load_manifest, manifest_path
from .film import AUX_REQUIRED, EmbeddingSource, model_from_checkpoint
from .objectives import pit_loss, si_snr
from .tensor import Tensor
from .trainer import _AudioCache

_INFORMATIVE = {EmbeddingSource.SAME_MIXTURE, EmbeddingSource.OTHER_SAME_CHANNEL}


@dataclass
class MixtureEval:
    mixture_id: str
    channel_id: int
    si_snr: float
    si_snri: float


@dataclass
class EvalReport:
    model_id: str
    emb_source: str
    gamma: object  # training gamma from the checkpoint, None for baselines
    split: str
    channels: list
    seed: int
    per_mixture: list

    @property
    def n_mixtures(self):
        return len(self.per_mixture)

    @property
    def mean_si_snr(self):
        return float(np.mean([m.si_snr for m in self.per_mixture]))

    @property
    def mean_si_snri(self):
        return float(np.mean([m.si_snri for m in self.per_mixture]))


def evaluate(
    checkpoint_path,
    corpus_root,
    split="test",
    emb_source=EmbeddingSource.SAME_MIXTURE,
    seed=0,
    channels=None,
    model_id=None,
):
    """Evaluate one checkpoint over a manifest split.

    ``channels`` defaults to the corpus hold-out channel for the test split
    and to all channels present otherwise.  Deterministic under ``seed``.
    """
    emb_source = EmbeddingSource(emb_source)
    ck = load_checkpoint(checkpoint_path)
    if ck.kind == "tasnet" and emb_source is not EmbeddingSource.BYPASS:
        raise ValueError(
            "baseline checkpoint has no channel path; use emb-source no-film"
        )
    model = model_from_checkpoint(ck).eval()
    manifest = load_manifest(manifest_path(corpus_root, split))
    if channels is None:
        channels = (
            [manifest.holdout_channel]
            if split == "test" and manifest.holdout_channel in manifest.channel_ids
            else manifest.channel_ids
        )
    records = sorted(
        (r for r in manifest.records if r.channel_id in channels),
        key=lambda r: r.mixture_id,
    )
    if not records:
        raise ValueError(f"no mixtures in split {split!r} for channels {channels}")
    by_channel = {}
    for r in records:
        by_channel.setdefault(r.channel_id, []).append(r)
    if emb_source is EmbeddingSource.OTHER_SAME_CHANNEL:
        lonely = [c for c, rs in by_channel.items() if len(rs) < 2]
        if lonely:
            raise ValueError(
                f"emb-source {emb_source.value} needs >= 2 mixtures per channel; "
                f"channels {lonely} have one"
            )

    cache = _AudioCache(corpus_root)
    rng = np.random.default_rng([seed, 0xE7A1])
    per_mixture = []
    with T.no_grad():
        for record in records:
            mix = cache.samples(record.mix_path)
            targets = np.stack([cache.samples(p) for p in record.source_paths])
            x = Tensor(mix.reshape(1, -1))
            if emb_source is EmbeddingSource.BYPASS and ck.kind == "tasnet":
                est = model(x)
            else:
                aux = _resolve_aux(emb_source, record, by_channel, cache, rng)
                est, _, _ = model(x, emb_source, aux=aux, rng=rng)
            scores, perm = _pit_scores(est[0], targets)
            mix_scores = [si_snr(mix, targets[j]).item() for j in perm]
            per_mixture.append(
                MixtureEval(
                    mixture_id=record.mixture_id,
                    channel_id=record.channel_id,
                    si_snr=float(np.mean(scores)),
                    si_snri=float(np.mean(scores) - np.mean(mix_scores)),
                )
            )
    return EvalReport(
        model_id=model_id or Path(checkpoint_path).stem,
        emb_source=emb_source.value,
        gamma=ck.train_meta.get("gamma"),
        split=split,
        channels=list(channels),
        seed=seed,
        per_mixture=per_mixture,
    )


def _resolve_aux(emb_source, record, by_channel, cache, rng):
    if emb_source not in AUX_REQUIRED:
        return None
    if emb_source is EmbeddingSource.SAME_MIXTURE:
        aux_rec = record
    else:
        if emb_source is EmbeddingSource.OTHER_SAME_CHANNEL:
            pool = [
                r
                for r in by_channel[record.channel_id]
                if r.base_id != record.base_id
            ]
        else:  # OTHER_CHANNEL
            pool = [
                r
                for rs in by_channel.values()
                for r in rs
                if r.channel_id != record.channel_id and r.base_id != record.base_id
            ]
        if not pool:
            raise ValueError(f"no auxiliary candidates for {emb_source.value}")
        aux_rec = pool[int(rng.integers(len(pool)))]
    return Tensor(cache.samples(aux_rec.mix_path).reshape(1, -1))


def _pit_scores(est, targets):
    """Per-source SI-SNR under the best assignment."""
    loss, perm = pit_loss(est, Tensor(targets))
    scores = [si_snr(est[i], targets[perm[i]]).item() for i in range(len(perm))]
    return scores, perm


# ----------------------------------------------------------------- reports

_CSV_FIELDS = [
    "model_id",
    "emb_source",
    "gamma",
    "split",
    "seed",
    "channel_id",
    "mixture_id",
    "si_snr",
    "si_snri",
]


def report_rows(report: EvalReport):
    return [
        {
            "model_id": report.model_id,
            "emb_source": report.emb_source,
            "gamma": "" if report.gamma is None else report.gamma,
            "split": report.split,
            "seed": report.seed,
            "channel_id": m.channel_id,
            "mixture_id": m.mixture_id,
            "si_snr": m.si_snr,
            "si_snri": m.si_snri,
        }
        for m in report.per_mixture
    ]


def write_report_csv(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(report_rows(report))


def read_report_csv(path) -> EvalReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty report csv: {path}")
    head = rows[0]
    return EvalReport(
        model_id=head["model_id"],
        emb_source=head["emb_source"],
        gamma=float(head["gamma"]) if head["gamma"] else None,
        split=head["split"],
        channels=sorted({int(r["channel_id"]) for r in rows}),
        seed=int(head["seed"]),
        per_mixture=[
            MixtureEval(
                mixture_id=r["mixture_id"],
                channel_id=int(r["channel_id"]),
                si_snr=float(r["si_snr"]),
                si_snri=float(r["si_snri"]),
            )
            for r in rows
        ],
    )


def write_report_json(report, path):
    doc = {
        "model_id": report.model_id,
        "emb_source": report.emb_source,
        "gamma": report.gamma,
        "split": report.split,
        "channels": report.channels,
        "seed": report.seed,
        "n_mixtures": report.n_mixtures,
        "mean_si_snr": report.mean_si_snr,
        "mean_si_snri": report.mean_si_snri,
        "per_mixture": [dataclasses.asdict(m) for m in report.per_mixture],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def summarize(report: EvalReport) -> str:
    return (
        f"model={report.model_id} emb={report.emb_source} split={report.split} "
        f"channels={report.channels} n={report.n_mixtures} "
        f"mean SI-SNR={report.mean_si_snr:.2f} dB "
        f"mean SI-SNRi={report.mean_si_snri:.2f} dB"
    )


_COMPARE_FIELDS = [
    "model_id",
    "emb_source",
    "gamma",
    "split",
    "n_mixtures",
    "mean_si_snr",
    "mean_si_snri",
    "beats_gaussian",
]


def compare(reports):
    """Merge reports into one table: (text, csv_string, rows).

    The ``beats_gaussian`` column marks whether an informative-embedding row
    (same mixture / other mixture, same channel) scores at least as high as
    the matching gaussian-noise row of the same model and split.
    """
    if not reports:
        raise ValueError("compare needs at least one report")
    gaussian_mean = {
        (r.model_id, r.split): r.mean_si_snri
        for r in reports
        if r.emb_source == EmbeddingSource.GAUSSIAN.value
    }
    rows = []
    for r in reports:
        flag = "-"
        if EmbeddingSource(r.emb_source) in _INFORMATIVE:
            ref = gaussian_mean.get((r.model_id, r.split))
            if ref is not None:
                flag = "yes" if r.mean_si_snri >= ref else "no"
        rows.append(
            {
                "model_id": r.model_id,
                "emb_source": r.emb_source,
                "gamma": "" if r.gamma is None else r.gamma,
                "split": r.split,
                "n_mixtures": r.n_mixtures,
                "mean_si_snr": round(r.mean_si_snr, 4),
                "mean_si_snri": round(r.mean_si_snri, 4),
                "beats_gaussian": flag,
            }
        )
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_COMPARE_FIELDS)
    writer.writeheader()
    writer.writerows(rows)
    return _format_table(rows), buf.getvalue(), rows


def _format_table(rows):
    headers = _COMPARE_FIELDS
    table = [[str(r[h]) for h in headers] for r in rows]
    widths = [max(len(h), *(len(row[i]) for row in table)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in table]
    return "\n".join(lines)
