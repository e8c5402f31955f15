"""Command-line entry point.

Subcommands: ``gen-corpus``, ``train``, ``eval``, ``embed``, ``grad-check``,
``compare``.  Every run echoes its resolved configuration and seed; exit code
1 signals a validation failure, 2 an I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .chanenc import ChannelEncoderConfig
from .checkpoint import load_checkpoint
from .corpus import CorpusConfig, build_corpus, load_manifest, manifest_path
from .evalkit import (
    EvalReport,
    compare,
    evaluate,
    read_report_csv,
    summarize,
    write_report_csv,
    write_report_json,
)
from .film import EmbeddingSource, model_from_checkpoint
from .gradcheck import run_suite
from .separator import SeparatorConfig
from .tensor import Tensor
from .trainer import Strategy, TrainConfig, fit, train_baseline
from .trainer import _AudioCache


class _Parser(argparse.ArgumentParser):
    # Bad flags/values are validation failures: exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._fail(message))

    @staticmethod
    def _fail(message):
        print(f"error: {message}", file=sys.stderr)
        return 1


def build_parser():
    parser = _Parser(prog="casnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="synthesize a multi-channel corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--config", help="JSON corpus config (defaults used if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("train", help="train the conditioned model or the baseline")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="JSON train config")
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--gamma", type=float, help="channel-identification loss weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--baseline", action="store_true", help="train without the channel path")
    p.add_argument(
        "--extra-blocks", type=int, default=None,
        help="extra separation blocks for the baseline capacity ablation",
    )
    p.add_argument("--metrics", help="per-epoch metrics CSV output path")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument(
        "--emb-source",
        default=EmbeddingSource.SAME_MIXTURE.value,
        # other-channel is a training-time source, not an inference variant
        choices=[s.value for s in EmbeddingSource if s is not EmbeddingSource.OTHER_CHANNEL],
    )
    p.add_argument("--channel", type=int, action="append", dest="channels",
                   help="channel id to evaluate (repeatable; default: hold-out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="write the per-mixture report CSV here")
    p.add_argument("--json", help="write the full JSON report here")

    p = sub.add_parser("embed", help="export channel embeddings as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("grad-check", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="run only checks whose name contains this substring")

    p = sub.add_parser("compare", help="merge evaluation report CSVs into one table")
    p.add_argument("reports", nargs="+", help="report CSV paths from `casnet eval`")
    p.add_argument("--out", help="write the merged comparison CSV here")

    return parser


def _echo(label, obj):
    print(f"{label}: {json.dumps(obj, sort_keys=True)}")


def _cmd_gen_corpus(args):
    if args.config:
        with open(args.config) as fh:
            config = CorpusConfig.from_dict(json.load(fh))
    else:
        config = CorpusConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    _echo("config", config.to_dict())
    print(f"seed: {config.seed}")
    manifests = build_corpus(config, args.out)
    for split, manifest in manifests.items():
        print(f"{split}: {len(manifest.records)} mixtures, channels {manifest.channel_ids}")
    return 0


def _cmd_train(args):
    if args.config:
        with open(args.config) as fh:
            config = TrainConfig.from_dict(json.load(fh))
    else:
        config = TrainConfig()
    overrides = {}
    if args.strategy is not None:
        overrides["strategy"] = Strategy(args.strategy)
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.extra_blocks is not None:
        overrides["extra_blocks"] = args.extra_blocks
    if overrides:
        config = dataclasses.replace(config, **overrides)
    _echo("config", {**config.to_dict(), "baseline": args.baseline})
    print(f"seed: {config.seed}")
    runner = train_baseline if args.baseline else fit
    result = runner(config, args.corpus, args.out, metrics_path=args.metrics)
    print(
        f"best val SI-SNRi: {result.best_val_sisnri:.3f} dB "
        f"(epoch {result.best_epoch}) -> {result.checkpoint_path}"
    )
    return 0


def _cmd_eval(args):
    _echo(
        "config",
        {
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "split": args.split,
            "emb_source": args.emb_source,
            "channels": args.channels,
            "seed": args.seed,
        },
    )
    print(f"seed: {args.seed}")
    report = evaluate(
        args.checkpoint,
        args.corpus,
        split=args.split,
        emb_source=args.emb_source,
        seed=args.seed,
        channels=args.channels,
    )
    print(summarize(report))
    if args.csv:
        write_report_csv(report, args.csv)
    if args.json:
        write_report_json(report, args.json)
    return 0


def _cmd_embed(args):
    _echo(
        "config",
        {
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "split": args.split,
            "out": args.out,
            "seed": args.seed,
        },
    )
    print(f"seed: {args.seed}")
    ck = load_checkpoint(args.checkpoint)
    if ck.kind != "casnet":
        raise ValueError("embed requires a conditioned-model checkpoint")
    model = model_from_checkpoint(ck).eval()
    manifest = load_manifest(manifest_path(args.corpus, args.split))
    cache = _AudioCache(args.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = sorted(manifest.records, key=lambda r: r.mixture_id)
    with open(out, "w") as fh, T.no_grad():
        for record in records:
            aux = Tensor(cache.samples(record.mix_path).reshape(1, -1))
            vec = model.encode_channel(aux).data[0]
            fh.write(
                json.dumps(
                    {
                        "mixture_id": record.mixture_id,
                        "channel_id": record.channel_id,
                        "vector": [float(v) for v in vec],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote {len(records)} embeddings -> {out}")
    return 0


def _cmd_grad_check(args):
    _echo("config", {"seed": args.seed, "only": args.only})
    print(f"seed: {args.seed}")
    results = run_suite(seed=args.seed)
    if args.only:
        results = [r for r in results if args.only in r.name]
        if not results:
            raise ValueError(f"no gradient checks match {args.only!r}")
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:30s} max_rel_err={r.error:.3e} tol={r.tol:.0e} {status}")
        failures += not r.passed
    if failures:
        print(f"{failures} gradient check(s) failed")
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def _cmd_compare(args):
    _echo("config", {"reports": list(args.reports), "out": args.out})
    print("seed: n/a (pure merge)")
    reports = [read_report_csv(p) for p in args.reports]
    text, csv_string, _ = compare(reports)
    print(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(csv_string)
    return 0


_COMMANDS = {
    "gen-corpus": _cmd_gen_corpus,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "embed": _cmd_embed,
    "grad-check": _cmd_grad_check,
    "compare": _cmd_compare,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        code = exc.code
        return 0 if code is None else code
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
