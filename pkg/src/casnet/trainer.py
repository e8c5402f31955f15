"""Training loop: sampling strategies, Adam, plateau LR halving, checkpoints.

The three auxiliary-mixture strategies differ only in how the channel
encoder's input is drawn relative to the mixture under separation: same
recording, different recording on the same channel, or different recording
on a different channel.  The channel label fed to the identification loss is
always the channel of the auxiliary mixture.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .audio import load_wav
from .chanenc import ChannelEncoderConfig
from .checkpoint import save_checkpoint
from .corpus import Manifest, load_manifest, manifest_path
from .film import CasNet, EmbeddingSource
from .objectives import channel_id_loss, pit_loss, si_snr, total_loss
from .separator import SeparatorConfig, TasNet
from .tensor import Tensor


class Strategy(str, enum.Enum):
    GUIDE_SAME = "guide-same"  # aux is the mixture itself
    GUIDE_DIFF = "guide-diff"  # different content, same channel
    PERTURB = "perturb"  # different content, different channel


_STRATEGY_SOURCE = {
    Strategy.GUIDE_SAME: EmbeddingSource.SAME_MIXTURE,
    Strategy.GUIDE_DIFF: EmbeddingSource.OTHER_SAME_CHANNEL,
    Strategy.PERTURB: EmbeddingSource.OTHER_CHANNEL,
}


@dataclass
class TrainConfig:
    strategy: Strategy = Strategy.GUIDE_SAME
    gamma: float = 0.0
    epochs: int = 30
    batch_size: int = 4
    segment_s: float = 3.0
    lr_init: float = 1.5e-4
    plateau_patience: int = 2
    grad_clip: float = 5.0
    seed: int = 0
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    chanenc: ChannelEncoderConfig = field(default_factory=ChannelEncoderConfig)
    extra_blocks: int = 0  # baseline capacity ablation
    overfit_fixed_batch: bool = False  # reuse the first batch every step (test hook)

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["strategy"] = self.strategy.value
        d["separator"] = self.separator.to_dict()
        d["chanenc"] = self.chanenc.to_dict()
        return d

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        obj = dict(obj)
        if "separator" in obj:
            obj["separator"] = SeparatorConfig(**obj["separator"])
        if "chanenc" in obj:
            obj["chanenc"] = ChannelEncoderConfig(**obj["chanenc"])
        return cls(**obj)


@dataclass
class EpochMetrics:
    epoch: int
    l_rc: float
    l_ci: float
    l_total: float
    val_sisnri: float
    lr: float


@dataclass
class FitResult:
    checkpoint_path: str  # best-validation checkpoint
    metrics: list
    step_log: list  # LossBreakdown per step
    best_val_sisnri: float
    best_epoch: int
    model: object  # final-state model (after the last step)


class PlateauHalver:
    """Halve the learning rate after ``patience`` non-improving epochs."""

    def __init__(self, lr, patience):
        self.lr = lr
        self.patience = patience
        self.bad_epochs = 0

    def update(self, improved):
        if improved:
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr /= 2.0
                self.bad_epochs = 0
        return self.lr


class Adam:
    """Adaptive-moment descent with the standard defaults."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        correct1 = 1.0 - self.b1**self.t
        correct2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m[...] = self.b1 * m + (1.0 - self.b1) * p.grad
            v[...] = self.b2 * v + (1.0 - self.b2) * p.grad**2
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g**2)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


# ----------------------------------------------------------------- sampling


def sample_training_item(strategy, manifest: Manifest, rng):
    """Draw (mixture record, aux record, channel label) per the strategy.

    The label is the channel of the auxiliary record, which is what the
    classifier must identify.
    """
    strategy = Strategy(strategy)
    _validate_strategy(strategy, manifest)
    records = manifest.records
    record = records[int(rng.integers(len(records)))]
    aux = _sample_aux(strategy, manifest, record, rng)
    return record, aux, aux.channel_id


def _sample_aux(strategy, manifest, record, rng):
    if strategy is Strategy.GUIDE_SAME:
        return record
    if strategy is Strategy.GUIDE_DIFF:
        pool = [
            r
            for r in manifest.records
            if r.channel_id == record.channel_id and r.base_id != record.base_id
        ]
    else:  # PERTURB
        pool = [
            r
            for r in manifest.records
            if r.channel_id != record.channel_id and r.base_id != record.base_id
        ]
    return pool[int(rng.integers(len(pool)))]


def _validate_strategy(strategy, manifest):
    bases = {r.base_id for r in manifest.records}
    channels = {r.channel_id for r in manifest.records}
    if strategy in (Strategy.GUIDE_DIFF, Strategy.PERTURB) and len(bases) < 2:
        raise ValueError(f"strategy {strategy.value} needs >= 2 mixtures")
    if strategy is Strategy.PERTURB and len(channels) < 2:
        raise ValueError("perturb strategy needs >= 2 training channels")


class _AudioCache:
    def __init__(self, root):
        self.root = Path(root)
        self._data = {}

    def samples(self, rel_path):
        if rel_path not in self._data:
            self._data[rel_path] = load_wav(self.root / rel_path).samples
        return self._data[rel_path]


def _crop(samples, seg_len, rng):
    if len(samples) <= seg_len:
        return samples, 0
    offset = int(rng.integers(len(samples) - seg_len + 1))
    return samples[offset : offset + seg_len], offset


@dataclass
class Batch:
    mixture: np.ndarray  # [B, T]
    targets: np.ndarray  # [B, 2, T]
    aux: np.ndarray  # [B, T]
    labels: np.ndarray  # [B]


def make_batch(manifest, cache, config, rng):
    """Sample, load, and segment-crop one training batch."""
    seg_len = int(round(config.segment_s * manifest.sample_rate))
    mixes, targets, auxes, labels = [], [], [], []
    for _ in range(config.batch_size):
        record, aux_rec, label = sample_training_item(config.strategy, manifest, rng)
        mix = cache.samples(record.mix_path)
        srcs = [cache.samples(p) for p in record.source_paths]
        mix_seg, off = _crop(mix, seg_len, rng)
        srcs_seg = [s[off : off + len(mix_seg)] for s in srcs]
        if aux_rec is record:
            aux_seg = mix_seg
        else:
            aux_seg, _ = _crop(cache.samples(aux_rec.mix_path), seg_len, rng)
        mixes.append(mix_seg)
        targets.append(np.stack(srcs_seg))
        auxes.append(aux_seg)
        labels.append(label)
    return Batch(np.stack(mixes), np.stack(targets), np.stack(auxes), np.asarray(labels))


# --------------------------------------------------------------------- steps


def training_step(model, batch: Batch, gamma, strategy=None):
    """One forward/backward pass; returns (loss tensor, LossBreakdown).

    Works for both the conditioned model and the plain baseline (``strategy``
    None means no channel path).  Gradients are left on the parameters for
    the caller to clip and apply.
    """
    x = Tensor(batch.mixture)
    if strategy is None:
        estimates = model(x)
        logits = None
    else:
        source = _STRATEGY_SOURCE[Strategy(strategy)]
        estimates, _, logits = model(x, source, aux=Tensor(batch.aux))
    n = batch.mixture.shape[0]
    perms = []
    l_rc = None
    for b in range(n):
        loss_b, perm = pit_loss(estimates[b], Tensor(batch.targets[b]))
        perms.append(perm)
        l_rc = loss_b if l_rc is None else l_rc + loss_b
    l_rc = l_rc / float(n)
    if logits is not None:
        l_ci = channel_id_loss(logits, batch.labels)
        total = l_rc + gamma * l_ci
        l_ci_val = l_ci.item()
    else:
        l_ci_val = 0.0
        total = l_rc
    total.backward()
    breakdown = total_loss(l_rc.item(), l_ci_val, gamma, tuple(perms))
    return total, breakdown


def validation_sisnri(model, manifest, cache, batch_size, conditioned):
    """Mean SI-SNR improvement over a split, embeddings from the mixture itself."""
    records = sorted(manifest.records, key=lambda r: r.mixture_id)
    model.eval()
    scores = []
    with T.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            mix = np.stack([cache.samples(r.mix_path) for r in chunk])
            tgts = np.stack(
                [np.stack([cache.samples(p) for p in r.source_paths]) for r in chunk]
            )
            x = Tensor(mix)
            if conditioned:
                est, _, _ = model(x, EmbeddingSource.SAME_MIXTURE, aux=x)
            else:
                est = model(x)
            for b in range(len(chunk)):
                scores.append(_mixture_sisnri(est[b], tgts[b], mix[b]))
    model.train()
    return float(np.mean(scores))


def _mixture_sisnri(est, targets, mixture):
    """PIT-matched SI-SNR improvement for one mixture."""
    loss, perm = pit_loss(est, Tensor(targets))
    best = -loss.item()
    mix_score = float(
        np.mean([si_snr(mixture, targets[j]).item() for j in perm])
    )
    return best - mix_score


def classifier_accuracy(model, manifest, corpus_root, batch_size=8):
    """Fraction of records whose own mixture is classified to its channel."""
    cache = _AudioCache(corpus_root)
    records = sorted(manifest.records, key=lambda r: r.mixture_id)
    model.eval()
    hits = 0
    with T.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            aux = Tensor(np.stack([cache.samples(r.mix_path) for r in chunk]))
            logits = model.classify(model.encode_channel(aux))
            pred = np.argmax(logits.data, axis=1)
            hits += int(np.sum(pred == np.array([r.channel_id for r in chunk])))
    model.train()
    return hits / len(records)


# ----------------------------------------------------------------------- fit


def fit(config: TrainConfig, corpus_root, out_checkpoint, metrics_path=None):
    """Train the conditioned model; keeps the best-validation checkpoint."""
    model, kind = _build_casnet(config, corpus_root), "casnet"
    return _run_training(model, kind, config, corpus_root, out_checkpoint, metrics_path)


def train_baseline(config: TrainConfig, corpus_root, out_checkpoint, metrics_path=None):
    """Train the plain separation baseline (no channel path, no conditioning).

    ``config.extra_blocks`` adds separation blocks for the capacity ablation.
    """
    sep_cfg = dataclasses.replace(
        config.separator, n_blocks=config.separator.n_blocks + config.extra_blocks
    )
    model = TasNet(sep_cfg, seed=_derive(config.seed, 0))
    return _run_training(model, "tasnet", config, corpus_root, out_checkpoint, metrics_path)


def _build_casnet(config, corpus_root):
    manifest = load_manifest(manifest_path(corpus_root, "train"))
    enc_cfg = dataclasses.replace(
        config.chanenc, n_channel_classes=manifest.n_channels
    )
    return CasNet(config.separator, enc_cfg, seed=_derive(config.seed, 0))


def _derive(seed, salt):
    return int(np.random.SeedSequence([seed, salt]).generate_state(1)[0])


def _run_training(model, kind, config, corpus_root, out_checkpoint, metrics_path):
    train_manifest = load_manifest(manifest_path(corpus_root, "train"))
    valid_manifest = load_manifest(manifest_path(corpus_root, "valid"))
    if kind == "casnet":
        _validate_strategy(config.strategy, train_manifest)
    cache = _AudioCache(corpus_root)
    rng = np.random.default_rng([config.seed, 0x5A17])
    params = list(model.parameters())
    opt = Adam(params, config.lr_init)
    schedule = PlateauHalver(config.lr_init, config.plateau_patience)
    steps_per_epoch = max(1, math.ceil(len(train_manifest.records) / config.batch_size))
    conditioned = kind == "casnet"
    strategy = config.strategy if conditioned else None

    fixed_batch = (
        make_batch(train_manifest, cache, config, rng)
        if config.overfit_fixed_batch
        else None
    )

    metrics, step_log = [], []
    best_val, best_epoch = float("-inf"), -1
    step = 0
    for epoch in range(1, config.epochs + 1):
        rc_sum = ci_sum = 0.0
        for _ in range(steps_per_epoch):
            batch = fixed_batch or make_batch(train_manifest, cache, config, rng)
            model.zero_grad()
            _, breakdown = training_step(model, batch, config.gamma, strategy)
            if not math.isfinite(breakdown.l_total):
                raise RuntimeError(f"NaN loss at step {step}")
            clip_grad_norm(params, config.grad_clip)
            opt.step()
            step_log.append(breakdown)
            rc_sum += breakdown.l_rc
            ci_sum += breakdown.l_ci
            step += 1
        val = validation_sisnri(model, valid_manifest, cache, config.batch_size, conditioned)
        mean_rc = rc_sum / steps_per_epoch
        mean_ci = ci_sum / steps_per_epoch
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                l_rc=mean_rc,
                l_ci=mean_ci,
                l_total=mean_rc + config.gamma * mean_ci,
                val_sisnri=val,
                lr=opt.lr,
            )
        )
        improved = val > best_val
        if improved:
            best_val, best_epoch = val, epoch
            _save_model(out_checkpoint, model, kind, config, train_manifest, best_val, best_epoch)
        opt.lr = schedule.update(improved)
    if metrics_path:
        write_metrics_csv(metrics, metrics_path)
    return FitResult(
        checkpoint_path=str(out_checkpoint),
        metrics=metrics,
        step_log=step_log,
        best_val_sisnri=best_val,
        best_epoch=best_epoch,
        model=model,
    )


def _save_model(path, model, kind, config, manifest, best_val, best_epoch):
    if kind == "casnet":
        model_cfg = {
            "separator": model.sep_cfg.to_dict(),
            "chanenc": model.enc_cfg.to_dict(),
        }
    else:
        model_cfg = {"separator": model.cfg.to_dict()}  # includes extra blocks
    save_checkpoint(
        path,
        kind,
        model_cfg,
        model.state_dict(),
        train_meta={
            "strategy": config.strategy.value if kind == "casnet" else None,
            "gamma": config.gamma if kind == "casnet" else None,
            "seed": config.seed,
            "segment_s": config.segment_s,
            "sample_rate": manifest.sample_rate,
            "best_val_sisnri": best_val,
            "best_epoch": best_epoch,
        },
    )


def write_metrics_csv(metrics, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_rc", "l_ci", "l_total", "val_sisnri", "lr"])
        for m in metrics:
            writer.writerow([m.epoch, m.l_rc, m.l_ci, m.l_total, m.val_sisnri, m.lr])
