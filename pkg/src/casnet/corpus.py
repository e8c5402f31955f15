"""Synthetic two-speaker corpus with parametric recording channels.

Stands in for a multi-microphone mixture dataset: speech-like sources are
synthesized per speaker, each (mixture, channel) pair renders both sources
through the same channel profile and mixes them, and JSONL manifests plus a
WAV tree are written per split.  One channel is held out of train/valid so
channel robustness can be measured on it.  Everything derives from integer
seeds, so rebuilding with the same config is bit-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, rms, save_wav

SCHEMA_VERSION = 1
SPLITS = ("train", "valid", "test")
_SPLIT_CODE = {"train": 0, "valid": 1, "test": 2}
SOURCE_RMS_DBFS = -20.0
MIX_PEAK = 0.9


def derive_seed(*parts) -> int:
    """Stable child seed from integer parts (order matters)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# --------------------------------------------------------------- sources


@dataclass
class SpeakerParams:
    f0_hz: float
    n_harmonics: int
    rolloff: float  # harmonic amplitude decay exponent, higher = darker
    vibrato_hz: float
    vibrato_depth: float  # in octaves
    syllable_hz: float


def speaker_params(speaker_id: int) -> SpeakerParams:
    """Deterministic per-speaker voice parameters, spread over pitch/timbre."""
    rng = np.random.default_rng([0xCA5, speaker_id])
    return SpeakerParams(
        f0_hz=float(rng.uniform(95.0, 280.0)),
        n_harmonics=int(rng.integers(10, 18)),
        rolloff=float(rng.uniform(0.6, 1.5)),
        vibrato_hz=float(rng.uniform(4.0, 7.0)),
        vibrato_depth=float(rng.uniform(0.02, 0.06)),
        syllable_hz=float(rng.uniform(2.0, 4.5)),
    )


def generate_source(seed, duration_s, speaker: SpeakerParams, sample_rate=8000):
    """Speech-like harmonic source, RMS-normalized to -20 dBFS.

    A harmonic stack on a drifting pitch contour, slow per-harmonic amplitude
    modulation standing in for formant movement, and a syllable-rate energy
    envelope.  Deterministic in ``seed``.
    """
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    vib_phase = rng.uniform(0, 2 * np.pi)
    drift = rng.uniform(-0.04, 0.04)
    f0 = speaker.f0_hz * 2.0 ** (
        speaker.vibrato_depth * np.sin(2 * np.pi * speaker.vibrato_hz * t + vib_phase)
        + drift * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    )
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    nyquist_h = int(0.45 * sample_rate / float(np.max(f0)))
    n_harm = max(1, min(speaker.n_harmonics, nyquist_h))
    signal = np.zeros(n)
    for h in range(1, n_harm + 1):
        base_amp = h ** (-speaker.rolloff)
        mod_hz = rng.uniform(0.5, 3.0)
        mod_phase = rng.uniform(0, 2 * np.pi)
        formant = 1.0 + 0.5 * np.sin(2 * np.pi * mod_hz * t + mod_phase)
        signal += base_amp * formant * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    syl_phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.15 + 0.85 * (
        0.5 + 0.5 * np.sin(2 * np.pi * speaker.syllable_hz * t + syl_phase)
    ) ** 2
    signal *= envelope

    signal *= 10.0 ** (SOURCE_RMS_DBFS / 20.0) / rms(signal)
    return Waveform(np.clip(signal, -1.0, 1.0), sample_rate)


# --------------------------------------------------------------- channels


@dataclass
class ChannelProfile:
    """Parametric recording channel: FIR coloration, gain, noise, clipping."""

    channel_id: int
    fir_taps: np.ndarray
    gain_db: float
    noise_floor_db: float  # relative to signal RMS; -inf disables noise
    clip_threshold: float
    seed: int

    def __post_init__(self):
        self.fir_taps = np.asarray(self.fir_taps, dtype=np.float64)
        if self.fir_taps.size == 0 or self.fir_taps.size > 64:
            raise ValueError("fir_taps must have 1..64 taps")
        if not 0.0 < self.clip_threshold <= 1.0:
            raise ValueError("clip_threshold must be in (0, 1]")

    def to_json(self):
        return {
            "channel_id": self.channel_id,
            "fir_taps": self.fir_taps.tolist(),
            "gain_db": self.gain_db,
            "noise_floor_db": None if math.isinf(self.noise_floor_db) else self.noise_floor_db,
            "clip_threshold": self.clip_threshold,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj):
        noise = obj["noise_floor_db"]
        return cls(
            channel_id=obj["channel_id"],
            fir_taps=np.asarray(obj["fir_taps"]),
            gain_db=obj["gain_db"],
            noise_floor_db=float("-inf") if noise is None else noise,
            clip_threshold=obj["clip_threshold"],
            seed=obj["seed"],
        )


def identity_profile(channel_id=0) -> ChannelProfile:
    return ChannelProfile(channel_id, np.array([1.0]), 0.0, float("-inf"), 1.0, 0)


def _lowpass_taps(cutoff_hz, sample_rate, n_taps):
    """Windowed-sinc lowpass, unit DC gain."""
    m = np.arange(n_taps) - (n_taps - 1) / 2
    taps = np.sinc(2 * cutoff_hz / sample_rate * m) * np.hanning(n_taps)
    return taps / np.sum(taps)


def default_profiles(n_channels, seed, sample_rate=8000):
    """Distinct channel archetypes: clean, dark, noisy-bright, hot-clipped, ...

    Channel 0 is always the exact identity; the rest are jittered per seed so
    different corpora do not share coloration.
    """

    def dark(rng, cid):
        taps = _lowpass_taps(rng.uniform(900, 1300), sample_rate, 21)
        return ChannelProfile(cid, taps, rng.uniform(-3.5, -1.5), rng.uniform(-45, -39), 1.0, 0)

    def noisy_bright(rng, cid):
        # First-difference tilt boosts highs; prominent noise floor.
        tilt = rng.uniform(0.45, 0.65)
        taps = np.array([1.0, -tilt])
        taps /= np.sum(np.abs(taps))
        return ChannelProfile(cid, taps, rng.uniform(-1.5, 0.0), rng.uniform(-26, -21), 1.0, 0)

    def hot_clipped(rng, cid):
        taps = _lowpass_taps(rng.uniform(2300, 2900), sample_rate, 15)
        return ChannelProfile(
            cid, taps, rng.uniform(5.0, 7.0), rng.uniform(-38, -33), rng.uniform(0.5, 0.6), 0
        )

    def bandlimited(rng, cid):
        low = _lowpass_taps(rng.uniform(2800, 3400), sample_rate, 31)
        narrow = _lowpass_taps(rng.uniform(250, 350), sample_rate, 31)
        taps = low - narrow  # bandpass
        taps /= np.sum(np.abs(taps))
        return ChannelProfile(cid, taps, rng.uniform(-2.0, 0.0), rng.uniform(-34, -29), 1.0, 0)

    def boomy(rng, cid):
        low = _lowpass_taps(rng.uniform(500, 700), sample_rate, 21)
        taps = 0.5 * np.pad(np.array([1.0]), (10, 10))[:21] + 0.9 * low
        taps /= np.sum(np.abs(taps))
        return ChannelProfile(cid, taps, rng.uniform(-1.0, 1.0), rng.uniform(-40, -35), 0.85, 0)

    archetypes = [dark, noisy_bright, hot_clipped, bandlimited, boomy]
    profiles = [identity_profile(0)]
    for cid in range(1, n_channels):
        rng = np.random.default_rng([seed, 0x9F17E, cid])
        profiles.append(archetypes[(cid - 1) % len(archetypes)](rng, cid))
    return profiles


def apply_channel(w: Waveform, p: ChannelProfile) -> Waveform:
    """Render a waveform through a channel: FIR, gain, noise, hard clip.

    Length-preserving (convolution tail truncated) and deterministic in
    ``(waveform, profile, profile.seed)``.
    """
    n = len(w.samples)
    y = np.convolve(w.samples, p.fir_taps)[:n]
    y = y * 10.0 ** (p.gain_db / 20.0)
    if not math.isinf(p.noise_floor_db):
        noise_rms = rms(y) * 10.0 ** (p.noise_floor_db / 20.0)
        y = y + np.random.default_rng(p.seed).normal(0.0, noise_rms, n)
    y = np.clip(y, -p.clip_threshold, p.clip_threshold)
    return Waveform(y, w.sample_rate)


def mix_pair(s1: Waveform, s2: Waveform, rel_level_db: float):
    """Scale s2 to ``rel_level_db`` relative to s1 and sum.

    Returns ``(mixture, (target1, target2))``; when the raw mixture peaks
    above MIX_PEAK all three are scaled by the same scalar, so the mixture
    always equals the sum of the stored targets.
    """
    if len(s1) != len(s2):
        raise ValueError(f"mix_pair: length mismatch {len(s1)} vs {len(s2)}")
    if s1.sample_rate != s2.sample_rate:
        raise ValueError(
            f"mix_pair: sample rate mismatch {s1.sample_rate} vs {s2.sample_rate}"
        )
    rms1, rms2 = rms(s1.samples), rms(s2.samples)
    if rms1 == 0.0 or rms2 == 0.0:
        raise ValueError("mix_pair: zero-energy source")
    t1 = s1.samples.copy()
    t2 = s2.samples * (10.0 ** (rel_level_db / 20.0) * rms1 / rms2)
    mixture = t1 + t2
    peak = float(np.max(np.abs(mixture)))
    if peak > MIX_PEAK:
        g = MIX_PEAK / peak
        mixture, t1, t2 = mixture * g, t1 * g, t2 * g
    sr = s1.sample_rate
    return Waveform(mixture, sr), (Waveform(t1, sr), Waveform(t2, sr))


# --------------------------------------------------------------- manifests


@dataclass
class MixtureRecord:
    mixture_id: str
    base_id: str
    channel_id: int
    mix_path: str
    source_paths: list  # exactly 2, relative to the corpus root
    source_speakers: list
    per_source_gain_db: list  # [0.0, rel_level_db]
    offsets: list = field(default_factory=lambda: [0, 0])

    def to_json(self):
        return {"kind": "mixture", **dataclasses.asdict(self)}

    @classmethod
    def from_json(cls, obj):
        obj = {k: v for k, v in obj.items() if k != "kind"}
        return cls(**obj)


@dataclass
class Manifest:
    split: str
    sample_rate: int
    duration_s: float
    corpus_seed: int
    n_channels: int
    holdout_channel: int
    profiles: list
    records: list

    @property
    def channel_ids(self):
        return sorted({r.channel_id for r in self.records})

    def save(self, path):
        header = {
            "kind": "header",
            "schema_version": SCHEMA_VERSION,
            "split": self.split,
            "sample_rate": self.sample_rate,
            "duration_s": self.duration_s,
            "corpus_seed": self.corpus_seed,
            "n_channels": self.n_channels,
            "holdout_channel": self.holdout_channel,
            "profiles": [p.to_json() for p in self.profiles],
        }
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def load_manifest(path) -> Manifest:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "header":
        raise ValueError(f"manifest missing header line: {path}")
    header = lines[0]
    if header.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported manifest schema_version {header.get('schema_version')}"
        )
    ids = [obj["mixture_id"] for obj in lines[1:]]
    if len(ids) != len(set(ids)):
        raise ValueError(f"duplicate mixture_ids in manifest: {path}")
    return Manifest(
        split=header["split"],
        sample_rate=header["sample_rate"],
        duration_s=header["duration_s"],
        corpus_seed=header["corpus_seed"],
        n_channels=header["n_channels"],
        holdout_channel=header["holdout_channel"],
        profiles=[ChannelProfile.from_json(p) for p in header["profiles"]],
        records=[MixtureRecord.from_json(obj) for obj in lines[1:]],
    )


def manifest_path(root, split):
    return Path(root) / f"manifest_{split}.jsonl"


# --------------------------------------------------------------- builder


@dataclass
class CorpusConfig:
    sample_rate: int = 8000
    duration_s: float = 3.0
    counts: dict = field(default_factory=lambda: {"train": 200, "valid": 40, "test": 40})
    speaker_counts: dict = field(default_factory=lambda: {"train": 8, "valid": 2, "test": 2})
    speaker_pools: dict = None  # optional explicit {split: [ids]}; must be disjoint
    n_channels: int = 4
    holdout_channel: int = None  # defaults to the last channel
    rel_level_db: tuple = (-2.5, 2.5)
    seed: int = 0

    def __post_init__(self):
        if self.holdout_channel is None:
            self.holdout_channel = self.n_channels - 1
        if self.n_channels < 3:
            raise ValueError(
                "n_channels must be >= 3 (one held out, >= 2 left for training)"
            )
        if not 0 <= self.holdout_channel < self.n_channels:
            raise ValueError(f"holdout_channel {self.holdout_channel} out of range")
        for split in SPLITS:
            if self.counts.get(split, 0) < 1:
                raise ValueError(f"counts[{split!r}] must be >= 1")
        if self.speaker_pools is None:
            pools, next_id = {}, 0
            for split in SPLITS:
                n = self.speaker_counts.get(split, 0)
                if n < 2:
                    raise ValueError(f"need >= 2 speakers for split {split!r}")
                pools[split] = list(range(next_id, next_id + n))
                next_id += n
            self.speaker_pools = pools
        else:
            seen = set()
            for split in SPLITS:
                pool = self.speaker_pools.get(split, [])
                if len(pool) < 2:
                    raise ValueError(f"need >= 2 speakers for split {split!r}")
                overlap = seen & set(pool)
                if overlap:
                    raise ValueError(
                        f"speaker pools overlap across splits: {sorted(overlap)}"
                    )
                seen |= set(pool)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["rel_level_db"] = list(self.rel_level_db)
        return d

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown corpus config keys: {sorted(unknown)}")
        obj = dict(obj)
        if "rel_level_db" in obj:
            obj["rel_level_db"] = tuple(obj["rel_level_db"])
        return cls(**obj)


def build_corpus(config: CorpusConfig, out_dir):
    """Render every split; returns {split: Manifest}.

    Each base mixture is rendered through every channel available to its
    split (train/valid exclude the holdout channel, test keeps all), sharing
    sources and relative level across channels so renders are parallel.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = default_profiles(config.n_channels, config.seed, config.sample_rate)
    manifests = {}
    for split in SPLITS:
        split_code = _SPLIT_CODE[split]
        channels = [
            c for c in range(config.n_channels)
            if split == "test" or c != config.holdout_channel
        ]
        records = []
        for idx in range(config.counts[split]):
            rng = np.random.default_rng(
                [config.seed, 0xD1CE, split_code, idx]
            )
            pool = config.speaker_pools[split]
            spk1, spk2 = (int(s) for s in rng.choice(pool, size=2, replace=False))
            rel_db = float(rng.uniform(*config.rel_level_db))
            base_id = f"{split[:2]}-{idx:04d}"
            sources = [
                generate_source(
                    derive_seed(config.seed, split_code, idx, src),
                    config.duration_s,
                    speaker_params(spk),
                    config.sample_rate,
                )
                for src, spk in enumerate((spk1, spk2))
            ]
            for ch in channels:
                rendered = [
                    apply_channel(
                        src_wave,
                        dataclasses.replace(
                            profiles[ch],
                            seed=derive_seed(config.seed, split_code, idx, ch, src),
                        ),
                    )
                    for src, src_wave in enumerate(sources)
                ]
                mixture, targets = mix_pair(rendered[0], rendered[1], rel_db)
                mixture_id = f"{base_id}-ch{ch}"
                mix_rel = f"{split}/{ch}/{mixture_id}.wav"
                src_rel = [f"{split}/{ch}/s{i + 1}/{mixture_id}.wav" for i in range(2)]
                save_wav(out_dir / mix_rel, mixture)
                for rel_path, target in zip(src_rel, targets):
                    save_wav(out_dir / rel_path, target)
                records.append(
                    MixtureRecord(
                        mixture_id=mixture_id,
                        base_id=base_id,
                        channel_id=ch,
                        mix_path=mix_rel,
                        source_paths=src_rel,
                        source_speakers=[spk1, spk2],
                        per_source_gain_db=[0.0, rel_db],
                    )
                )
        manifest = Manifest(
            split=split,
            sample_rate=config.sample_rate,
            duration_s=config.duration_s,
            corpus_seed=config.seed,
            n_channels=config.n_channels,
            holdout_channel=config.holdout_channel,
            profiles=profiles,
            records=records,
        )
        manifest.save(manifest_path(out_dir, split))
        manifests[split] = manifest
    with open(out_dir / "corpus_config.json", "w") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifests
