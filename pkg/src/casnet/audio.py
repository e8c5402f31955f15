"""Waveform container and 16-bit PCM WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_PCM_SCALE = 32767.0


@dataclass
class Waveform:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


def rms(samples):
    samples = np.asarray(samples, dtype=np.float64)
    return float(np.sqrt(np.mean(samples**2)))


def dbfs(level):
    """Linear amplitude -> dB relative to full scale."""
    if level <= 0:
        return float("-inf")
    return 20.0 * np.log10(level)


def db_to_amplitude(db):
    return float(10.0 ** (db / 20.0))


def save_wav(path, waveform: Waveform):
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] and quantized."""
    samples = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(samples * _PCM_SCALE).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())


def load_wav(path) -> Waveform:
    """Read mono 16-bit PCM; rejects other layouts with a named diagnostic."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError) as exc:
        raise ValueError(f"not a readable RIFF/WAVE file: {path} ({exc})") from exc
    if channels != 1:
        raise ValueError(f"expected mono audio, got {channels} channels: {path}")
    if width != 2:
        raise ValueError(f"expected 16-bit samples, got {8 * width}-bit: {path}")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / _PCM_SCALE, rate)
