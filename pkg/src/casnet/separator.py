"""Time-domain separation backbone.

Waveform encoder (strided Conv1d + ReLU), a stack of dual-path recurrent
blocks alternating within-chunk and across-chunk processing over
50%-overlapped chunks, a mask-estimating post-net, and a transposed-conv
waveform decoder.  The forward path is split into ``analyze`` /
``separate`` / ``synthesize`` so conditioning can be inserted between the
separation blocks and the post-net without duplicating any code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor


@dataclass
class SeparatorConfig:
    enc_dim: int = 64
    win: int = 16
    stride: int = 8
    n_blocks: int = 4
    chunk_size: int = 50
    hidden: int = 64
    n_sources: int = 2

    def __post_init__(self):
        if self.stride > self.win:
            raise ValueError(f"stride {self.stride} must be <= win {self.win}")
        if self.n_sources < 2:
            raise ValueError("n_sources must be >= 2")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0 (0 is a test hook)")
        if self.chunk_size < 2 or self.chunk_size % 2 != 0:
            raise ValueError("chunk_size must be an even integer >= 2")

    def frames_for(self, time):
        return (time - self.win) // self.stride + 1

    def to_dict(self):
        return dict(self.__dict__)


class WaveEncoder(nn.Module):
    """Learned analysis filterbank: Conv1d over raw samples, then ReLU."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.conv = nn.Conv1d(1, cfg.enc_dim, cfg.win, rng, stride=cfg.stride, bias=False)

    def forward(self, x):
        # x: [batch, time] -> [batch, enc_dim, frames], non-negative
        if x.ndim != 2:
            raise ValueError("encoder expects [batch, time]")
        if x.shape[1] < self.cfg.win:
            raise ValueError(
                f"input too short: {x.shape[1]} samples, need >= {self.cfg.win}"
            )
        return self.conv(x.reshape((x.shape[0], 1, x.shape[1]))).relu()


class WaveDecoder(nn.Module):
    """Transposed-conv synthesis filterbank matching the encoder geometry."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.deconv = nn.ConvTranspose1d(cfg.enc_dim, 1, cfg.win, rng, stride=cfg.stride)

    def forward(self, masked, original_time):
        # masked: [batch, n_src, enc_dim, frames] -> [batch, n_src, original_time]
        batch, n_src, enc_dim, frames = masked.shape
        flat = masked.reshape((batch * n_src, enc_dim, frames))
        wav = self.deconv(flat)  # [batch*n_src, 1, time']
        time = wav.shape[2]
        wav = wav.reshape((batch * n_src, time))
        if time >= original_time:
            wav = wav[:, :original_time]
        else:
            wav = T.pad_axis(wav, 1, 0, original_time - time)
        return wav.reshape((batch, n_src, original_time))


class DPRNNBlock(nn.Module):
    def __init__(self, cfg, rng):
        super().__init__()
        dim, hidden = cfg.enc_dim, cfg.hidden
        self.intra_rnn = nn.LSTM(dim, hidden, rng, bidirectional=True)
        self.intra_proj = nn.Linear(2 * hidden, dim, rng)
        self.intra_norm = nn.LayerNorm(dim)
        self.inter_rnn = nn.LSTM(dim, hidden, rng, bidirectional=True)
        self.inter_proj = nn.Linear(2 * hidden, dim, rng)
        self.inter_norm = nn.LayerNorm(dim)

    def forward(self, chunks):
        # chunks: [batch, n_chunks, K, dim]
        batch, n_chunks, width, dim = chunks.shape
        intra = chunks.reshape((batch * n_chunks, width, dim))
        intra = self.intra_norm(self.intra_proj(self.intra_rnn(intra)))
        chunks = chunks + intra.reshape((batch, n_chunks, width, dim))

        inter = chunks.transpose((0, 2, 1, 3)).reshape((batch * width, n_chunks, dim))
        inter = self.inter_norm(self.inter_proj(self.inter_rnn(inter)))
        inter = inter.reshape((batch, width, n_chunks, dim)).transpose((0, 2, 1, 3))
        return chunks + inter


class PostNet(nn.Module):
    """Per-source mask head; gated product of two sigmoid projections keeps
    every mask value in [0, 1]."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        out = cfg.n_sources * cfg.enc_dim
        self.prelu = nn.PReLU(cfg.enc_dim)
        self.value = nn.Conv1d(cfg.enc_dim, out, 1, rng)
        self.gate = nn.Conv1d(cfg.enc_dim, out, 1, rng)

    def forward(self, features):
        # features: [batch, enc_dim, frames] -> masks [batch, n_src, enc_dim, frames]
        batch, _, frames = features.shape
        h = self.prelu(features)
        masks = self.value(h).sigmoid() * self.gate(h).sigmoid()
        return masks.reshape((batch, self.cfg.n_sources, self.cfg.enc_dim, frames))


def segment_chunks(features, chunk_size, hop):
    """[batch, dim, frames] -> ([batch, n_chunks, K, dim], padded_frames).

    Right-pads the frame axis so 50%-overlapped chunks tile it exactly.
    """
    batch, dim, frames = features.shape
    padded = chunk_size if frames <= chunk_size else frames
    rem = (padded - chunk_size) % hop
    if rem:
        padded += hop - rem
    x = features.transpose((0, 2, 1))  # [batch, frames, dim]
    if padded > frames:
        x = T.pad_axis(x, 1, 0, padded - frames)
    return T.unfold_time(x, chunk_size, hop), padded


def merge_chunks(chunks, hop, padded_frames, frames):
    """Overlap-add with partition-of-unity weights; exact inverse of
    :func:`segment_chunks` when no blocks run in between."""
    batch, n_chunks, chunk_size, dim = chunks.shape
    folded = T.fold_time(chunks, hop, padded_frames)  # [batch, padded, dim]
    counts = np.zeros(padded_frames)
    for j in range(n_chunks):
        counts[j * hop : j * hop + chunk_size] += 1.0
    folded = folded * Tensor(1.0 / counts.reshape(1, -1, 1))
    return folded[:, :frames, :].transpose((0, 2, 1))


class TasNet(nn.Module):
    """Baseline separation network: encode, dual-path blocks, mask, decode."""

    def __init__(self, cfg: SeparatorConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = WaveEncoder(cfg, rng)
        self.blocks = nn.ModuleList([DPRNNBlock(cfg, rng) for _ in range(cfg.n_blocks)])
        self.postnet = PostNet(cfg, rng)
        self.decoder = WaveDecoder(cfg, rng)

    def encode(self, x):
        return self.encoder(x)

    def pad_input(self, x):
        """Right-pad [batch, time] so encoder frames tile into chunks."""
        cfg = self.cfg
        time = x.shape[1]
        frames = max(cfg.frames_for(max(time, cfg.win)), cfg.chunk_size)
        hop = cfg.chunk_size // 2
        rem = (frames - cfg.chunk_size) % hop
        if rem:
            frames += hop - rem
        needed = (frames - 1) * cfg.stride + cfg.win
        if needed > time:
            x = T.pad_axis(x, 1, 0, needed - time)
        return x

    def separate(self, features):
        """Dual-path block stack over chunked features; shape-preserving."""
        cfg = self.cfg
        frames = features.shape[2]
        if frames < cfg.chunk_size:
            raise ValueError(
                f"separate: {frames} frames < chunk_size {cfg.chunk_size}"
            )
        hop = cfg.chunk_size // 2
        chunks, padded = segment_chunks(features, cfg.chunk_size, hop)
        for block in self.blocks:
            chunks = block(chunks)
        return merge_chunks(chunks, hop, padded, frames)

    def synthesize(self, enc_features, cond_features, original_time):
        """Masks from the conditioned features, applied to the encoder output."""
        masks = self.postnet(cond_features)
        batch, enc_dim, frames = enc_features.shape
        masked = masks * enc_features.reshape((batch, 1, enc_dim, frames))
        return self.decoder(masked, original_time)

    def forward(self, x):
        # x: [batch, time] -> [batch, n_sources, time]
        original_time = x.shape[1]
        x = self.pad_input(x)
        features = self.encode(x)
        separated = self.separate(features)
        return self.synthesize(features, separated, original_time)
