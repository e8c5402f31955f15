"""Channel encoder: summarizes the recording channel of a mixture.

A conv block, a stack of squeeze-and-excitation residual blocks, attentive
pooling over time, and a linear projection produce a fixed-dimension channel
embedding; a single linear classifier head predicts the recording channel
from it for the identification loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T


@dataclass
class ChannelEncoderConfig:
    n_blocks: int = 4
    width: int = 64
    embed_dim: int = 128
    n_channel_classes: int = 4

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")

    def to_dict(self):
        return dict(self.__dict__)


class ConvBlock(nn.Module):
    """Length-preserving Conv1d -> ReLU -> BatchNorm."""

    def __init__(self, in_ch, out_ch, rng, k=3):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, k, rng, padding=k // 2)
        self.norm = nn.BatchNorm1d(out_ch)

    def forward(self, x):
        return self.norm(self.conv(x).relu())


class SEResBlock(nn.Module):
    """Two conv blocks, then a squeeze-and-excitation gate with residual.

    The gate squeezes via a time average, excites via a two-layer FC ending
    in a sigmoid (one scalar per feature map), and the output is
    ``gate * h + h`` where ``h`` is the conv-stack output.  Zero FC weights
    therefore collapse the block to ``1.5 * h``.
    """

    def __init__(self, width, rng):
        super().__init__()
        hidden = max(width // 4, 4)
        self.conv1 = ConvBlock(width, width, rng)
        self.conv2 = ConvBlock(width, width, rng)
        self.fc1 = nn.Linear(width, hidden, rng)
        self.fc2 = nn.Linear(hidden, width, rng)

    def forward(self, x):
        h = self.conv2(self.conv1(x))
        squeezed = T.avg_pool_time(h)  # [M, width]
        gate = self.fc2(self.fc1(squeezed).relu()).sigmoid()
        batch, width = gate.shape
        return h * gate.reshape((batch, width, 1)) + h


class AttentivePool(nn.Module):
    """Weighted time-mean with learned per-frame scores.

    A linear map scores each frame, scores pass through a sigmoid, and the
    weights are normalized to sum to 1 per utterance, so the output is a true
    weighted mean of the frame vectors.
    """

    def __init__(self, width, rng):
        super().__init__()
        self.score = nn.Linear(width, 1, rng)

    def forward(self, x):
        # x: [M, width, T] -> [M, width]
        m, width, time = x.shape
        logits = self.score(x.transpose((0, 2, 1)))  # [M, T, 1]
        attn = logits.reshape((m, time)).sigmoid()
        weights = attn / attn.sum(axis=1, keepdims=True)
        return (x * weights.reshape((m, 1, time))).sum(axis=2)

    def weights_for(self, x):
        """Normalized attention weights (for inspection/tests)."""
        m, _, time = x.shape
        logits = self.score(x.transpose((0, 2, 1)))
        attn = logits.reshape((m, time)).sigmoid()
        return attn / attn.sum(axis=1, keepdims=True)


class ChannelEncoder(nn.Module):
    def __init__(self, cfg: ChannelEncoderConfig, in_ch, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.conv_block = ConvBlock(in_ch, cfg.width, rng)
        self.res_blocks = nn.ModuleList(
            [SEResBlock(cfg.width, rng) for _ in range(cfg.n_blocks)]
        )
        self.pool = AttentivePool(cfg.width, rng)
        self.project = nn.Linear(cfg.width, cfg.embed_dim, rng)

    def forward(self, x0):
        # x0: encoder features of the auxiliary mixtures, [M, in_ch, T]
        h = self.conv_block(x0)
        for block in self.res_blocks:
            h = block(h)
        return self.project(self.pool(h))  # [M, embed_dim]


class ChannelClassifier(nn.Module):
    """Single linear head: embedding -> channel logits."""

    def __init__(self, embed_dim, n_classes, rng):
        super().__init__()
        self.proj = nn.Linear(embed_dim, n_classes, rng)

    def forward(self, emb):
        return self.proj(emb)
