"""Feature-wise conditioning and the full channel-aware model.

The channel embedding is mapped to a per-feature scale and shift by two
independent linear layers; the separated feature maps are instance-normalized,
modulated, and passed through a learnable PReLU before mask estimation.  The
model exposes the inference-time embedding sources as an enum: three that
encode an auxiliary mixture, two synthetic replacements, and a bypass that
skips conditioning entirely (sharing the exact baseline code path).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nn
from .chanenc import ChannelClassifier, ChannelEncoder, ChannelEncoderConfig
from .separator import SeparatorConfig, TasNet
from .tensor import Tensor


class EmbeddingSource(str, enum.Enum):
    SAME_MIXTURE = "same"
    OTHER_SAME_CHANNEL = "other-same-channel"
    OTHER_CHANNEL = "other-channel"
    ALL_ONES = "all-ones"
    GAUSSIAN = "gaussian"
    BYPASS = "no-film"


AUX_REQUIRED = frozenset(
    {
        EmbeddingSource.SAME_MIXTURE,
        EmbeddingSource.OTHER_SAME_CHANNEL,
        EmbeddingSource.OTHER_CHANNEL,
    }
)


@dataclass
class ChannelEmbedding:
    vector: Tensor  # [M, embed_dim]
    source_kind: EmbeddingSource


@dataclass
class FilmParams:
    scale: Tensor  # [M, enc_dim]
    shift: Tensor  # [M, enc_dim]


class FilmGenerator(nn.Module):
    """Two independent linear maps: embedding -> (scale, shift).

    The scale map is biased toward 1 so conditioning starts near identity
    while still depending on the embedding from the first step.
    """

    def __init__(self, embed_dim, enc_dim, rng):
        super().__init__()
        self.to_scale = nn.Linear(embed_dim, enc_dim, rng)
        self.to_shift = nn.Linear(embed_dim, enc_dim, rng)
        self.to_scale.weight.data *= 0.5
        self.to_scale.bias.data[:] = 1.0
        self.to_shift.weight.data *= 0.5
        self.to_shift.bias.data[:] = 0.0

    def forward(self, embedding):
        return FilmParams(self.to_scale(embedding), self.to_shift(embedding))


def film_apply(features, params, prelu):
    """PReLU(scale * instance_norm(features) + shift), broadcast over time."""
    batch, enc_dim, _ = features.shape
    normed = nn.instance_norm(features)
    scale = params.scale.reshape((batch, enc_dim, 1))
    shift = params.shift.reshape((batch, enc_dim, 1))
    return prelu(scale * normed + shift)


class CasNet(nn.Module):
    """Separator plus channel encoder, classifier, and conditioning stage."""

    def __init__(self, sep_cfg: SeparatorConfig, enc_cfg: ChannelEncoderConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.sep_cfg = sep_cfg
        self.enc_cfg = enc_cfg
        self.separator = TasNet(sep_cfg, seed=int(rng.integers(2**31)))
        self.chan_encoder = ChannelEncoder(
            enc_cfg, in_ch=sep_cfg.enc_dim, seed=int(rng.integers(2**31))
        )
        self.film = FilmGenerator(
            enc_cfg.embed_dim, sep_cfg.enc_dim, np.random.default_rng(int(rng.integers(2**31)))
        )
        self.film_prelu = nn.PReLU(sep_cfg.enc_dim)
        self.classifier = ChannelClassifier(
            enc_cfg.embed_dim,
            enc_cfg.n_channel_classes,
            np.random.default_rng(int(rng.integers(2**31))),
        )

    def encode_channel(self, aux):
        """Auxiliary mixture batch [M, time] -> channel embedding [M, D].

        The waveform encoder is shared with the separator.
        """
        return self.chan_encoder(self.separator.encode(aux))

    def classify(self, embedding):
        return self.classifier(embedding)

    def resolve_embedding(self, emb_source, batch, aux=None, rng=None):
        """Produce the channel embedding for one of the non-bypass sources."""
        emb_source = EmbeddingSource(emb_source)
        if emb_source in AUX_REQUIRED:
            if aux is None:
                raise ValueError(f"emb_source {emb_source.value!r} requires aux")
            vec = self.encode_channel(aux)
        elif emb_source is EmbeddingSource.ALL_ONES:
            vec = Tensor(np.ones((batch, self.enc_cfg.embed_dim)))
        elif emb_source is EmbeddingSource.GAUSSIAN:
            if rng is None:
                raise ValueError("gaussian emb_source requires an rng")
            vec = Tensor(rng.standard_normal((batch, self.enc_cfg.embed_dim)))
        else:
            raise ValueError(f"no embedding for source {emb_source.value!r}")
        return ChannelEmbedding(vec, emb_source)

    def forward(self, x, emb_source, aux=None, rng=None):
        """Separate ``x`` under the requested embedding source.

        Returns ``(estimates [batch, n_src, time], embedding or None,
        channel logits or None)``; logits are produced only when the
        embedding came from the channel encoder.
        """
        emb_source = EmbeddingSource(emb_source)
        if emb_source is EmbeddingSource.BYPASS:
            return self.separator(x), None, None

        original_time = x.shape[1]
        x = self.separator.pad_input(x)
        features = self.separator.encode(x)
        separated = self.separator.separate(features)

        embedding = self.resolve_embedding(emb_source, x.shape[0], aux=aux, rng=rng)
        conditioned = film_apply(separated, self.film(embedding.vector), self.film_prelu)
        estimates = self.separator.synthesize(features, conditioned, original_time)

        logits = None
        if embedding.source_kind in AUX_REQUIRED:
            logits = self.classify(embedding.vector)
        return estimates, embedding, logits


def model_from_checkpoint(ck):
    """Rebuild a TasNet or CasNet from a loaded checkpoint."""
    sep_cfg = SeparatorConfig(**ck.config["separator"])
    if ck.kind == "tasnet":
        model = TasNet(sep_cfg)
    elif ck.kind == "casnet":
        enc_cfg = ChannelEncoderConfig(**ck.config["chanenc"])
        model = CasNet(sep_cfg, enc_cfg)
    else:
        raise ValueError(f"unknown checkpoint kind {ck.kind!r}")
    model.load_state_dict(ck.arrays)
    return model
