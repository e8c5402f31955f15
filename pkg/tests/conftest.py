import numpy as np
import pytest

from casnet.chanenc import ChannelEncoderConfig
from casnet.corpus import CorpusConfig, build_corpus
from casnet.separator import SeparatorConfig

# Small shapes keep unit tests fast; acceptance tests size their own models.
SMALL_SEP = dict(enc_dim=12, win=8, stride=4, n_blocks=1, chunk_size=8, hidden=8)
SMALL_ENC = dict(n_blocks=2, width=8, embed_dim=6, n_channel_classes=3)


def small_sep_config(**overrides):
    return SeparatorConfig(**{**SMALL_SEP, **overrides})


def small_enc_config(**overrides):
    return ChannelEncoderConfig(**{**SMALL_ENC, **overrides})


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """6/2/3 mixtures over 4 channels (holdout 3), 0.5 s at 8 kHz."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    config = CorpusConfig(
        duration_s=0.5,
        counts={"train": 6, "valid": 2, "test": 3},
        speaker_counts={"train": 4, "valid": 2, "test": 2},
        n_channels=4,
        seed=11,
    )
    manifests = build_corpus(config, root)
    return root, config, manifests


@pytest.fixture
def rng():
    return np.random.default_rng(0)
