import pytest
import torch

from csd.corpus import synthesize_corpus
from csd.model import (
    ClassifierModel,
    Decoder,
    ModelBundle,
    ModelConfig,
    TransformerEncoder,
    Vocabulary,
)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synthesize_corpus(21, 24)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ModelConfig(d_model=32, n_heads=4, cnn_channels=8, max_len=128)


@pytest.fixture(scope="session")
def tiny_bundle(tiny_corpus, tiny_cfg):
    """Randomly initialized but fully wired bundle; deterministic weights."""
    torch.manual_seed(1234)
    vocab = Vocabulary.build(tiny_corpus)
    classifiers = {
        taxonomy: ClassifierModel(tiny_cfg, vocab, taxonomy)
        for taxonomy in ("emotion", "cs", "strategy")
    }
    bundle = ModelBundle(
        cfg=tiny_cfg,
        vocab=vocab,
        classifiers=classifiers,
        extra_encoder=TransformerEncoder(tiny_cfg, len(vocab), vocab.pad_id),
        decoder=Decoder(tiny_cfg, len(vocab), vocab.pad_id),
        metadata={"ablation": "full", "version": "test"},
    )
    return bundle.eval()
