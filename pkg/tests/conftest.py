import numpy as np
import pytest
from hypothesis import settings

from vqrim.data import SyntheticSpec, generate_synthetic
from vqrim.pipeline import TrainConfig

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**overrides):
    """Small model that trains in well under a second."""
    base = dict(epochs=4, pretrain_epochs=4, batch_size=16, num_embeddings=8, embedding_dim=4,
                encoder_hidden=16, disc_hidden=8, num_classes=4, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def desk_config(seed=0, **overrides):
    """Reduced-width configuration used for the end-to-end recovery checks."""
    base = dict(pretrain_epochs=60, epochs=60, encoder_hidden=128, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_data():
    return generate_synthetic(SyntheticSpec(n_clusters=3, samples_per_cluster=20, latent_dim=3,
                                            output_dim=12, seed=1)).zscore()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
