import pytest
import numpy as np
from faker import Faker
from src.config import Config, EncoderConfig, ContrastiveConfig
from src.scoring import TokenMatrix, PooledVector, mean_pool

fake = Faker()


@pytest.fixture(scope="session")
def config():
    """Global configuration fixture (defaults, no environment overrides)."""
    return Config(load_env=False)


@pytest.fixture
def encoder_config():
    """Small encoder configuration."""
    return EncoderConfig(dim=32, seed=7, max_tokens=64)


@pytest.fixture
def contrastive_config():
    """Mining settings used throughout the contrastive tests."""
    return ContrastiveConfig(tau=0.02, k_negatives=2, percentage_threshold=0.95)


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(20250601)


@pytest.fixture
def random_matrix(rng):
    """Factory for random normalized token matrices."""
    def _make(rows, dim, id="m", normalize=True):
        return TokenMatrix.from_rows(id, rng.standard_normal((rows, dim)), normalize=normalize)
    return _make


@pytest.fixture
def random_pooled(random_matrix):
    """Factory for random pooled vectors."""
    def _make(dim, id="p"):
        return mean_pool(random_matrix(1, dim, id=id))
    return _make


@pytest.fixture
def text_corpus():
    """Seeded Faker sentences as an id<TAB>text corpus."""
    Faker.seed(1234)
    return [f"doc{i:03d}\t{fake.sentence(nb_words=8)}" for i in range(12)]
