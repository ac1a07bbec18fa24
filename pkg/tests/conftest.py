import numpy as np
import pytest

from riskset import EmbeddingMatrix, UserRecord, Vocab


def make_vocab(n_tokens: int = 10) -> Vocab:
    return Vocab([f"t{i}" for i in range(n_tokens)])


def make_embedding(vocab: Vocab, dim: int, rng: np.random.Generator) -> EmbeddingMatrix:
    values = rng.normal(0.0, 0.5, size=(vocab.size, dim))
    values[0] = 0.0  # PAD row
    return EmbeddingMatrix(list(vocab.id_to_token), values)


def random_user(
    rng: np.random.Generator,
    vocab: Vocab,
    n_writings: int,
    max_tokens: int = 6,
    label: int = 1,
    user_id: str = "u",
) -> UserRecord:
    writings = []
    for _ in range(n_writings):
        length = int(rng.integers(1, max_tokens + 1))
        writings.append([int(t) for t in rng.integers(2, vocab.size, size=length)])
    return UserRecord(user_id, label, writings)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
