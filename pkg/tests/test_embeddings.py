"""Skip-gram training, lookup and the text save/load format."""

import numpy as np
import pytest

from riskset.corpus import PAD_ID, UNK_ID, RawRecord, Vocab, build_vocab
from riskset.embeddings import (
    EmbeddingMatrix,
    cosine,
    embed_sequence,
    load_embeddings,
    save_embeddings,
    train_skipgram,
    vocab_from_embeddings,
)


def planted_corpus(n_sentences: int = 120, seed: int = 0):
    """Tokens a and b always co-occur inside the window; c appears only in
    unrelated contexts (its filler pool is disjoint from a and b's)."""
    rng = np.random.default_rng(seed)
    pool_ab = [f"g{i}" for i in range(8)]
    pool_c = [f"h{i}" for i in range(8)]
    texts = []
    for _ in range(n_sentences):
        texts.append(f"a b {pool_ab[rng.integers(8)]}")
        texts.append(f"c {pool_c[rng.integers(8)]} {pool_c[rng.integers(8)]}")
    records = [RawRecord("u", 1, texts)]
    vocab = build_vocab(records, max_size=100)
    sequences = [vocab.encode(t.split()) for t in texts]
    return vocab, sequences


class TestSkipgram:
    def test_planted_cooccurrence_margin(self):
        vocab, sequences = planted_corpus()
        emb = train_skipgram(
            sequences, vocab, dim=8, epochs=25, learning_rate=0.1, batch_pairs=64,
            rng=np.random.default_rng(1),
        )
        a, b, c = (emb.values[vocab.token_to_id[t]] for t in "abc")
        assert cosine(a, b) > cosine(a, c)

    def test_reference_configuration_accepted(self):
        vocab, sequences = planted_corpus(n_sentences=20)
        emb = train_skipgram(sequences, vocab, dim=40, window=5, epochs=1, rng=np.random.default_rng(0))
        assert emb.dim == 40

    def test_zero_epochs_is_initialization(self):
        vocab, sequences = planted_corpus(n_sentences=10)
        emb0 = train_skipgram(sequences, vocab, dim=6, epochs=0, rng=np.random.default_rng(9))
        emb0b = train_skipgram(sequences, vocab, dim=6, epochs=0, rng=np.random.default_rng(9))
        # two epochs: the first chunk only moves the (zero-initialized)
        # output matrix, the input table changes from the next chunk on
        emb2 = train_skipgram(sequences, vocab, dim=6, epochs=2, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(emb0.values, emb0b.values)
        assert not np.array_equal(emb0.values, emb2.values)

    def test_deterministic_under_seed(self):
        vocab, sequences = planted_corpus(n_sentences=30)
        a = train_skipgram(sequences, vocab, dim=8, epochs=3, rng=np.random.default_rng(4))
        b = train_skipgram(sequences, vocab, dim=8, epochs=3, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(a.values, b.values)

    def test_pad_row_stays_zero(self):
        vocab, sequences = planted_corpus(n_sentences=40)
        emb = train_skipgram(sequences, vocab, dim=8, epochs=4, rng=np.random.default_rng(2))
        np.testing.assert_array_equal(emb.values[PAD_ID], np.zeros(8))

    def test_rejects_empty_corpus(self):
        vocab = Vocab(["a"])
        with pytest.raises(ValueError):
            train_skipgram([], vocab, dim=4)

    def test_rejects_length_one_only(self):
        vocab = Vocab(["a"])
        with pytest.raises(ValueError):
            train_skipgram([[2]], vocab, dim=4, rng=np.random.default_rng(0))


class TestLookup:
    def test_known_id_row(self, rng):
        vocab = Vocab(["a", "b"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 3)))
        out = embed_sequence(vocab, emb, [2])
        np.testing.assert_array_equal(out[0], emb.values[2])

    def test_oov_token_maps_to_unk_row(self, rng):
        vocab = Vocab(["a"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 3)))
        ids = vocab.encode(["never-seen"])
        out = embed_sequence(vocab, emb, ids)
        np.testing.assert_array_equal(out[0], emb.values[UNK_ID])

    def test_empty_sequence(self, rng):
        vocab = Vocab(["a"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 3)))
        assert embed_sequence(vocab, emb, []).shape == (0, 3)

    def test_out_of_range_id_rejected(self, rng):
        vocab = Vocab(["a"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 3)))
        with pytest.raises(ValueError):
            embed_sequence(vocab, emb, [99])

    def test_matrix_must_cover_vocab(self, rng):
        vocab = Vocab(["a", "b", "c"])
        emb = EmbeddingMatrix(["<pad>", "<unk>"], rng.normal(size=(2, 3)))
        with pytest.raises(ValueError):
            embed_sequence(vocab, emb, [0])


class TestSerialization:
    def test_roundtrip_exact(self, tmp_path, rng):
        vocab = Vocab(["alpha", "beta"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 5)))
        path = tmp_path / "emb.txt"
        save_embeddings(emb, path)
        loaded = load_embeddings(path)
        assert loaded.tokens == emb.tokens
        np.testing.assert_array_equal(loaded.values, emb.values)

    def test_vocab_reconstruction(self, tmp_path, rng):
        vocab = Vocab(["alpha", "beta"])
        emb = EmbeddingMatrix(list(vocab.id_to_token), rng.normal(size=(vocab.size, 2)))
        path = tmp_path / "emb.txt"
        save_embeddings(emb, path)
        rebuilt = vocab_from_embeddings(load_embeddings(path))
        assert rebuilt.token_to_id == vocab.token_to_id

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("not a header\n")
        with pytest.raises(ValueError):
            load_embeddings(path)
