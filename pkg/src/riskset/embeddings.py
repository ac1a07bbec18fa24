"""Skip-gram token embeddings and sequence lookup.

Training is skip-gram with negative sampling over the corpus token-id
sequences: every (center, context) pair within the window is a positive
example, negatives are drawn from the unigram distribution raised to a
configurable power. Updates run in fixed-size pair minibatches so the
whole thing stays vectorized while remaining deterministic per seed.

The PAD row is all zeros and frozen: PAD never occurs in training
sequences and has zero sampling probability, so it is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import PAD_ID, PAD_TOKEN, UNK_TOKEN, Vocab
from .tensor import _stable_sigmoid


@dataclass
class EmbeddingMatrix:
    """Vocabulary-indexed table of real vectors, one row per token id."""

    tokens: list[str]
    values: np.ndarray  # (rows, dim)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def lookup(self, ids: Sequence[int]) -> np.ndarray:
        idx = np.asarray(ids, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.rows):
            raise ValueError("token id outside the embedding table")
        return self.values[idx] if idx.size else np.zeros((0, self.dim), dtype=self.values.dtype)


def _pair_arrays(sequences: list[list[int]], window: int) -> tuple[np.ndarray, np.ndarray]:
    centers: list[int] = []
    contexts: list[int] = []
    for seq in sequences:
        n = len(seq)
        for i, center in enumerate(seq):
            lo = max(0, i - window)
            hi = min(n, i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(center)
                    contexts.append(seq[j])
    return np.asarray(centers, dtype=np.intp), np.asarray(contexts, dtype=np.intp)


def train_skipgram(
    sequences: Iterable[Sequence[int]],
    vocab: Vocab,
    dim: int,
    window: int = 5,
    negatives: int = 5,
    epochs: int = 5,
    rng: np.random.Generator | None = None,
    learning_rate: float = 0.05,
    unigram_power: float = 0.75,
    batch_pairs: int = 4096,
) -> EmbeddingMatrix:
    """Train token vectors on token-id sequences and return the input matrix.

    ``epochs=0`` returns the (seeded) random initialization untouched.
    """
    seqs = [list(s) for s in sequences]
    if not seqs or not any(seqs):
        raise ValueError("cannot train embeddings on an empty corpus")
    if dim < 1 or window < 1 or negatives < 0 or epochs < 0:
        raise ValueError("dim and window must be >= 1, negatives and epochs >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)

    rows = vocab.size
    w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(rows, dim))
    w_in[PAD_ID] = 0.0
    w_out = np.zeros((rows, dim))

    centers, contexts = _pair_arrays(seqs, window)
    if centers.size == 0:
        raise ValueError("corpus yields no skip-gram pairs (all sequences of length 1?)")

    counts = np.zeros(rows)
    for seq in seqs:
        np.add.at(counts, np.asarray(seq, dtype=np.intp), 1.0)
    counts[PAD_ID] = 0.0
    weights = counts**unigram_power
    total = weights.sum()
    if total <= 0:
        raise ValueError("degenerate unigram distribution")
    cumulative = np.cumsum(weights / total)

    n_pairs = centers.size
    total_batches = max(1, epochs * ((n_pairs + batch_pairs - 1) // batch_pairs))
    batch_index = 0
    for _epoch in range(epochs):
        for start in range(0, n_pairs, batch_pairs):
            lr = learning_rate * max(1.0 - batch_index / total_batches, 0.1)
            batch_index += 1
            c = centers[start : start + batch_pairs]
            o = contexts[start : start + batch_pairs]
            v = w_in[c]  # (B, d)
            u = w_out[o]  # (B, d)
            pos_err = _stable_sigmoid(np.einsum("bd,bd->b", v, u)) - 1.0  # (B,)
            grad_v = pos_err[:, None] * u
            grad_u = pos_err[:, None] * v
            if negatives > 0:
                neg = np.searchsorted(cumulative, rng.random((c.size, negatives)))
                un = w_out[neg]  # (B, k, d)
                neg_err = _stable_sigmoid(np.einsum("bd,bkd->bk", v, un))  # (B, k)
                grad_v += np.einsum("bk,bkd->bd", neg_err, un)
                grad_un = neg_err[..., None] * v[:, None, :]
                out_idx = np.concatenate([o, neg.reshape(-1)])
                out_grad = np.concatenate([grad_u, grad_un.reshape(-1, dim)])
            else:
                out_idx, out_grad = o, grad_u
            # a frequent token can appear thousands of times in one chunk;
            # average each row's accumulated update so the effective step
            # stays bounded regardless of vocabulary size
            c_counts = np.bincount(c, minlength=rows)[c]
            out_counts = np.bincount(out_idx, minlength=rows)[out_idx]
            np.add.at(w_in, c, -lr * grad_v / c_counts[:, None])
            np.add.at(w_out, out_idx, -lr * out_grad / out_counts[:, None])
            w_in[PAD_ID] = 0.0
    return EmbeddingMatrix(list(vocab.id_to_token), w_in)


def embed_sequence(vocab: Vocab, matrix: EmbeddingMatrix, ids: Sequence[int]) -> np.ndarray:
    """Rows of the matrix for a token-id sequence, in order."""
    if matrix.rows < vocab.size:
        raise ValueError("embedding matrix does not cover the vocabulary")
    return matrix.lookup(ids)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def save_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Text format: a `rows dim` header, then one `token v1 .. vdim` line each."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.rows} {matrix.dim}\n")
        for token, row in zip(matrix.tokens, matrix.values):
            fh.write(token + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path) -> EmbeddingMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed embedding header")
        rows, dim = int(header[0]), int(header[1])
        tokens: list[str] = []
        values = np.zeros((rows, dim))
        for i in range(rows):
            parts = fh.readline().split()
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: malformed embedding row {i}")
            tokens.append(parts[0])
            values[i] = [float(x) for x in parts[1:]]
    if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise ValueError(f"{path}: embedding table must start with the reserved rows")
    return EmbeddingMatrix(tokens, values)


def vocab_from_embeddings(matrix: EmbeddingMatrix) -> Vocab:
    """Rebuild a (count-free) vocabulary from a saved embedding table."""
    return Vocab(matrix.tokens[2:])
