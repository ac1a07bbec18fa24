"""Energy scoring, softmax weighting and weighted aggregation.

Scorers map a (query, key) state pair to a scalar energy. Five variants
are available, selected by configuration key:

* ``general``  - query^T W key, one learned bilinear matrix (the default)
* ``dot``      - plain inner product, no parameters (dims must match)
* ``location`` - learned function of the query alone; every key gets the
                 same energy, so the weighting degenerates to uniform
* ``additive`` - v^T tanh(W_q query + W_k key), two matrices plus the
                 combining vector
* ``cosine``   - cosine similarity, no parameters; zero vectors score 0
                 by convention (zero states occur at initialization)

The intra-document scorer compares a writing's previous hidden state to
its past token inputs to produce a context vector (self-attention).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import (
    ParamStore,
    Tensor,
    matmul,
    softmax,
    stack,
    tensor_softmax,
    tensor_sum,
    sqrt as tensor_sqrt,
    uniform_init,
)

VARIANTS = ("general", "dot", "location", "additive", "cosine")


class AttentionScorer:
    """Base scorer: subclasses implement batched energies over keys."""

    variant: str = ""

    def __init__(self, query_dim: int, key_dim: int):
        self.query_dim = query_dim
        self.key_dim = key_dim

    def register(self, store: ParamStore, prefix: str) -> None:  # no params by default
        pass

    def parameter_count(self) -> int:
        return 0

    def energies(self, query: Tensor, keys: Tensor) -> Tensor:
        """Energy per key row; ``query`` is (query_dim,), ``keys`` (m, key_dim)."""
        raise NotImplementedError

    def _validate(self, query: Tensor, keys: Tensor) -> None:
        if query.ndim != 1 or query.shape[0] != self.query_dim:
            raise ValueError(f"query must have width {self.query_dim}")
        if keys.ndim != 2 or keys.shape[1] != self.key_dim:
            raise ValueError(f"keys must be (m, {self.key_dim})")


class GeneralScorer(AttentionScorer):
    """Learned bilinear compatibility between the two state spaces."""

    variant = "general"

    def __init__(self, query_dim, key_dim, rng, dtype=np.float64):
        super().__init__(query_dim, key_dim)
        scale = 1.0 / math.sqrt(max(query_dim, key_dim))
        self.weight = Tensor(uniform_init(rng, (query_dim, key_dim), scale, dtype), requires_grad=True)

    def register(self, store, prefix):
        store.add(f"{prefix}.weight", self.weight)

    def parameter_count(self):
        return self.query_dim * self.key_dim

    def energies(self, query, keys):
        self._validate(query, keys)
        return keys @ (query @ self.weight)


class DotScorer(AttentionScorer):
    variant = "dot"

    def __init__(self, query_dim, key_dim):
        if query_dim != key_dim:
            raise ValueError("dot scoring requires equal query and key widths")
        super().__init__(query_dim, key_dim)

    def energies(self, query, keys):
        self._validate(query, keys)
        return keys @ query


class LocationScorer(AttentionScorer):
    """Scores from the query alone (a learned row vector); keys are ignored,
    so all energies at a step are equal and the weights come out uniform."""

    variant = "location"

    def __init__(self, query_dim, key_dim, rng, dtype=np.float64):
        super().__init__(query_dim, key_dim)
        scale = 1.0 / math.sqrt(query_dim)
        self.weight = Tensor(uniform_init(rng, (query_dim,), scale, dtype), requires_grad=True)

    def register(self, store, prefix):
        store.add(f"{prefix}.weight", self.weight)

    def parameter_count(self):
        return self.query_dim

    def energies(self, query, keys):
        self._validate(query, keys)
        e = self.weight @ query  # 0-d
        ones = Tensor(np.ones(keys.shape[0], dtype=keys.dtype))
        return ones * e


class AdditiveScorer(AttentionScorer):
    """Concatenation-style scoring: combine affine images of both states
    through tanh, then project to a scalar with a learned vector. Two
    distinct matrices (one per state space) keep the shapes consistent
    when the two hidden widths differ."""

    variant = "additive"

    def __init__(self, query_dim, key_dim, rng, attn_dim=None, dtype=np.float64):
        super().__init__(query_dim, key_dim)
        self.attn_dim = attn_dim or query_dim
        scale = 1.0 / math.sqrt(self.attn_dim)
        self.w_query = Tensor(uniform_init(rng, (query_dim, self.attn_dim), scale, dtype), requires_grad=True)
        self.w_key = Tensor(uniform_init(rng, (key_dim, self.attn_dim), scale, dtype), requires_grad=True)
        self.v = Tensor(uniform_init(rng, (self.attn_dim,), scale, dtype), requires_grad=True)

    def register(self, store, prefix):
        store.add(f"{prefix}.w_query", self.w_query)
        store.add(f"{prefix}.w_key", self.w_key)
        store.add(f"{prefix}.v", self.v)

    def parameter_count(self):
        return self.attn_dim * (self.query_dim + self.key_dim + 1)

    def energies(self, query, keys):
        from .tensor import tensor_tanh

        self._validate(query, keys)
        combined = tensor_tanh(keys @ self.w_key + query @ self.w_query)
        return combined @ self.v


class CosineScorer(AttentionScorer):
    variant = "cosine"

    def __init__(self, query_dim, key_dim):
        if query_dim != key_dim:
            raise ValueError("cosine scoring requires equal query and key widths")
        super().__init__(query_dim, key_dim)

    def energies(self, query, keys):
        self._validate(query, keys)
        m = keys.shape[0]
        if float(np.linalg.norm(query.data)) == 0.0:
            return Tensor(np.zeros(m, dtype=keys.dtype))
        norms_sq = tensor_sum(keys * keys, axis=1)  # (m,)
        nonzero = norms_sq.data > 0.0
        # pad zero norms to 1 so the division stays finite; those rows are
        # masked to the 0-energy convention afterwards
        padding = Tensor(np.where(nonzero, 0.0, 1.0).astype(keys.dtype))
        key_norms = tensor_sqrt(norms_sq + padding)
        query_norm = tensor_sqrt(tensor_sum(query * query))
        dots = keys @ query
        mask = Tensor(nonzero.astype(keys.dtype))
        return dots / (key_norms * query_norm) * mask


def make_scorer(
    variant: str,
    query_dim: int,
    key_dim: int,
    rng: np.random.Generator | None = None,
    attn_dim: int | None = None,
    dtype=np.float64,
) -> AttentionScorer:
    if variant == "general":
        return GeneralScorer(query_dim, key_dim, rng, dtype)
    if variant == "dot":
        return DotScorer(query_dim, key_dim)
    if variant == "location":
        return LocationScorer(query_dim, key_dim, rng, dtype)
    if variant == "additive":
        return AdditiveScorer(query_dim, key_dim, rng, attn_dim, dtype)
    if variant == "cosine":
        return CosineScorer(query_dim, key_dim)
    raise ValueError(f"unknown attention variant {variant!r}; expected one of {VARIANTS}")


def score(scorer: AttentionScorer, query, key) -> float:
    """Energy between one state pair (the scalar form of the batched path)."""
    q = query if isinstance(query, Tensor) else Tensor(np.asarray(query, dtype=np.float64))
    k = key if isinstance(key, Tensor) else Tensor(np.asarray(key, dtype=np.float64))
    e = scorer.energies(q, k.reshape((1, k.shape[0])))
    return float(e.data[0])


def attend(energies):
    """Softmax weights over writings; accepts a Tensor or a plain vector."""
    if isinstance(energies, Tensor):
        if energies.ndim != 1 or energies.size == 0:
            raise ValueError("attend requires a nonempty 1-D energy vector")
        return tensor_softmax(energies, axis=0)
    return softmax(energies)


def weighted_sum(weights, vectors):
    """Convex combination of equal-width vectors: sum_j weights[j] * vectors[j]."""
    if isinstance(weights, Tensor) or isinstance(vectors, Tensor):
        w = weights if isinstance(weights, Tensor) else Tensor(np.asarray(weights, dtype=np.float64))
        vs = vectors if isinstance(vectors, Tensor) else stack([Tensor(np.asarray(v, dtype=np.float64)) for v in vectors], axis=0)
        if w.shape[0] != vs.shape[0]:
            raise ValueError("weights and vectors disagree in count")
        if abs(float(w.data.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must sum to 1")
        return w @ vs
    w = np.asarray(weights, dtype=np.float64)
    vs = np.asarray(vectors, dtype=np.float64)
    if w.ndim != 1 or vs.ndim != 2 or w.shape[0] != vs.shape[0]:
        raise ValueError("weights and vectors disagree in count")
    if abs(math.fsum(w) - 1.0) > 1e-6:
        raise ValueError("weights must sum to 1")
    return w @ vs


class IntraScorer:
    """Self-attention over a writing's own past token inputs.

    The energy between the writing's previous hidden state h and a past
    input x is ``h W x`` with W shaped (hidden_dim, input_dim).
    """

    def __init__(self, hidden_dim: int, input_dim: int, rng, dtype=np.float64):
        self.hidden_dim = hidden_dim
        self.input_dim = input_dim
        scale = 1.0 / math.sqrt(hidden_dim)
        self.weight = Tensor(uniform_init(rng, (hidden_dim, input_dim), scale, dtype), requires_grad=True)

    def register(self, store: ParamStore, prefix: str) -> None:
        store.add(f"{prefix}.weight", self.weight)

    def parameter_count(self) -> int:
        return self.hidden_dim * self.input_dim


def context_vector(scorer: IntraScorer, hidden_prev, past_inputs: Sequence) -> Tensor:
    """Softmax-weighted sum of strictly-past token inputs for one writing.

    ``hidden_prev`` is the hidden state entering the current step. An
    empty past yields the zero vector (the first step has no context).
    """
    h = hidden_prev if isinstance(hidden_prev, Tensor) else Tensor(np.asarray(hidden_prev, dtype=np.float64))
    if h.ndim != 1 or h.shape[0] != scorer.hidden_dim:
        raise ValueError(f"hidden state must have width {scorer.hidden_dim}")
    if len(past_inputs) == 0:
        return Tensor(np.zeros(scorer.input_dim, dtype=h.dtype))
    xs = stack(
        [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in past_inputs],
        axis=0,
    )  # (s, input_dim)
    if xs.shape[1] != scorer.input_dim:
        raise ValueError(f"past inputs must have width {scorer.input_dim}")
    energies = xs @ (h @ scorer.weight)  # (s,)
    weights = tensor_softmax(energies, axis=0)
    return weights @ xs
