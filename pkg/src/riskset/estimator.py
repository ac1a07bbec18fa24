"""scikit-learn compatible front end for the set-of-writings classifiers.

``DocumentSetClassifier`` follows the estimator contract: constructor
parameters are stored verbatim, learned state lands in trailing-underscore
attributes, and ``get_params``/``set_params``/``clone`` work as usual, so
the model drops into pipelines and searches. ``X`` is a list of users,
each a list of writing strings; ``y`` holds exactly two label values and
the larger one (by sort order) is treated as the positive class, which
makes both ``{0, 1}`` and ``{"NO_RISK", "RISK"}`` do the right thing.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .corpus import NO_RISK, RISK, RawRecord, UserRecord, build_vocab, encode_corpus
from .embeddings import train_skipgram
from .models import ModelConfig
from .training import TrainConfig, fit, predict_records


def _as_user_lists(X) -> list[list[str]]:
    users = []
    for i, user in enumerate(X):
        if isinstance(user, str):
            raise ValueError(f"X[{i}] is a single string; each user must be a list of writings")
        writings = list(user)
        if not all(isinstance(w, str) for w in writings):
            raise ValueError(f"X[{i}] must contain writing strings")
        users.append(writings)
    return users


class DocumentSetClassifier(BaseEstimator, ClassifierMixin):
    """Binary classifier over a *set* of documents per sample.

    Parameters mirror the library configuration: ``model`` picks the
    aggregation strategy (``lida``, ``cida``, ``ida`` or ``iida``),
    ``attention`` the scoring variant for the attentive kinds. Token
    vectors are pretrained with skip-gram on the training writings and
    kept frozen unless ``fine_tune_embeddings`` is set.
    """

    def __init__(
        self,
        model: str = "ida",
        embed_dim: int = 20,
        hidden_dim: int = 80,
        attention: str = "general",
        attn_dim: int | None = None,
        intra_query: str = "previous",
        vocab_size: int = 40000,
        max_len: int = 66,
        sample_k: int = 30,
        epochs: int = 30,
        learning_rate: float = 1e-3,
        batch_size: int = 16,
        clip_norm: float = 5.0,
        class_weighting: str = "inverse",
        validation_fraction: float = 0.1,
        skipgram_epochs: int = 5,
        skipgram_window: int = 5,
        skipgram_negatives: int = 5,
        fine_tune_embeddings: bool = False,
        dtype: str = "float64",
        threads: int = 1,
        seed: int = 0,
    ):
        self.model = model
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attention = attention
        self.attn_dim = attn_dim
        self.intra_query = intra_query
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.sample_k = sample_k
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.class_weighting = class_weighting
        self.validation_fraction = validation_fraction
        self.skipgram_epochs = skipgram_epochs
        self.skipgram_window = skipgram_window
        self.skipgram_negatives = skipgram_negatives
        self.fine_tune_embeddings = fine_tune_embeddings
        self.dtype = dtype
        self.threads = threads
        self.seed = seed

    # -- fitting -----------------------------------------------------------------

    def _validation_split(
        self, records: list[UserRecord], rng: np.random.Generator
    ) -> tuple[list[UserRecord], list[UserRecord]]:
        train: list[UserRecord] = []
        validation: list[UserRecord] = []
        for label in (RISK, NO_RISK):
            group = [r for r in records if r.label == label]
            order = rng.permutation(len(group))
            n_valid = round(len(group) * self.validation_fraction)
            validation.extend(group[i] for i in order[:n_valid])
            train.extend(group[i] for i in order[n_valid:])
        if not validation:
            raise ValueError(
                "validation_fraction leaves no validation users; increase it or add data"
            )
        return train, validation

    def fit(self, X, y):
        users = _as_user_lists(X)
        y = np.asarray(y)
        if len(users) != len(y):
            raise ValueError("X and y disagree in length")
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise ValueError("exactly two classes are required")
        positive = self.classes_[1]

        records = [
            RawRecord(f"u{i}", RISK if label == positive else NO_RISK, texts)
            for i, (texts, label) in enumerate(zip(users, y))
        ]
        vocab = build_vocab(records, max_size=self.vocab_size)
        encoded = encode_corpus(records, vocab)

        split_ss, skipgram_ss = np.random.SeedSequence(self.seed).spawn(2)
        train, validation = self._validation_split(
            [r for r in encoded if not r.is_degenerate], np.random.default_rng(split_ss)
        )
        embedding = train_skipgram(
            [w for r in encoded for w in r.writings],
            vocab,
            dim=self.embed_dim,
            window=self.skipgram_window,
            negatives=self.skipgram_negatives,
            epochs=self.skipgram_epochs,
            rng=np.random.default_rng(skipgram_ss),
        )
        model_config = ModelConfig(
            kind=self.model,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            attention=self.attention,
            attn_dim=self.attn_dim,
            intra_query=self.intra_query,
            fine_tune_embeddings=self.fine_tune_embeddings,
            dtype=self.dtype,
            max_len=self.max_len,
            sample_k=self.sample_k,
        )
        train_config = TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
            class_weighting=self.class_weighting,
            clip_norm=self.clip_norm,
            threads=self.threads,
        )
        result = fit(train_config, model_config, train, validation, embedding, vocab)
        self.model_ = result.model
        self.vocab_ = vocab
        self.embedding_ = embedding
        self.history_ = result.log
        self.best_epoch_ = result.best_epoch
        self.best_validation_f1_ = result.best_f1
        return self

    # -- inference ---------------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("this DocumentSetClassifier is not fitted yet; call fit first")

    def _encode(self, X) -> list[UserRecord]:
        users = _as_user_lists(X)
        records = [RawRecord(f"q{i}", None, texts) for i, texts in enumerate(users)]
        return encode_corpus(records, self.vocab_)

    def predict_proba(self, X) -> np.ndarray:
        """(n, 2) column-stochastic matrix ordered like ``classes_``."""
        self._check_fitted()
        preds = predict_records(self.model_, self._encode(X), self.max_len, self.sample_k)
        positive = np.array([p.probability for p in preds])
        return np.column_stack([1.0 - positive, positive])

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        positive = self.predict_proba(X)[:, 1]
        return self.classes_[(positive > 0.5).astype(int)]
