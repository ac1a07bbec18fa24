"""Class-weighted loss, Adam, the resampling epoch loop and evaluation.

Each epoch re-samples every user's writings (fresh draw of at most
``sample_k`` without replacement), trains in batches with gradients
averaged per batch, then scores the validation split; the snapshot with
the best validation f1 across all epochs wins, earliest epoch on ties.

Evaluation is deterministic: no sampling, every user contributes their
first ``sample_k`` writings in original order, trimmed to ``max_len``.
Degenerate users (no writings) are scored NO_RISK with probability 0.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import NO_RISK, RISK, UserRecord, preprocess_user
from .embeddings import EmbeddingMatrix
from .metrics import Metrics
from .models import ModelBundle, ModelConfig, build_model
from .corpus import Vocab
from .tensor import NonFiniteError, ParamStore, Tensor, backward_pass, clip, log as tensor_log

PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    """Optimizer and loop settings; the model itself lives in ModelConfig."""

    epochs: int = 30
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    seed: int = 0
    class_weighting: str = "inverse"  # "inverse" or "none"
    clip_norm: float = 5.0
    threads: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.threads < 1:
            raise ValueError("batch_size and threads must be positive")
        if self.class_weighting not in ("inverse", "none"):
            raise ValueError("class_weighting must be 'inverse' or 'none'")


class AdamState:
    """First/second moment accumulators mirroring a parameter store."""

    def __init__(self, params: ParamStore):
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.step_count = 0


def class_weights(records: Sequence[UserRecord]) -> dict[int, float]:
    """Inverse-frequency weights normalized so the mean weight over
    examples is 1: weight(c) = N / (2 * count(c))."""
    n_pos = sum(1 for r in records if r.label == RISK)
    n_neg = sum(1 for r in records if r.label == NO_RISK)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("class weighting needs both classes present")
    total = n_pos + n_neg
    return {RISK: total / (2.0 * n_pos), NO_RISK: total / (2.0 * n_neg)}


def weighted_bce(p, label: int, weights: dict[int, float]):
    """Class-weighted binary cross-entropy on a probability.

    Accepts a graph Tensor (differentiable path) or a plain float; the
    probability is clamped to [1e-7, 1-1e-7] before the log.
    """
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    w = weights[label]
    if isinstance(p, Tensor):
        clamped = clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        inner = tensor_log(clamped) if label == 1 else tensor_log(1.0 - clamped)
        return inner * (-w)
    clamped = min(max(float(p), PROB_CLAMP), 1.0 - PROB_CLAMP)
    return -w * (math.log(clamped) if label == 1 else math.log(1.0 - clamped))


def clip_gradient_norm(params: ParamStore, max_norm: float) -> float:
    """Scale all gradient slots so their global L2 norm is at most
    ``max_norm``; returns the pre-clip norm."""
    total = 0.0
    for _, t in params.items():
        total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, t in params.items():
            t.grad *= scale
    return norm


def adam_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place and deterministic."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for name, tensor in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter block '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        tensor.data -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)


@dataclass
class UserPrediction:
    user_id: str
    probability: float
    label: int
    true_label: int | None = None


def predict_records(
    model: ModelBundle,
    records: Sequence[UserRecord],
    max_len: int = 66,
    sample_k: int = 30,
) -> list[UserPrediction]:
    """Deterministic full pass: first-``sample_k`` writings, trimmed."""
    out = []
    for rec in records:
        if rec.is_degenerate:
            out.append(UserPrediction(rec.user_id, 0.0, NO_RISK, rec.label))
            continue
        fixed = preprocess_user(rec, max_len=max_len, sample_k=sample_k, rng=None)
        p = model.predict_proba(fixed)
        out.append(UserPrediction(rec.user_id, p, int(p > 0.5), rec.label))
    return out


def evaluate(
    model: ModelBundle,
    records: Sequence[UserRecord],
    max_len: int = 66,
    sample_k: int = 30,
) -> Metrics:
    if not records:
        raise ValueError("cannot evaluate an empty split")
    preds = predict_records(model, records, max_len=max_len, sample_k=sample_k)
    if any(p.true_label is None for p in preds):
        raise ValueError("evaluation requires labeled records")
    return Metrics.from_predictions([p.label for p in preds], [p.true_label for p in preds])


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; carries the partial log."""

    def __init__(self, message: str, log: list[dict]):
        super().__init__(message)
        self.log = log


@dataclass
class FitResult:
    model: ModelBundle
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = 0.0


def _user_pass(model: ModelBundle, user: UserRecord, weights, wrt) -> tuple[float, list[np.ndarray]]:
    p = model.forward_user(user)
    loss = weighted_bce(p, user.label, weights)
    return loss.item(), backward_pass(loss, wrt)


def fit(
    config: TrainConfig,
    model_config: ModelConfig,
    train: Sequence[UserRecord],
    validation: Sequence[UserRecord],
    embedding: EmbeddingMatrix,
    vocab: Vocab,
) -> FitResult:
    """Train a fresh model and return the best-on-validation snapshot.

    Reproducible bit-for-bit under a fixed seed in 64-bit mode: model
    initialization, epoch shuffling and per-user writing samples all
    derive from ``config.seed``.
    """
    config.validate()
    model_config.validate()
    if not train or not validation:
        raise ValueError("train and validation splits must be nonempty")
    trainable = [r for r in train if not r.is_degenerate]
    if not trainable:
        raise ValueError("no trainable users (all degenerate)")

    init_ss, shuffle_ss, sample_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = build_model(model_config, embedding, vocab, np.random.default_rng(init_ss))
    weights = (
        class_weights(trainable)
        if config.class_weighting == "inverse"
        else {RISK: 1.0, NO_RISK: 1.0}
    )

    adam = AdamState(model.params)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    sample_rng = np.random.default_rng(sample_ss)
    wrt = model.params.tensors()

    result = FitResult(model=model)
    best_state = model.params.state_arrays()
    best_f1 = -1.0
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = shuffle_rng.permutation(len(trainable))
            loss_sum = 0.0
            for start in range(0, len(order), config.batch_size):
                batch_idx = order[start : start + config.batch_size]
                # sampling consumes the stream in a fixed order, before any
                # parallel dispatch, so thread count cannot change the draw
                batch = [
                    preprocess_user(trainable[i], model_config.max_len, model_config.sample_k, sample_rng)
                    for i in batch_idx
                ]
                model.params.zero_grads()
                if pool is not None:
                    passes = list(pool.map(lambda u: _user_pass(model, u, weights, wrt), batch))
                else:
                    passes = [_user_pass(model, u, weights, wrt) for u in batch]
                scale = 1.0 / len(batch)
                for loss_value, grads in passes:
                    if not math.isfinite(loss_value):
                        raise NonFiniteError("non-finite training loss")
                    loss_sum += loss_value
                    model.params.accumulate(grads, scale=scale)
                clip_gradient_norm(model.params, config.clip_norm)
                adam_step(model.params, model.params.gradients(), adam, config)
            val = evaluate(model, validation, model_config.max_len, model_config.sample_k)
            entry = {
                "epoch": epoch,
                "train_loss": loss_sum / len(order),
                "val_precision": val.precision,
                "val_recall": val.recall,
                "val_f1": val.f1,
            }
            result.log.append(entry)
            if val.f1 > best_f1:
                best_f1 = val.f1
                result.best_epoch = epoch
                result.best_f1 = val.f1
                best_state = model.params.state_arrays()
    except NonFiniteError as err:
        raise TrainingDiverged(f"training diverged: {err}", result.log) from err
    finally:
        if pool is not None:
            pool.shutdown()

    model.params.load_state(best_state)
    return result
