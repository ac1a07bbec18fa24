"""Finite-difference gradient oracle and the model-level gradient check.

The oracle perturbs every scalar parameter by +/-eps and takes the central
difference; it never touches the reverse-mode machinery, which is exactly
why disagreement between the two routes is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import ParamStore, backward_pass

REL_ERR_FLOOR = 1e-8  # denominator floor so near-zero gradients cannot blow up


def finite_difference_gradient(
    loss_fn: Callable[[ParamStore], float],
    params: ParamStore,
    eps: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient estimate per scalar parameter.

    ``loss_fn`` must be deterministic for fixed inputs; parameter data is
    perturbed in place and restored exactly afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    estimates: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        flat = tensor.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = loss_fn(params)
            flat[i] = saved - eps
            down = loss_fn(params)
            flat[i] = saved
            if not (math.isfinite(up) and math.isfinite(down)):
                raise ValueError(f"non-finite loss while perturbing '{name}'")
            grad[i] = (up - down) / (2.0 * eps)
        estimates[name] = grad.reshape(tensor.data.shape)
    return estimates


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max over elements of |a-b| / max(|a|, |b|, floor)."""
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_ERR_FLOOR)
    return float(np.max(np.abs(a - b) / denom))


@dataclass
class GradientCheckReport:
    tolerance: float
    eps: float
    block_errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_relative_error(self) -> float:
        return max(self.block_errors.values()) if self.block_errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def failing_blocks(self) -> list[str]:
        return [n for n, e in self.block_errors.items() if e >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_relative_error:.3e} tol={self.tolerance:.1e}"


def compare_gradients(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    tolerance: float,
    eps: float = 1e-5,
) -> GradientCheckReport:
    if set(analytic) != set(numeric):
        raise ValueError("analytic and numeric gradient blocks do not match")
    report = GradientCheckReport(tolerance=tolerance, eps=eps)
    for name in analytic:
        report.block_errors[name] = relative_error(analytic[name], numeric[name])
    return report


def gradient_check(model, batch, tolerance: float = 1e-4, eps: float = 3e-4) -> GradientCheckReport:
    """Compare reverse-mode gradients of the batch loss against central
    finite differences, block by block.

    ``batch`` holds already-preprocessed user records so both routes see
    identical writings; stochastic resampling must not happen here. The
    model has to be in 64-bit mode, otherwise the oracle itself is noise.

    The default step is larger than the per-operation checks use: the
    loss is O(1), so at eps=1e-5 the difference quotient's rounding
    noise (about ulp(loss)/2eps ~ 5e-12) already exceeds the tolerance
    on coordinates whose true gradient sits under the relative-error
    floor. eps=3e-4 keeps that noise near 1e-13 while central-difference
    truncation stays orders of magnitude below the tolerance.
    """
    from .training import weighted_bce  # deferred: training builds on models

    if model.config.dtype != "float64":
        raise ValueError("gradient_check requires a model in 64-bit mode")
    if not batch:
        raise ValueError("gradient_check requires a nonempty batch")

    flat_weights = {0: 1.0, 1: 1.0}

    def loss_fn(_params: ParamStore) -> float:
        total = 0.0
        for user in batch:
            p = model.forward_user(user)
            total += weighted_bce(p, user.label, flat_weights).item()
        return total / len(batch)

    params = model.params
    params.zero_grads()
    wrt = params.tensors()
    for user in batch:
        p = model.forward_user(user)
        loss = weighted_bce(p, user.label, flat_weights)
        params.accumulate(backward_pass(loss, wrt), scale=1.0 / len(batch))
    analytic = {n: g.copy() for n, g in params.gradients().items()}
    params.zero_grads()

    numeric = finite_difference_gradient(loss_fn, params, eps=eps)
    return compare_gradients(analytic, numeric, tolerance, eps=eps)


def tiny_verification_setup(kind: str, seed: int = 0, **config_overrides):
    """A deliberately small model plus a fixed two-user batch, the setup
    every gradient check runs on: embedding width 4, hidden width 6,
    writings of at most 5 tokens."""
    from .corpus import NO_RISK, RISK, UserRecord, Vocab
    from .embeddings import EmbeddingMatrix
    from .models import ModelConfig, build_model

    rng = np.random.default_rng(seed)
    tokens = [f"t{i}" for i in range(10)]
    vocab = Vocab(tokens)
    embedding = EmbeddingMatrix(
        list(vocab.id_to_token), rng.normal(0.0, 0.5, size=(vocab.size, 4))
    )
    embedding.values[0] = 0.0  # PAD row
    settings = dict(kind=kind, embed_dim=4, hidden_dim=6, dtype="float64")
    settings.update(config_overrides)
    model = build_model(ModelConfig(**settings), embedding, vocab, rng)

    def writing():
        length = int(rng.integers(2, 6))
        return [int(t) for t in rng.integers(2, vocab.size, size=length)]

    batch = [
        UserRecord("check-a", RISK, [writing() for _ in range(2)]),
        UserRecord("check-b", NO_RISK, [writing() for _ in range(3)]),
    ]
    return model, batch


def run_model_gradient_checks(
    tolerance: float = 1e-4,
    eps: float = 3e-4,
    seed: int = 0,
) -> dict[str, GradientCheckReport]:
    """Gradient-check every model kind on its tiny setup."""
    from .models import KINDS

    reports = {}
    for kind in KINDS:
        model, batch = tiny_verification_setup(kind, seed=seed)
        reports[kind] = gradient_check(model, batch, tolerance=tolerance, eps=eps)
    return reports
