"""Multiplicative LSTM cell and the serial sequence scan.

The cell computes a multiplicative intermediate state from the input and
the previous hidden state, and feeds it to otherwise standard LSTM gates:

    mult   = (x W_mx) * (h W_mh)
    gates  = x W_gx + mult W_gm + b          (input | forget | output | candidate)
    memory = sigmoid(f) * memory + sigmoid(i) * tanh(candidate)
    hidden = sigmoid(o) * tanh(memory)

Weights are stored input-major, i.e. shaped (in_dim, out_dim), so one
batched step over many parallel sequences is a handful of matrix
products on (m, dim) row blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .tensor import (
    ParamStore,
    Tensor,
    concat,
    tensor_sigmoid,
    tensor_tanh,
    uniform_init,
)

GATE_ORDER = ("input", "forget", "output", "candidate")


@dataclass
class RnnState:
    """Hidden and cell-memory activations; rows are parallel sequences."""

    hidden: Tensor
    memory: Tensor


class MlstmCell:
    """Parameter bundle for one multiplicative LSTM layer.

    Initialization is uniform in [-1/sqrt(hidden_dim), +1/sqrt(hidden_dim)]
    with the forget-gate bias raised by ``forget_bias`` for stable early
    training.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        dtype=np.float64,
        forget_bias: float = 1.0,
    ):
        if input_dim < 1 or hidden_dim < 1:
            raise ValueError("input_dim and hidden_dim must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.np_dtype = np.dtype(dtype)
        scale = 1.0 / np.sqrt(hidden_dim)
        h, d = hidden_dim, input_dim
        bias = np.zeros(4 * h, dtype=dtype)
        bias[h : 2 * h] = forget_bias
        self.w_mx = Tensor(uniform_init(rng, (d, h), scale, dtype), requires_grad=True)
        self.w_mh = Tensor(uniform_init(rng, (h, h), scale, dtype), requires_grad=True)
        self.w_gx = Tensor(uniform_init(rng, (d, 4 * h), scale, dtype), requires_grad=True)
        self.w_gm = Tensor(uniform_init(rng, (h, 4 * h), scale, dtype), requires_grad=True)
        self.b_g = Tensor(bias, requires_grad=True)

    def register(self, store: ParamStore, prefix: str) -> None:
        store.add(f"{prefix}.w_mx", self.w_mx)
        store.add(f"{prefix}.w_mh", self.w_mh)
        store.add(f"{prefix}.w_gx", self.w_gx)
        store.add(f"{prefix}.w_gm", self.w_gm)
        store.add(f"{prefix}.b_g", self.b_g)

    def parameter_count(self) -> int:
        d, h = self.input_dim, self.hidden_dim
        return 5 * h * d + 5 * h * h + 4 * h

    def zero_state(self, batch: int) -> RnnState:
        zeros = np.zeros((batch, self.hidden_dim), dtype=self.np_dtype)
        return RnnState(Tensor(zeros), Tensor(zeros.copy()))

    def step(self, x: Tensor, state: RnnState) -> RnnState:
        """Advance one time step for a batch of parallel sequences.

        ``x`` is (m, input_dim), the state fields (m, hidden_dim).
        """
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of shape (m, {self.input_dim}), got {x.shape}"
            )
        h = self.hidden_dim
        mult = (x @ self.w_mx) * (state.hidden @ self.w_mh)
        gates = x @ self.w_gx + mult @ self.w_gm + self.b_g
        gate_in = tensor_sigmoid(gates[:, 0:h])
        gate_forget = tensor_sigmoid(gates[:, h : 2 * h])
        gate_out = tensor_sigmoid(gates[:, 2 * h : 3 * h])
        candidate = tensor_tanh(gates[:, 3 * h : 4 * h])
        memory = gate_forget * state.memory + gate_in * candidate
        hidden = gate_out * tensor_tanh(memory)
        return RnnState(hidden, memory)


class EncodeResult(NamedTuple):
    states: list[RnnState]
    final: RnnState


def encode_sequence(
    cell: MlstmCell,
    inputs: Sequence,
    context_provider: Callable[[int, Tensor, list], Tensor] | None = None,
) -> EncodeResult:
    """Scan one sequence from the zero state, returning every state.

    With a ``context_provider``, each step's input is the token vector
    concatenated with ``context_provider(t, previous_hidden, past_inputs)``
    where ``past_inputs`` lists the token vectors strictly before ``t``;
    the cell's input width must equal token width plus context width.

    An empty input yields no states and the zero state as final.
    """
    state = cell.zero_state(1)
    states: list[RnnState] = []
    past: list = []
    width = None
    for t, raw in enumerate(inputs):
        vec = raw if isinstance(raw, Tensor) else Tensor(np.asarray(raw, dtype=cell.np_dtype))
        if vec.ndim != 1:
            raise ValueError("sequence inputs must be vectors")
        if width is None:
            width = vec.shape[0]
        elif vec.shape[0] != width:
            raise ValueError("ragged input widths in sequence")
        if context_provider is not None:
            ctx = context_provider(t, state.hidden.reshape(cell.hidden_dim), list(past))
            step_in = concat([vec, ctx], axis=0)
            past.append(vec)
        else:
            step_in = vec
        state = cell.step(step_in.reshape((1, step_in.shape[0])), state)
        states.append(RnnState(state.hidden.reshape(cell.hidden_dim), state.memory.reshape(cell.hidden_dim)))
    if not states:
        zero = cell.zero_state(1)
        return EncodeResult([], RnnState(zero.hidden.reshape(cell.hidden_dim), zero.memory.reshape(cell.hidden_dim)))
    return EncodeResult(states, states[-1])
