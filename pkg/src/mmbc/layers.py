"""Network building blocks: dense layers, LSTM cell, bi-directional LSTM
encoding, attention pooling and the MLP policy head.

Every function here is pure over its parameter records and works in two
ranks: vectors (one sample) and row batches (leading batch axis). The
bi-LSTM and attention additionally come in a batched flavour that runs a
whole same-length trajectory batch on one tape, which is what the
training loop uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, ShapeMismatchError


@dataclass
class DenseParams:
    weight: Tensor  # [out, in]
    bias: Tensor    # [out]

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class LstmParams:
    """Gate parameters over the concatenated [input, previous hidden].

    ``weight`` is ``[4H, in+H]`` and ``bias`` ``[4H]``, gate blocks in the
    order input, forget, candidate, output.
    """

    weight: Tensor
    bias: Tensor
    hidden: int

    @property
    def n_in(self) -> int:
        return self.weight.shape[1] - self.hidden


@dataclass
class AttentionParams:
    projection: DenseParams  # hidden -> query width
    query: Tensor            # [query width]


@dataclass
class PolicyParams:
    """MLP layers; tanh between layers, linear output."""

    layers: list  # list[DenseParams]

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> DenseParams:
    bound = 1.0 / np.sqrt(n_in)
    return DenseParams(
        weight=ag.parameter(rng.uniform(-bound, bound, size=(n_out, n_in))),
        bias=ag.parameter(np.zeros(n_out)),
    )


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int) -> LstmParams:
    bound = 1.0 / np.sqrt(n_in + hidden)
    return LstmParams(
        weight=ag.parameter(rng.uniform(-bound, bound, size=(4 * hidden, n_in + hidden))),
        bias=ag.parameter(np.zeros(4 * hidden)),
        hidden=hidden,
    )


def init_attention(rng: np.random.Generator, hidden: int, query_dim: int) -> AttentionParams:
    # Small query keeps early attention weights near uniform.
    return AttentionParams(
        projection=init_dense(rng, hidden, query_dim),
        query=ag.parameter(0.1 * rng.standard_normal(query_dim)),
    )


def init_policy(rng: np.random.Generator, n_in: int, n_out: int,
                hidden: Sequence[int] = (64, 64)) -> PolicyParams:
    widths = [n_in, *hidden, n_out]
    return PolicyParams(
        layers=[init_dense(rng, widths[i], widths[i + 1])
                for i in range(len(widths) - 1)]
    )


def dense(x: Tensor, p: DenseParams) -> Tensor:
    return ag.linear(x, p.weight, p.bias)


def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   p: LstmParams) -> tuple[Tensor, Tensor]:
    """Standard LSTM gate equations; accepts vectors or row batches."""
    hidden = p.hidden
    if x.shape[-1] != p.n_in or h_prev.shape[-1] != hidden \
            or c_prev.shape[-1] != hidden or x.ndim != h_prev.ndim:
        raise ShapeMismatchError(
            f"lstm_cell_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} "
            f"vs params (in={p.n_in}, hidden={hidden})"
        )
    axis = x.ndim - 1
    gates = dense(ag.concat((x, h_prev), axis=axis), p)
    in_gate = ag.sigmoid(ag.narrow(gates, axis, 0, hidden))
    forget_gate = ag.sigmoid(ag.narrow(gates, axis, hidden, hidden))
    candidate = ag.tanh(ag.narrow(gates, axis, 2 * hidden, hidden))
    out_gate = ag.sigmoid(ag.narrow(gates, axis, 3 * hidden, hidden))
    c = ag.add(ag.mul(forget_gate, c_prev), ag.mul(in_gate, candidate))
    h = ag.mul(out_gate, ag.tanh(c))
    return h, c


def _lstm_run(inputs: Sequence[Tensor], p: LstmParams, reverse: bool) -> list:
    batch_shape = (p.hidden,) if inputs[0].ndim == 1 else (inputs[0].shape[0], p.hidden)
    h = ag.constant(np.zeros(batch_shape))
    c = ag.constant(np.zeros(batch_shape))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    states: list = [None] * len(inputs)
    for t in order:
        h, c = lstm_cell_step(inputs[t], h, c, p)
        states[t] = h
    return states


def bilstm_encode_steps(inputs: Sequence[Tensor], fwd: LstmParams,
                        bwd: LstmParams) -> list:
    """Element-wise sum of forward and backward LSTM states per step.

    ``inputs`` is one tensor per step (vector or ``[B, in]`` rows); both
    directions start from zero states.
    """
    if len(inputs) == 0:
        raise ContractError("bilstm_encode: empty trajectory")
    if fwd.hidden != bwd.hidden:
        raise ShapeMismatchError(
            f"direction widths differ: {fwd.hidden} vs {bwd.hidden}"
        )
    forward = _lstm_run(inputs, fwd, reverse=False)
    backwards = _lstm_run(inputs, bwd, reverse=True)
    return [ag.add(f, b) for f, b in zip(forward, backwards)]


def bilstm_encode(traj, fwd: LstmParams, bwd: LstmParams) -> list:
    """Encode one trajectory; per-step input is the [state, action] concat."""
    inputs = [ag.constant(row) for row in traj.step_inputs()]
    return bilstm_encode_steps(inputs, fwd, bwd)


def attention_pool(states: Sequence[Tensor], p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Learned softmax pooling over per-step vectors.

    Returns the pooled representation and the attention weights (which sum
    to one).
    """
    if len(states) == 0:
        raise ContractError("attention_pool: empty sequence")
    stacked = ag.stack(states, axis=0)                     # [T, H]
    keys = ag.tanh(dense(stacked, p.projection))           # [T, d]
    weights = ag.softmax(ag.matmul(keys, p.query))         # [T]
    pooled = ag.matmul(weights, stacked)                   # [H]
    return pooled, weights


def attention_pool_batch(states: Sequence[Tensor], p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Batched attention pooling; ``states`` holds ``[B, H]`` rows per step.

    Returns pooled ``[B, H]`` and weights ``[B, T]``.
    """
    if len(states) == 0:
        raise ContractError("attention_pool: empty sequence")
    steps = len(states)
    batch = states[0].shape[0]
    stacked = ag.concat(states, axis=0)                    # [T*B, H] time-major
    keys = ag.tanh(dense(stacked, p.projection))           # [T*B, d]
    scores = ag.matmul(keys, p.query)                      # [T*B]
    weights = ag.softmax(ag.transpose(ag.reshape(scores, (steps, batch))))
    pooled = ag.attention_combine(stacked, weights)        # [B, H]
    return pooled, weights


def policy_apply(x: Tensor, p: PolicyParams) -> Tensor:
    """MLP with tanh hidden activations and a linear output layer."""
    for layer in p.layers[:-1]:
        x = ag.tanh(dense(x, layer))
    return dense(x, p.layers[-1])


def policy_forward(state: Tensor, code: Tensor, p: PolicyParams) -> Tensor:
    """Action mean for a state and a latent code (vector or row batches)."""
    if state.ndim != code.ndim:
        raise ShapeMismatchError(
            f"policy_forward: state rank {state.ndim} vs code rank {code.ndim}"
        )
    x = ag.concat((state, code), axis=state.ndim - 1)
    if x.shape[-1] != p.n_in:
        raise ShapeMismatchError(
            f"policy_forward: input width {x.shape[-1]}, policy expects {p.n_in}"
        )
    return policy_apply(x, p)
