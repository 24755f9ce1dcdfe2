"""Adam optimizer over lists of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autograd import Tensor
from .errors import ShapeMismatchError


@dataclass
class OptimizerState:
    """Adam accumulators; one first/second moment array per parameter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def init_adam(params: Sequence[Tensor], learning_rate: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        step=0,
        first_moment=[np.zeros_like(p.data) for p in params],
        second_moment=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: Sequence[Tensor], grads, state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, in place on ``params``.

    ``grads`` is either the mapping returned by ``Tape.gradients`` (missing
    entries count as zero) or a sequence aligned with ``params``.
    """
    if len(state.first_moment) != len(params):
        raise ShapeMismatchError(
            f"optimizer tracks {len(state.first_moment)} parameters, "
            f"got {len(params)}"
        )
    if isinstance(grads, Mapping):
        grad_list = [grads.get(p) for p in params]
    else:
        grad_list = list(grads)
        if len(grad_list) != len(params):
            raise ShapeMismatchError(
                f"{len(grad_list)} gradients for {len(params)} parameters"
            )
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grad_list, state.first_moment,
                          state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match parameter "
                f"shape {p.data.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return state
