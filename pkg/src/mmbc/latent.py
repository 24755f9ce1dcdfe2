"""Discrete latent machinery: Gumbel-Max sampling, its tempered softmax
relaxation, the straight-through estimator and the closed-form KL terms,
plus the Gaussian-latent reparameterization used by the baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError

# Probabilities are clamped to this floor before any log, which keeps
# zero-probability categories at a huge negative score without producing
# actual infinities.
PROB_FLOOR = 1e-10
_NEG_SENTINEL = -1e300


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponential decay ``tau0 * exp(-rate * step)`` clamped at ``tau_min``."""

    tau0: float = 1.0
    tau_min: float = 0.5
    rate: float = 1e-4

    def __post_init__(self):
        if self.tau0 <= 0.0 or self.tau_min <= 0.0:
            raise ContractError("temperatures must stay positive")


@dataclass(frozen=True)
class LatentConfig:
    """Latent family selector plus its sampling knobs.

    ``k`` counts categories for the categorical family and latent
    dimensions for the Gaussian one. ``straight_through`` picks the hard
    forward / relaxed backward estimator; the soft relaxation is kept
    behind this flag for ablation.
    """

    family: str = "categorical"
    k: int = 4
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    straight_through: bool = True

    def __post_init__(self):
        if self.family not in ("categorical", "gaussian"):
            raise ContractError(f"unknown latent family '{self.family}'")
        if self.k < 2:
            raise ContractError(f"latent width must be >= 2, got {self.k}")


@dataclass
class GumbelSample:
    """One categorical draw: probabilities, noise, relaxed and hard forms."""

    class_probs: Tensor
    noise: Tensor
    relaxed: Tensor
    hard: Tensor


def anneal_temperature(schedule: TemperatureSchedule, step: int) -> float:
    if step < 0:
        raise ContractError(f"step must be >= 0, got {step}")
    return max(schedule.tau_min, schedule.tau0 * math.exp(-schedule.rate * step))


def sample_gumbel(rng: np.random.Generator, shape) -> Tensor:
    """Standard Gumbel noise ``-log(-log(u))`` with u uniform on (0, 1)."""
    # rng.random() yields [0, 1); nudging zero up keeps both ends open.
    u = rng.random(size=shape)
    u = np.maximum(u, np.finfo(np.float64).tiny)
    return ag.constant(-np.log(-np.log(u)))


def _log_probs(probs: np.ndarray) -> np.ndarray:
    # Zero probabilities map to a large negative sentinel so they can
    # never win an argmax against finite noise.
    with np.errstate(divide="ignore"):
        logs = np.log(np.maximum(probs, PROB_FLOOR))
    return np.where(probs > 0.0, logs, _NEG_SENTINEL)


def gumbel_max(class_probs: Tensor, noise: Tensor) -> Tensor:
    """Exact categorical draw: one-hot of argmax(noise + log probs).

    Works on a probability vector or on row batches; ties break toward
    the lowest index. Not differentiable (returns a constant).
    """
    scores = noise.data + _log_probs(class_probs.data)
    winners = np.argmax(scores, axis=-1)
    hot = np.zeros_like(class_probs.data)
    if hot.ndim == 1:
        hot[winners] = 1.0
    else:
        hot[np.arange(hot.shape[0]), winners] = 1.0
    return ag.constant(hot)


def gumbel_softmax(class_probs: Tensor, noise: Tensor, temperature: float) -> Tensor:
    """Tempered softmax relaxation of Gumbel-Max, differentiable in probs.

    High temperature flattens the output toward uniform; low temperature
    sharpens it toward the exact one-hot draw.
    """
    if temperature <= 0.0:
        raise ContractError(f"temperature must be > 0, got {temperature}")
    logits = ag.add(ag.log(ag.clamp_min(class_probs, PROB_FLOOR)), noise)
    return ag.softmax(ag.scale(logits, 1.0 / temperature))


def straight_through(relaxed: Tensor) -> Tensor:
    """Hard one-hot forward value, identity backward.

    The forward result is the one-hot argmax of the relaxed sample (per
    row for batches); gradients pass through unchanged, as if this op
    were the identity on the relaxation.
    """
    hot = np.zeros_like(relaxed.data)
    winners = np.argmax(relaxed.data, axis=-1)
    if hot.ndim == 1:
        hot[winners] = 1.0
    else:
        hot[np.arange(hot.shape[0]), winners] = 1.0
    out = ag._result(hot, relaxed.requires_grad)
    ag.record(out, (relaxed,), lambda g: (g,))
    return out


def draw_categorical(class_probs: Tensor, rng: np.random.Generator,
                     temperature: float) -> GumbelSample:
    """Bundle one draw: shared noise feeds both the hard and relaxed paths."""
    noise = sample_gumbel(rng, class_probs.shape)
    relaxed = gumbel_softmax(class_probs, noise, temperature)
    hard = gumbel_max(class_probs, noise)
    return GumbelSample(class_probs=class_probs, noise=noise,
                        relaxed=relaxed, hard=hard)


def kl_categorical_uniform(class_probs: Tensor) -> Tensor:
    """KL(probs || uniform) = sum p_i (log p_i - log(1/k)), i.e. log k - H.

    For a matrix this is the sum of per-row divergences. The uniform
    vector maps to exactly zero because each entry's log cancels with
    log(1/k) bit for bit.
    """
    k = class_probs.shape[-1]
    log_uniform = math.log(1.0 / k)
    centred = ag.add_scalar(ag.log(ag.clamp_min(class_probs, PROB_FLOOR)),
                            -log_uniform)
    return ag.sum_all(ag.mul(class_probs, centred))


def gaussian_latent(mean: Tensor, log_var: Tensor, noise: Tensor) -> tuple[Tensor, Tensor]:
    """Reparameterized Gaussian sample and its KL against the unit normal.

    ``noise`` is caller-supplied standard-normal noise of the same shape.
    Returns ``(mean + sigma * noise, 0.5 * sum(mean^2 + var - log var - 1))``;
    matrices contribute the sum over rows.
    """
    sigma = ag.exp(ag.scale(log_var, 0.5))
    z = ag.add(mean, ag.mul(sigma, noise))
    kl_terms = ag.add_scalar(
        ag.sub(ag.add(ag.mul(mean, mean), ag.exp(log_var)), log_var), -1.0)
    return z, ag.scale(ag.sum_all(kl_terms), 0.5)
