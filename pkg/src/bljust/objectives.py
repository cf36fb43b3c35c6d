"""Upper-level (supervised) and lower-level (unsupervised) losses.

``f`` is mean cross-entropy on labeled data and touches theta and phi only;
``g`` is mean squared reconstruction error on masked input coordinates and
touches theta and eta only.  :class:`QuadraticBilevel` is a closed-form
bilevel problem used as an exact oracle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import InvalidArgument, NumericError
from .models import ModelSpec, backward, forward_backbone, head_supervised, head_unsupervised
from .params import InitScheme, ParamVector, Partition, Rng, axpy_segment, init_params

logger = logging.getLogger(__name__)

QUAD_PARTITION = Partition(1, 1, 1)


@dataclass(frozen=True)
class LabeledBatch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class UnlabeledBatch:
    """Unlabeled inputs plus the coordinate mask scored by the loss.

    With ``fill="zero"`` masked coordinates are zeroed before the forward
    pass; ``fill="none"`` scores the mask without corrupting the input.
    """

    x: np.ndarray
    mask: np.ndarray
    mask_prob: float
    fill: str = "zero"

    def __len__(self):
        return self.x.shape[0]

    def model_input(self) -> np.ndarray:
        if self.fill == "none":
            return self.x
        return np.where(self.mask, 0.0, self.x)


def make_unlabeled_batch(x, mask_prob: float, rng: Rng, fill="zero") -> UnlabeledBatch:
    x = np.asarray(x, dtype=np.float64)
    return UnlabeledBatch(x, rng.bernoulli(mask_prob, x.shape), mask_prob, fill)


class Objective(Protocol):
    def __call__(self, params: ParamVector, batch) -> tuple[float, np.ndarray]: ...


def cross_entropy(logits: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    value = -float(logp[np.arange(n), y].mean())
    upstream = np.exp(logp)
    upstream[np.arange(n), y] -= 1.0
    return value, upstream / n


def masked_mse(recon: np.ndarray, target: np.ndarray, mask: np.ndarray):
    """Mean squared error over masked entries and its gradient w.r.t. ``recon``."""
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(recon)
    diff = np.where(mask, recon - target, 0.0)
    return float((diff * diff).sum() / count), 2.0 * diff / count


def sup_loss_ce(spec: ModelSpec, params: ParamVector, batch: LabeledBatch):
    y = np.asarray(batch.y, dtype=np.int64)
    if len(batch) == 0:
        return 0.0, np.zeros(params.partition.total)
    if y.min() < 0 or y.max() >= spec.num_classes:
        raise InvalidArgument("label out of range")
    feats, cache = forward_backbone(spec, params, batch.x)
    value, upstream = cross_entropy(head_supervised(spec, params, feats), y)
    return value, backward(spec, params, cache, upstream, "sup")


def unsup_loss_masked_mse(spec: ModelSpec, params: ParamVector, batch: UnlabeledBatch):
    if len(batch) == 0 or not batch.mask.any():
        return 0.0, np.zeros(params.partition.total)
    feats, cache = forward_backbone(spec, params, batch.model_input())
    value, upstream = masked_mse(head_unsupervised(spec, params, feats), batch.x, batch.mask)
    return value, backward(spec, params, cache, upstream, "unsup")


@dataclass(frozen=True)
class QuadraticBilevel:
    """f = (theta-a)^2 + (phi-b)^2 and g = (theta-c)^2 + (eta-d)^2.

    The bilevel solution is (c, b, d) and the value function is 0.
    """

    a: float = 1.0
    b: float = 2.0
    c: float = 3.0
    d: float = -1.0

    @property
    def solution(self) -> np.ndarray:
        return np.array([self.c, self.b, self.d])


def quad_eval(problem: QuadraticBilevel, params: ParamVector, level: str):
    if params.partition != QUAD_PARTITION:
        raise InvalidArgument("quadratic family needs a 1/1/1 partition")
    theta, phi, eta = params.data
    if level == "upper":
        value = (theta - problem.a) ** 2 + (phi - problem.b) ** 2
        grad = np.array([2.0 * (theta - problem.a), 2.0 * (phi - problem.b), 0.0])
    elif level == "lower":
        value = (theta - problem.c) ** 2 + (eta - problem.d) ** 2
        grad = np.array([2.0 * (theta - problem.c), 0.0, 2.0 * (eta - problem.d)])
    else:
        raise InvalidArgument(f"unknown level {level!r}")
    return float(value), grad


def quad_penalized_argmin(problem: QuadraticBilevel, gamma: float):
    if gamma < 0:
        raise InvalidArgument("gamma must be >= 0")
    if math.isinf(gamma):
        return problem.c, problem.b, problem.d
    return (problem.a + gamma * problem.c) / (1.0 + gamma), problem.b, problem.d


def estimate_value_function(
    objective: Callable[[ParamVector], tuple],
    partition: Partition,
    budget: int,
    lr: float,
    seed: int,
    scheme: InitScheme = InitScheme(),
) -> float:
    """Best lower-level value seen along ``budget`` descent steps on (theta, eta).

    The start point and every iterate are scored, so a larger budget can only
    lower the estimate.
    """
    if budget < 1:
        raise InvalidArgument("budget must be >= 1")
    params = init_params(partition, scheme, seed)
    best = math.inf
    for step in range(budget + 1):
        value, grad = objective(params)
        if not math.isfinite(value):
            raise NumericError("lower-level loss diverged", step=step)
        best = min(best, value)
        if step < budget:
            try:
                params = axpy_segment(params, ("theta", "eta"), lr, grad)
            except NumericError as exc:
                raise exc.with_context(step=step)
    return best


def value_gap(objective: Callable[[ParamVector], tuple], params: ParamVector, v_hat: float) -> float:
    """``g(params) - v_hat``, unclamped; negative means ``v_hat`` is stale."""
    value, _ = objective(params)
    gap = value - v_hat
    if gap < 0:
        logger.warning("negative value gap %.3e: value-function estimate is stale", gap)
    return gap
