"""Bilevel problems: objective pair, batch streams and full-data evaluation.

Training drivers only talk to this interface:

* ``partition`` and ``initial_params(seed)`` / ``reinit(params, segment, seed)``
* ``upper(params, batch)`` and ``lower(params, batch)`` returning
  ``(value, full-partition gradient)``
* ``upper_batches(rng)`` / ``lower_batches(rng)``: endless batch iterators
* ``eval_upper(params)`` / ``eval_lower(params)``: full-data evaluation used
  for traces; these never update parameters
"""
from __future__ import annotations

import itertools
from dataclasses import replace

import numpy as np

from .data import Dataset, index_stream
from .errors import InvalidArgument
from .models import ModelSpec, predict
from .objectives import (
    QUAD_PARTITION,
    LabeledBatch,
    QuadraticBilevel,
    UnlabeledBatch,
    make_unlabeled_batch,
    quad_eval,
    sup_loss_ce,
    unsup_loss_masked_mse,
)
from .params import InitScheme, ParamVector, Rng, init_params, reinit_segment


class QuadraticProblem:
    """Deterministic quadratic bilevel problem; batches are ``None``."""

    kind = "quadratic"

    def __init__(self, quad: QuadraticBilevel = QuadraticBilevel(), init: InitScheme = InitScheme("uniform", 1.0)):
        self.quad = quad
        self.init = init
        self.partition = QUAD_PARTITION

    def initial_params(self, seed: int) -> ParamVector:
        return init_params(self.partition, self.init, seed)

    def reinit(self, params, segment, seed):
        return reinit_segment(params, segment, self.init, seed)

    def upper(self, params, batch=None):
        return quad_eval(self.quad, params, "upper")

    def lower(self, params, batch=None):
        return quad_eval(self.quad, params, "lower")

    def upper_batches(self, rng):
        return itertools.repeat(None)

    def lower_batches(self, rng):
        return itertools.repeat(None)

    def eval_upper(self, params):
        return self.upper(params)

    def eval_lower(self, params):
        return self.lower(params)


class MlpProblem:
    """Shared-backbone MLP on a labeled / unlabeled dataset.

    The full-data lower-level evaluation uses one fixed mask drawn from
    ``eval_seed`` so that traces of different strategies are comparable.
    """

    kind = "mlp"

    def __init__(
        self,
        spec: ModelSpec,
        data: Dataset,
        batch_sup: int = 32,
        batch_unsup: int = 128,
        mask_prob: float = 0.1,
        init: InitScheme = InitScheme("uniform", 0.5),
        eval_seed: int = 0,
    ):
        if data.x_labeled.shape[0] and data.x_labeled.shape[1] != spec.input_dim:
            raise InvalidArgument("model input_dim does not match the data")
        if data.y_labeled.size and data.y_labeled.max() >= spec.num_classes:
            raise InvalidArgument("labels exceed model num_classes")
        if not 0.0 < mask_prob <= 1.0:
            raise InvalidArgument("mask_prob must lie in (0, 1]")
        self.spec = spec
        self.data = data
        self.batch_sup = batch_sup
        self.batch_unsup = batch_unsup
        self.mask_prob = mask_prob
        self.init = init
        self.eval_seed = eval_seed
        self.partition = spec.partition
        self._eval_labeled = LabeledBatch(data.x_labeled, data.y_labeled)
        self._eval_unlabeled = make_unlabeled_batch(
            data.x_unlabeled, mask_prob, Rng(eval_seed).derive("eval-mask")
        )

    def initial_params(self, seed: int) -> ParamVector:
        return init_params(self.partition, self.init, seed)

    def reinit(self, params, segment, seed):
        return reinit_segment(params, segment, self.init, seed)

    def upper(self, params, batch: LabeledBatch):
        return sup_loss_ce(self.spec, params, batch)

    def lower(self, params, batch: UnlabeledBatch):
        return unsup_loss_masked_mse(self.spec, params, batch)

    def upper_batches(self, rng: Rng):
        x, y = self.data.x_labeled, self.data.y_labeled
        for idx in index_stream(x.shape[0], self.batch_sup, rng.derive("order")):
            yield LabeledBatch(x[idx], y[idx])

    def lower_batches(self, rng: Rng):
        x = self.data.x_unlabeled
        masks = rng.derive("mask")
        for idx in index_stream(x.shape[0], self.batch_unsup, rng.derive("order")):
            yield make_unlabeled_batch(x[idx], self.mask_prob, masks)

    def eval_upper(self, params):
        return self.upper(params, self._eval_labeled)

    def eval_lower(self, params):
        return self.lower(params, self._eval_unlabeled)

    def predict(self, params, x) -> np.ndarray:
        return predict(self.spec, params, x)

    def accuracy(self, params, x, y) -> float:
        if len(y) == 0:
            return float("nan")
        return float(np.mean(self.predict(params, x) == y))

    def with_labeled(self, x, y) -> "MlpProblem":
        """Same problem with the labeled pool replaced (pseudo-labeling)."""
        data = replace(self.data, x_labeled=np.asarray(x), y_labeled=np.asarray(y, dtype=np.int64))
        return MlpProblem(self.spec, data, self.batch_sup, self.batch_unsup, self.mask_prob, self.init, self.eval_seed)
