"""Penalty-based bilevel gradient descent and the three-phase BL-JUST driver.

Each of the K epochs runs ``N1`` descent steps on the unsupervised loss over
(theta, eta), then ``N2`` joint steps on ``f + gamma_k * g`` with a fresh
labeled and a fresh unlabeled batch per step.  After the last epoch ``N3``
supervised steps fine-tune (theta, phi) with a small learning rate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument, NumericError
from .params import ParamVector, Rng, axpy_segment, check_finite, derive_seed
from .trace import Recorder

SCHEDULE_KINDS = ("linear_ramp", "constant")


@dataclass(frozen=True)
class PenaltySchedule:
    kind: str = "linear_ramp"
    gamma_max: float = 0.2
    num_epochs: int = 100
    constant_value: float = 0.0
    ramp_to_max: bool = False

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise InvalidArgument(f"unknown schedule kind {self.kind!r}")
        if self.num_epochs < 1:
            raise InvalidArgument("schedule needs at least one epoch")
        if self.gamma_max < 0 or self.constant_value < 0:
            raise InvalidArgument("penalty factors must be >= 0")

    @classmethod
    def constant(cls, value: float, num_epochs: int) -> "PenaltySchedule":
        return cls("constant", gamma_max=value, num_epochs=num_epochs, constant_value=value)


def penalty_at(schedule: PenaltySchedule, k: int) -> float:
    """Penalty factor for 1-based epoch ``k``.

    The linear ramp is ``(k-1) * (gamma_max / K)``: it starts at 0 and stops one
    increment short of ``gamma_max`` unless ``ramp_to_max`` is set.
    """
    K = schedule.num_epochs
    if not 1 <= k <= K:
        raise InvalidArgument(f"epoch {k} outside [1, {K}]")
    if schedule.kind == "constant":
        return schedule.constant_value
    if schedule.ramp_to_max:
        return schedule.gamma_max if k == K else (k - 1) * (schedule.gamma_max / (K - 1))
    return (k - 1) * (schedule.gamma_max / K)


@dataclass(frozen=True)
class BlJustConfig:
    """Learning rates, phase lengths, penalty schedule and seed of one run.

    ``eta_gamma="max"`` scales the joint-phase eta update by ``gamma_max``
    instead of the epoch's ``gamma_k``.  ``lr_table`` holds ``(epoch, factor)``
    breakpoints of a piecewise-constant learning-rate multiplier, applied on
    top of ``lr_decay ** (k - 1)``; both scale rho and alpha, never tau.
    """

    rho: float = 0.05
    alpha: float = 0.05
    tau: float = 0.005
    gamma_max: float = 0.2
    K: int = 10
    N1: int = 10
    N2: int = 10
    N3: int = 10
    seed: int = 0
    lr_decay: float = 1.0
    lr_table: tuple = ()
    schedule: PenaltySchedule = None
    eta_gamma: str = "epoch"
    optimizer: str = "sgd"
    step_stride: int = 0
    record_params: bool = False

    def __post_init__(self):
        if min(self.rho, self.alpha, self.tau) <= 0:
            raise InvalidArgument("learning rates must be > 0")
        if self.K < 1:
            raise InvalidArgument("K must be >= 1")
        if min(self.N1, self.N2, self.N3) < 0:
            raise InvalidArgument("phase iteration counts must be >= 0")
        if self.eta_gamma not in ("epoch", "max"):
            raise InvalidArgument("eta_gamma must be 'epoch' or 'max'")
        if self.optimizer not in ("sgd", "adamw"):
            raise InvalidArgument("optimizer must be 'sgd' or 'adamw'")
        if self.lr_decay <= 0:
            raise InvalidArgument("lr_decay must be > 0")
        object.__setattr__(self, "lr_table", tuple(sorted((int(e), float(f)) for e, f in self.lr_table)))
        if self.schedule is None:
            object.__setattr__(self, "schedule", PenaltySchedule("linear_ramp", self.gamma_max, self.K))
        elif self.schedule.num_epochs != self.K:
            raise InvalidArgument("schedule length must equal K")

    def lr_scale(self, k: int) -> float:
        table = 1.0
        for epoch, factor in self.lr_table:
            if epoch <= k:
                table = factor
        return self.lr_decay ** (k - 1) * table

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lr_table"] = [list(p) for p in self.lr_table]
        return out


class GradientDescent:
    name = "sgd"

    def step(self, params: ParamVector, grad, lr: float, segments) -> ParamVector:
        return axpy_segment(params, segments, lr, grad)


class AdamW:
    """Decoupled-weight-decay Adam with per-coordinate step counts.

    Coordinates outside ``segments`` keep their moments untouched, so a
    phase that freezes a head does not age that head's statistics.
    """

    name = "adamw"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = self.v = self.t = None

    def step(self, params: ParamVector, grad, lr: float, segments) -> ParamVector:
        if self.m is None:
            n = params.partition.total
            self.m, self.v, self.t = np.zeros(n), np.zeros(n), np.zeros(n)
        segments = (segments,) if isinstance(segments, str) else tuple(segments)
        mask = params.partition.mask(*segments)
        g = np.asarray(grad)[mask]
        self.t[mask] += 1
        self.m[mask] = self.beta1 * self.m[mask] + (1 - self.beta1) * g
        self.v[mask] = self.beta2 * self.v[mask] + (1 - self.beta2) * g * g
        m_hat = self.m[mask] / (1 - self.beta1 ** self.t[mask])
        v_hat = self.v[mask] / (1 - self.beta2 ** self.t[mask])
        data = params.data.copy()
        data[mask] -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * data[mask])
        check_finite(data)
        return params.replace(data)


def make_optimizer(name: str):
    return AdamW() if name == "adamw" else GradientDescent()


def _check_purity(params: ParamVector, grad_f, grad_g):
    p = params.partition
    if grad_f.shape != (p.total,) or grad_g.shape != (p.total,):
        raise InvalidArgument("gradients must cover the full partition")
    if np.any(grad_f[p.slice("eta")] != 0):
        raise InvalidArgument("upper-level gradient has a nonzero eta segment")
    if np.any(grad_g[p.slice("phi")] != 0):
        raise InvalidArgument("lower-level gradient has a nonzero phi segment")


def penalized_gradient(params: ParamVector, grad_f, grad_g, gamma: float, gamma_eta: float = None):
    """``grad_f + gamma * grad_g`` with the eta block optionally scaled by ``gamma_eta``."""
    grad_f = np.asarray(grad_f, dtype=np.float64)
    grad_g = np.asarray(grad_g, dtype=np.float64)
    _check_purity(params, grad_f, grad_g)
    combined = grad_f + gamma * grad_g
    if gamma_eta is not None and gamma_eta != gamma:
        sl = params.partition.slice("eta")
        combined[sl] = grad_f[sl] + gamma_eta * grad_g[sl]
    return combined


def pbgd_step(params: ParamVector, grad_f, grad_g, alpha: float, gamma: float, gamma_eta: float = None) -> ParamVector:
    """One joint step: every block moves by ``-alpha * (grad_f + gamma * grad_g)``."""
    return axpy_segment(params, "all", alpha, penalized_gradient(params, grad_f, grad_g, gamma, gamma_eta))


def _value(objective, params, batch, trace=None):
    value, grad = objective(params, batch)
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite loss or gradient")
    if trace is not None and batch is not None and len(batch) == 0:
        trace.flags["empty_batch"] += 1
    return value, grad


def descend(objective, params, lr, n_steps, batches, segments, *, optimizer=None, recorder=None,
            phase="descent", epoch=0, source="f"):
    """``n_steps`` plain descent steps of ``objective`` on ``segments``."""
    optimizer = optimizer or GradientDescent()
    trace = recorder.trace if recorder is not None else None
    for i in range(n_steps):
        try:
            value, grad = _value(objective, params, next(batches), trace)
            new = optimizer.step(params, grad, lr, segments)
        except NumericError as exc:
            raise exc.with_context(epoch=epoch, phase=phase, step=i + 1)
        if recorder is not None:
            masked = grad * params.partition.mask(*((segments,) if isinstance(segments, str) else segments))
            is_f = source == "f"
            recorder.step(
                phase=phase, epoch=epoch, gamma=0.0, source=source, lr=lr, params=params,
                loss_f=value if is_f else math.nan, loss_g=math.nan if is_f else value,
                grad_f=grad if is_f else None, grad_g=None if is_f else grad, update=masked,
            )
        params = new
    return params


def explore_epoch(lower, params, rho, n_steps, batches, **kw) -> ParamVector:
    """Unsupervised descent on (theta, eta); phi is never touched."""
    if n_steps < 0:
        raise InvalidArgument("N1 must be >= 0")
    kw.setdefault("phase", "explore")
    return descend(lower, params, rho, n_steps, batches, ("theta", "eta"), source="g", **kw)


def finetune(upper, params, tau, n_steps, batches, **kw) -> ParamVector:
    """Supervised descent on (theta, phi); eta is never touched."""
    if n_steps < 0:
        raise InvalidArgument("N3 must be >= 0")
    kw.setdefault("phase", "finetune")
    return descend(upper, params, tau, n_steps, batches, ("theta", "phi"), source="f", **kw)


def joint_phase(problem, params, alpha, gamma, n_steps, sup_batches, unsup_batches, *, gamma_eta=None,
                optimizer=None, recorder=None, epoch=0, phase="joint"):
    optimizer = optimizer or GradientDescent()
    trace = recorder.trace if recorder is not None else None
    for j in range(n_steps):
        try:
            vf, gf = _value(problem.upper, params, next(sup_batches), trace)
            vg, gg = _value(problem.lower, params, next(unsup_batches), trace)
            if isinstance(optimizer, GradientDescent):
                new = pbgd_step(params, gf, gg, alpha, gamma, gamma_eta)
                combined = None
            else:
                combined = penalized_gradient(params, gf, gg, gamma, gamma_eta)
                new = optimizer.step(params, combined, alpha, "all")
        except NumericError as exc:
            raise exc.with_context(epoch=epoch, phase=phase, step=j + 1)
        if recorder is not None:
            if combined is None:
                combined = penalized_gradient(params, gf, gg, gamma, gamma_eta)
            recorder.step(
                phase=phase, epoch=epoch, gamma=gamma, source="f+g", lr=alpha, params=params,
                loss_f=vf, loss_g=vg, grad_f=gf, grad_g=gg, update=combined,
            )
        params = new
    return params


def evaluate(problem, params):
    """Full-data ``(f, grad_f, g, grad_g)``; evaluation never updates parameters."""
    f, gf = problem.eval_upper(params)
    g, gg = problem.eval_lower(params)
    return f, gf, g, gg


def log_epoch(recorder: Recorder, problem, params, epoch: int, phase: str, gamma: float):
    f, gf, g, gg = evaluate(problem, params)
    if not (math.isfinite(f) and math.isfinite(g)):
        raise NumericError("non-finite evaluation", epoch=epoch, phase=phase)
    return recorder.epoch(epoch=epoch, phase=phase, gamma=gamma, f=f, g=g, grad_f=gf, grad_g=gg)


def _streams(problem, seed):
    rng = Rng(seed)
    return {
        "explore": problem.lower_batches(rng.derive("explore")),
        "joint_sup": problem.upper_batches(rng.derive("joint", "sup")),
        "joint_unsup": problem.lower_batches(rng.derive("joint", "unsup")),
        "finetune": problem.upper_batches(rng.derive("finetune")),
    }


def run_bljust(problem, config: BlJustConfig, init: ParamVector = None, recorder: Recorder = None,
               epoch_offset: int = 0):
    """Bilevel joint unsupervised and supervised training.

    Returns ``(final_params, trace)``.  ``epoch_offset`` shifts the logged
    epoch numbers when the run continues an earlier phase in one trace.  Numeric failures are re-raised with
    the epoch, phase and step attached and the partial trace on ``exc.trace``.
    """
    recorder = recorder or Recorder(config.step_stride, config.record_params)
    params = init if init is not None else problem.initial_params(derive_seed(config.seed, "init"))
    streams = _streams(problem, config.seed)
    optimizer = make_optimizer(config.optimizer)
    schedule = config.schedule
    gamma_k = 0.0
    try:
        if not recorder.trace.epochs:
            log_epoch(recorder, problem, params, 0, "init", 0.0)
        for k in range(1, config.K + 1):
            scale = config.lr_scale(k)
            gamma_k = penalty_at(schedule, k)
            gamma_eta = schedule.gamma_max if config.eta_gamma == "max" else gamma_k
            epoch = epoch_offset + k
            params = explore_epoch(
                problem.lower, params, config.rho * scale, config.N1, streams["explore"],
                optimizer=optimizer, recorder=recorder, epoch=epoch,
            )
            params = joint_phase(
                problem, params, config.alpha * scale, gamma_k, config.N2,
                streams["joint_sup"], streams["joint_unsup"], gamma_eta=gamma_eta,
                optimizer=optimizer, recorder=recorder, epoch=epoch,
            )
            log_epoch(recorder, problem, params, epoch, "joint", gamma_k)
        if config.N3 > 0:
            epoch = epoch_offset + config.K + 1
            params = finetune(
                problem.upper, params, config.tau, config.N3, streams["finetune"],
                optimizer=optimizer, recorder=recorder, epoch=epoch,
            )
            log_epoch(recorder, problem, params, epoch, "finetune", 0.0)
    except NumericError as exc:
        exc.trace = recorder.trace
        recorder.trace.final_params = params
        raise
    recorder.trace.final_params = params
    recorder.trace.meta.setdefault("strategy", "bljust")
    return params, recorder.trace
