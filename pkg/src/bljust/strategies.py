"""Comparison strategies assembled from the same primitives as BL-JUST.

* ``ptft``: unsupervised pre-training, then supervised fine-tuning with a new
  supervised head.
* ``just``: joint training with a constant penalty and no exploration.
* ``ao``: per epoch, supervised steps then unsupervised steps; never joint.
* ``pl``: supervised training, pseudo-label the unlabeled pool, retrain.

All strategies spend ``K * N2 + N3`` labeled steps by default so that
comparisons hold the labeled budget fixed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidArgument, NumericError
from .pbgd import (
    BlJustConfig,
    PenaltySchedule,
    explore_epoch,
    finetune,
    log_epoch,
    make_optimizer,
    run_bljust,
)
from .params import Rng, derive_seed
from .trace import Recorder, summary_of

KINDS = ("bljust", "ptft", "just", "ao", "pl")
ABLATION_VARIANTS = ("full", "no_finetune", "no_explore", "neither")


@dataclass(frozen=True)
class StrategyConfig:
    """One training run: a strategy kind plus its knobs.

    ``None`` step counts fall back to the BL-JUST phase lengths:
    ``pt_steps`` to ``N1 + N2`` per pre-training epoch, ``ao_sup_steps`` to
    ``N2`` and ``ao_unsup_steps`` to ``N1``; ``pretrain_epochs`` and
    ``finetune_epochs`` default to ``K``.
    """

    kind: str = "bljust"
    train: BlJustConfig = field(default_factory=BlJustConfig)
    pl_rounds: int = 2
    pl_continue: bool = False
    pretrain_epochs: int = None
    finetune_epochs: int = None
    pt_steps: int = None
    just_gamma: float = 0.2
    pretrain_init: bool = False
    ao_sup_steps: int = None
    ao_unsup_steps: int = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown strategy {self.kind!r}")
        if self.pl_rounds < 1:
            raise InvalidArgument("pl_rounds must be >= 1")
        if self.just_gamma < 0:
            raise InvalidArgument("just_gamma must be >= 0")
        for name in ("pretrain_epochs", "finetune_epochs", "pt_steps", "ao_sup_steps", "ao_unsup_steps"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise InvalidArgument(f"{name} must be >= 0")

    @property
    def n_pretrain(self) -> int:
        return self.train.K if self.pretrain_epochs is None else self.pretrain_epochs

    @property
    def n_finetune(self) -> int:
        return self.train.K if self.finetune_epochs is None else self.finetune_epochs

    @property
    def n_pt_steps(self) -> int:
        return self.train.N1 + self.train.N2 if self.pt_steps is None else self.pt_steps

    @property
    def effective_kind(self) -> str:
        if self.kind == "ptft" and (self.n_pretrain == 0 or self.n_pt_steps == 0):
            return "supervised"
        if self.kind == "just" and self.just_gamma == 0 and not self.pretrain_init:
            return "supervised"
        return self.kind

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_dict()
        return out


def _pretrain(problem, params, sc: StrategyConfig, recorder, rng: Rng, optimizer):
    cfg = sc.train
    batches = problem.lower_batches(rng.derive("pretrain"))
    for e in range(1, sc.n_pretrain + 1):
        params = explore_epoch(
            problem.lower, params, cfg.rho * cfg.lr_scale(e), sc.n_pt_steps, batches,
            optimizer=optimizer, recorder=recorder, epoch=e, phase="pretrain",
        )
        log_epoch(recorder, problem, params, e, "pretrain", 0.0)
    return params


def _supervised(problem, params, cfg: BlJustConfig, recorder, rng: Rng, optimizer, *, n_epochs,
                first_epoch, phase, eval_problem=None):
    """``n_epochs`` of ``N2`` steps at alpha, then ``N3`` steps at tau."""
    eval_problem = eval_problem or problem
    batches = problem.upper_batches(rng.derive("sup"))
    for e in range(1, n_epochs + 1):
        params = finetune(
            problem.upper, params, cfg.alpha * cfg.lr_scale(e), cfg.N2, batches,
            optimizer=optimizer, recorder=recorder, epoch=first_epoch + e - 1, phase=phase,
        )
        log_epoch(recorder, eval_problem, params, first_epoch + e - 1, phase, 0.0)
    if cfg.N3 > 0:
        epoch = first_epoch + n_epochs
        params = finetune(
            problem.upper, params, cfg.tau, cfg.N3, problem.upper_batches(rng.derive("tail")),
            optimizer=optimizer, recorder=recorder, epoch=epoch, phase="finetune",
        )
        log_epoch(recorder, eval_problem, params, epoch, "finetune", 0.0)
    return params


def _guarded(fn):
    """Attach the partial trace to numeric failures."""

    def wrapper(problem, sc, *args, **kwargs):
        recorder = Recorder(sc.train.step_stride, sc.train.record_params)
        try:
            params = fn(problem, sc, recorder, *args, **kwargs)
        except NumericError as exc:
            exc.trace = recorder.trace
            raise
        trace = recorder.trace
        trace.final_params = params
        trace.meta.update(strategy=sc.kind, effective_strategy=sc.effective_kind)
        return params, trace

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_guarded
def run_ptft(problem, sc: StrategyConfig, recorder):
    """Pre-train (theta, eta) on g, then fine-tune (theta, phi) on f from a new phi."""
    cfg = sc.train
    rng = Rng(cfg.seed)
    optimizer = make_optimizer(cfg.optimizer)
    params = problem.initial_params(derive_seed(cfg.seed, "init"))
    log_epoch(recorder, problem, params, 0, "init", 0.0)
    params = _pretrain(problem, params, sc, recorder, rng, optimizer)
    params = problem.reinit(params, "phi", derive_seed(cfg.seed, "ptft", "phi"))
    if cfg.optimizer == "adamw":
        optimizer = make_optimizer(cfg.optimizer)
    return _supervised(
        problem, params, cfg, recorder, rng.derive("ptft"), optimizer,
        n_epochs=sc.n_finetune, first_epoch=sc.n_pretrain + 1, phase="ptft-finetune",
    )


def just_config(sc: StrategyConfig, schedule: PenaltySchedule = None) -> BlJustConfig:
    """The BL-JUST configuration JUST reduces to: no exploration, constant penalty."""
    schedule = schedule or PenaltySchedule.constant(sc.just_gamma, sc.train.K)
    return replace(sc.train, N1=0, schedule=schedule, gamma_max=schedule.gamma_max)


def run_just(problem, sc: StrategyConfig, schedule: PenaltySchedule = None):
    """Joint training with a fixed penalty (or ``schedule``) and no exploration.

    With ``pretrain_init`` the joint run starts from a pre-trained model.
    """
    cfg = just_config(sc, schedule)
    recorder = Recorder(cfg.step_stride, cfg.record_params)
    init, offset = None, 0
    if sc.pretrain_init:
        offset = sc.n_pretrain
        init = problem.initial_params(derive_seed(cfg.seed, "init"))
        log_epoch(recorder, problem, init, 0, "init", 0.0)
        try:
            init = _pretrain(problem, init, sc, recorder, Rng(cfg.seed).derive("just"), make_optimizer(cfg.optimizer))
        except NumericError as exc:
            exc.trace = recorder.trace
            raise
    params, trace = run_bljust(problem, cfg, init=init, recorder=recorder, epoch_offset=offset)
    trace.meta.update(strategy="just", effective_strategy=sc.effective_kind)
    return params, trace


@_guarded
def run_ao(problem, sc: StrategyConfig, recorder):
    """Alternate supervised and unsupervised descent each epoch; no joint steps."""
    cfg = sc.train
    rng = Rng(cfg.seed).derive("ao")
    optimizer = make_optimizer(cfg.optimizer)
    n_sup = cfg.N2 if sc.ao_sup_steps is None else sc.ao_sup_steps
    n_unsup = cfg.N1 if sc.ao_unsup_steps is None else sc.ao_unsup_steps
    sup = problem.upper_batches(rng.derive("sup"))
    unsup = problem.lower_batches(rng.derive("unsup"))
    params = problem.initial_params(derive_seed(cfg.seed, "init"))
    log_epoch(recorder, problem, params, 0, "init", 0.0)
    for k in range(1, cfg.K + 1):
        scale = cfg.lr_scale(k)
        params = finetune(problem.upper, params, cfg.alpha * scale, n_sup, sup,
                          optimizer=optimizer, recorder=recorder, epoch=k, phase="ao-sup")
        params = explore_epoch(problem.lower, params, cfg.rho * scale, n_unsup, unsup,
                               optimizer=optimizer, recorder=recorder, epoch=k, phase="ao-unsup")
        log_epoch(recorder, problem, params, k, "ao", 0.0)
    if cfg.N3 > 0:
        params = finetune(problem.upper, params, cfg.tau, cfg.N3, problem.upper_batches(rng.derive("tail")),
                          optimizer=optimizer, recorder=recorder, epoch=cfg.K + 1)
        log_epoch(recorder, problem, params, cfg.K + 1, "finetune", 0.0)
    return params


@_guarded
def run_pl(problem, sc: StrategyConfig, recorder):
    """Pseudo-labeling: round 0 is supervised; later rounds retrain on labeled + pseudo-labeled data.

    Agreement of each round's pseudo-labels with the hidden true labels is
    stored in ``trace.meta["pl_agreement"]``.
    """
    if not hasattr(problem, "predict"):
        raise InvalidArgument("pseudo-labeling needs a classification problem")
    cfg = sc.train
    data = problem.data
    x_unl, y_true = data.x_unlabeled, data.y_unlabeled
    agreement = []
    current = problem
    params = problem.initial_params(derive_seed(cfg.seed, "init"))
    log_epoch(recorder, problem, params, 0, "init", 0.0)
    epoch = 1
    for r in range(sc.pl_rounds):
        if r > 0 and not sc.pl_continue:
            params = problem.initial_params(derive_seed(cfg.seed, "pl", r, "init"))
        params = _supervised(
            current, params, cfg, recorder, Rng(cfg.seed).derive("pl", r), make_optimizer(cfg.optimizer),
            n_epochs=cfg.K, first_epoch=epoch, phase=f"pl{r}", eval_problem=problem,
        )
        epoch = recorder.trace.last.epoch + 1
        pseudo = problem.predict(params, x_unl) if x_unl.shape[0] else np.zeros(0, dtype=np.int64)
        known = y_true >= 0
        agreement.append(float(np.mean(pseudo[known] == y_true[known])) if known.any() else float("nan"))
        if r < sc.pl_rounds - 1:
            current = problem.with_labeled(
                np.concatenate([data.x_labeled, x_unl]), np.concatenate([data.y_labeled, pseudo])
            )
    recorder.trace.meta["pl_agreement"] = agreement
    return params


def run_strategy(problem, sc: StrategyConfig):
    if sc.kind == "bljust":
        params, trace = run_bljust(problem, sc.train)
        trace.meta.update(strategy="bljust", effective_strategy="bljust")
        return params, trace
    return {"ptft": run_ptft, "just": run_just, "ao": run_ao, "pl": run_pl}[sc.kind](problem, sc)


def ablation_config(base: BlJustConfig, variant: str) -> BlJustConfig:
    if variant == "full":
        return base
    if variant == "no_explore":
        return replace(base, N1=0)
    if variant == "no_finetune":
        return replace(base, N3=0)
    if variant == "neither":
        return replace(base, N1=0, N3=0)
    raise InvalidArgument(f"unknown ablation variant {variant!r}")


def run_ablation(problem, base: BlJustConfig, variant: str) -> dict:
    """BL-JUST and one ablated variant under the same seed and batch streams."""
    _, full = run_bljust(problem, base)
    _, ablated = run_bljust(problem, ablation_config(base, variant))
    return {
        "variant": variant,
        "seed": base.seed,
        "full": summary_of(full),
        "ablated": summary_of(ablated),
    }


def labeled_steps(sc: StrategyConfig) -> int:
    """Supervised gradient steps a strategy spends; logged so budgets can be compared."""
    cfg = sc.train
    kind = sc.effective_kind
    if kind in ("bljust", "just"):
        return cfg.K * cfg.N2 + cfg.N3
    if kind == "ptft":
        return sc.n_finetune * cfg.N2 + cfg.N3
    if kind == "supervised":
        n_epochs = sc.n_finetune if sc.kind == "ptft" else cfg.K
        return n_epochs * cfg.N2 + cfg.N3
    if kind == "ao":
        n_sup = cfg.N2 if sc.ao_sup_steps is None else sc.ao_sup_steps
        return cfg.K * n_sup + cfg.N3
    return sc.pl_rounds * (cfg.K * cfg.N2 + cfg.N3)
