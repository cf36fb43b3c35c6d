"""Per-epoch and per-step training records and their CSV / JSON forms."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import InvalidArgument
from .io import csv_text

EPOCH_COLUMNS = ("epoch", "gamma", "f", "g", "p_hat", "gnorm_f", "gnorm_g", "gnorm_F", "phase")
STEP_COLUMNS = (
    "step", "phase", "epoch", "segment", "seg_step", "gamma", "source", "lr",
    "loss_f", "loss_g", "gnorm_f", "gnorm_g", "sqnorm_F", "cum_sqnorm_F",
)


@dataclass
class EpochRecord:
    epoch: int
    gamma: float
    f: float
    g: float
    p_hat: float
    gnorm_f: float
    gnorm_g: float
    gnorm_F: float
    phase: str

    def row(self):
        return [getattr(self, c) for c in EPOCH_COLUMNS]


@dataclass
class StepRecord:
    step: int
    phase: str
    epoch: int
    segment: int
    seg_step: int
    gamma: float
    source: str  # loss(es) behind the update: "f", "g" or "f+g"
    lr: float
    loss_f: float
    loss_g: float
    gnorm_f: float
    gnorm_g: float
    sqnorm_F: float
    cum_sqnorm_F: float
    params: np.ndarray = None  # iterate the gradients were taken at
    grad_f: np.ndarray = None
    grad_g: np.ndarray = None


@dataclass
class RunTrace:
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    flags: Counter = field(default_factory=Counter)
    meta: dict = field(default_factory=dict)
    final_params: object = None

    def epoch_csv(self) -> str:
        return csv_text(EPOCH_COLUMNS, (r.row() for r in self.epochs))

    def step_csv(self) -> str:
        return csv_text(STEP_COLUMNS, ([getattr(s, c) for c in STEP_COLUMNS] for s in self.steps))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.epochs], dtype=np.float64)

    @property
    def last(self) -> EpochRecord:
        return self.epochs[-1]


_FLOAT_FIELDS = {f.name for f in fields(EpochRecord)} - {"epoch", "phase"}


def read_epoch_csv(path) -> list:
    """Parse a trace CSV written by :meth:`RunTrace.epoch_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgument(f"{path}: empty trace") from None
        if tuple(header) != EPOCH_COLUMNS:
            raise InvalidArgument(f"{path}: unexpected trace header {header}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EPOCH_COLUMNS):
                raise InvalidArgument(f"{path}:{lineno}: expected {len(EPOCH_COLUMNS)} fields")
            try:
                values = dict(zip(EPOCH_COLUMNS, row))
                rec = EpochRecord(
                    epoch=int(values["epoch"]),
                    phase=values["phase"],
                    **{k: float(values[k]) for k in _FLOAT_FIELDS},
                )
            except ValueError as exc:
                raise InvalidArgument(f"{path}:{lineno}: {exc}") from None
            records.append(rec)
    return records


class Recorder:
    """Accumulates step statistics and epoch evaluations for one run.

    Squared update-gradient norms are summed over every step whether or not
    the step is stored, so running means read back from the stored steps do
    not depend on ``stride``.  A new segment starts whenever the phase or the
    penalty factor changes.
    """

    def __init__(self, stride: int = 0, record_params: bool = False):
        self.trace = RunTrace()
        self.stride = int(stride)
        self.record_params = record_params
        self.step_count = 0
        self.segment = 0
        self.seg_step = 0
        self.cum = 0.0
        self._key = None
        self.v_hat = math.inf

    def step(self, *, phase, epoch, gamma, source, lr, params, loss_f, loss_g, grad_f, grad_g, update):
        key = (phase, gamma)
        if key != self._key:
            if self._key is not None:
                self.segment += 1
            self._key = key
            self.seg_step = 0
            self.cum = 0.0
        self.step_count += 1
        self.seg_step += 1
        sq = float(np.dot(update, update))
        self.cum += sq
        if self.stride > 0 and self.seg_step % self.stride == 0:
            self.trace.steps.append(
                StepRecord(
                    step=self.step_count,
                    phase=phase,
                    epoch=epoch,
                    segment=self.segment,
                    seg_step=self.seg_step,
                    gamma=float(gamma),
                    source=source,
                    lr=float(lr),
                    loss_f=float(loss_f),
                    loss_g=float(loss_g),
                    gnorm_f=float(np.linalg.norm(grad_f)) if grad_f is not None else math.nan,
                    gnorm_g=float(np.linalg.norm(grad_g)) if grad_g is not None else math.nan,
                    sqnorm_F=sq,
                    cum_sqnorm_F=self.cum,
                    params=params.data.copy() if self.record_params else None,
                    grad_f=None if not self.record_params or grad_f is None else grad_f.copy(),
                    grad_g=None if not self.record_params or grad_g is None else grad_g.copy(),
                )
            )

    def epoch(self, *, epoch, phase, gamma, f, g, grad_f, grad_g):
        self.v_hat = min(self.v_hat, g)
        gnorm_F = float(np.linalg.norm(grad_f + gamma * grad_g))
        rec = EpochRecord(
            epoch=epoch,
            gamma=float(gamma),
            f=float(f),
            g=float(g),
            p_hat=float(g - self.v_hat),
            gnorm_f=float(np.linalg.norm(grad_f)),
            gnorm_g=float(np.linalg.norm(grad_g)),
            gnorm_F=gnorm_F,
            phase=phase,
        )
        self.trace.epochs.append(rec)
        return rec


def summary_of(trace: RunTrace) -> dict:
    last = trace.last
    return {
        "final_f": last.f,
        "final_g": last.g,
        "gnorm_f": last.gnorm_f,
        "gnorm_g": last.gnorm_g,
        "gnorm_F": last.gnorm_F,
        "p_hat": last.p_hat,
        "epochs_recorded": len(trace.epochs),
        "flags": dict(trace.flags),
    }


def record_dict(rec: EpochRecord) -> dict:
    return asdict(rec)
