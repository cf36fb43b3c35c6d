"""Independent checks: finite differences, closed-form oracles, PL and stationarity probes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericError
from .models import ModelSpec, forward_backbone
from .objectives import QuadraticBilevel, sup_loss_ce, unsup_loss_masked_mse
from .params import ParamVector, Rng


class BoundObjective:
    """A loss with its batch fixed: ``obj(params) -> (value, grad)``.

    ``kinks(params)`` returns every ReLU pre-activation so that finite
    differences can skip coordinates whose stencil straddles a kink.
    """

    def __init__(self, fn, batch=None, spec: ModelSpec = None, kink_input=None):
        self.fn = fn
        self.batch = batch
        self.spec = spec
        self.kink_input = kink_input

    def __call__(self, params):
        return self.fn(params, self.batch)

    @property
    def has_kinks(self) -> bool:
        return self.spec is not None and self.spec.activation == "relu" and bool(self.spec.hidden_dims)

    def kinks(self, params) -> np.ndarray:
        _, cache = forward_backbone(self.spec, params, self.kink_input)
        return np.concatenate([z.ravel() for z in cache.preacts])


def supervised_objective(spec, batch) -> BoundObjective:
    return BoundObjective(lambda p, b: sup_loss_ce(spec, p, b), batch, spec, batch.x)


def unsupervised_objective(spec, batch) -> BoundObjective:
    return BoundObjective(lambda p, b: unsup_loss_masked_mse(spec, p, b), batch, spec, batch.model_input())


@dataclass
class FdReport:
    max_rel_error: float
    worst_coordinate: int
    h: float
    skipped: list = field(default_factory=list)
    checked: int = 0


def fd_check(objective, params: ParamVector, h: float = 1e-6, rel_floor: float = 1e-8) -> FdReport:
    """Central differences against the analytic gradient, coordinate by coordinate.

    The step for coordinate ``i`` is ``h * (1 + |x_i|)``.  Errors are
    ``|analytic - fd| / (|fd| + rel_floor)``.  For ReLU models a coordinate is
    skipped when some pre-activation lies within ten times its own stencil
    displacement of zero.
    """
    if h <= 0:
        raise InvalidArgument("h must be > 0")
    _, analytic = objective(params)
    base = params.data
    kinky = getattr(objective, "has_kinks", False)
    z0 = objective.kinks(params) if kinky else None
    worst, worst_i, skipped, checked = 0.0, -1, [], 0
    for i in range(base.shape[0]):
        step = h * (1.0 + abs(base[i]))
        xp, xm = base.copy(), base.copy()
        xp[i] += step
        xm[i] -= step
        pp, pm = params.replace(xp), params.replace(xm)
        if kinky:
            dz = np.maximum(np.abs(objective.kinks(pp) - z0), np.abs(objective.kinks(pm) - z0))
            moved = dz > 0
            if np.any(np.abs(z0[moved]) < 10.0 * dz[moved]):
                skipped.append(i)
                continue
        fp, _ = objective(pp)
        fm, _ = objective(pm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError("non-finite objective in finite differences", coordinate=i)
        fd = (fp - fm) / (xp[i] - xm[i])
        err = abs(analytic[i] - fd) / (abs(fd) + rel_floor)
        checked += 1
        if err > worst or worst_i < 0:
            worst, worst_i = err, i
    return FdReport(worst, worst_i, h, skipped, checked)


def oracle_bilevel_gap(problem: QuadraticBilevel, params: ParamVector) -> float:
    """Euclidean distance from ``params`` to the bilevel solution ``(c, b, d)``."""
    if params.partition.total != 3:
        raise InvalidArgument("quadratic family needs a 1/1/1 partition")
    return float(np.linalg.norm(params.data - problem.solution))


@dataclass
class PlProbe:
    samples: list
    mu_hat: float
    witnesses: list = field(default_factory=list)
    excluded: int = 0


def pl_probe(objective_g, center: ParamVector, n_samples: int, radius: float, v_hat: float, rng: Rng,
             grad_tol: float = 1e-24, gap_tol: float = 1e-12) -> PlProbe:
    """Empirical PL constant ``max (g - v_hat) / |grad g|^2`` around ``center``.

    Points are drawn uniformly from the ball of ``radius``.  A point with a
    vanishing gradient but a positive gap is a witness against the PL
    inequality; a point with neither is excluded.
    """
    if n_samples < 1:
        raise InvalidArgument("n_samples must be >= 1")
    d = center.partition.total
    samples, witnesses, ratios, excluded = [], [], [], 0
    for _ in range(n_samples):
        direction = rng.normal(d)
        norm = np.linalg.norm(direction)
        direction = direction / norm if norm > 0 else direction
        r = radius * rng.uniform(1)[0] ** (1.0 / d)
        point = center.replace(center.data + r * direction)
        value, grad = objective_g(point)
        sq = float(np.dot(grad, grad))
        gap = value - v_hat
        samples.append((value, sq))
        if sq > grad_tol:
            ratios.append(gap / sq)
        elif gap > gap_tol:
            witnesses.append(point.data.copy())
        else:
            excluded += 1
    mu_hat = max(ratios) if ratios else math.nan
    return PlProbe(samples, mu_hat, witnesses, excluded)


def lipschitz_probe(grad_fn, center: ParamVector, n_pairs: int, radius: float, rng: Rng) -> float:
    """Largest observed ``|grad(x) - grad(y)| / |x - y|`` over random pairs; an estimate, not a bound."""
    d = center.partition.total
    best = 0.0
    for _ in range(n_pairs):
        x = center.data + radius * (2.0 * rng.uniform(d) - 1.0)
        y = center.data + radius * (2.0 * rng.uniform(d) - 1.0)
        dist = np.linalg.norm(x - y)
        if dist == 0:
            continue
        gx = grad_fn(center.replace(x))
        gy = grad_fn(center.replace(y))
        best = max(best, float(np.linalg.norm(gx - gy) / dist))
    return best


@dataclass
class StationaritySeries:
    segment: int
    epoch: int
    gamma: float
    n: np.ndarray
    mean: np.ndarray


def stationarity_series(trace, gamma: float = None) -> list:
    """Running means of the squared penalized-gradient norm, one series per joint segment.

    A segment is a maximal run of joint steps with one penalty factor, so a
    constant-penalty run gives one series and a ramped run one per epoch.
    Values come from the cumulative sums stored with each step record.
    """
    joint = [s for s in trace.steps if s.phase == "joint" and (gamma is None or s.gamma == gamma)]
    if not joint:
        raise InvalidArgument("trace has no per-step joint records for this penalty factor")
    out = []
    by_segment = {}
    for s in joint:
        by_segment.setdefault(s.segment, []).append(s)
    for seg, steps in sorted(by_segment.items()):
        n = np.array([s.seg_step for s in steps], dtype=np.float64)
        cum = np.array([s.cum_sqnorm_F for s in steps])
        out.append(StationaritySeries(seg, steps[0].epoch, steps[0].gamma, n, cum / n))
    return out


def loglog_slope(series: StationaritySeries) -> float:
    """Least-squares slope of log(mean) against log(N) over the final decade of N."""
    n_max = series.n[-1]
    sel = (series.n >= n_max / 10.0) & (series.mean > 0)
    if sel.sum() < 2:
        raise InvalidArgument("need at least two positive points in the final decade")
    slope, _ = np.polyfit(np.log(series.n[sel]), np.log(series.mean[sel]), 1)
    return float(slope)
