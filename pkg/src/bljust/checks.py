"""Verification suites: each check is a dict with a ``pass`` flag and the raw numbers behind it."""
from __future__ import annotations

import itertools
import math
from dataclasses import replace

import numpy as np

from . import reference as ref
from .errors import InvalidArgument
from .objectives import QUAD_PARTITION, estimate_value_function, quad_penalized_argmin
from .params import ParamVector, Rng, init_params
from .problems import QuadraticProblem
from .pbgd import PenaltySchedule, explore_epoch, pbgd_step, penalty_at, run_bljust
from .strategies import StrategyConfig, run_ptft
from .verify import (
    fd_check,
    loglog_slope,
    oracle_bilevel_gap,
    pl_probe,
    stationarity_series,
    supervised_objective,
    unsupervised_objective,
)

SUITE_NAMES = ("grad", "oracle", "pl", "stationarity")


def check(name: str, passed: bool, **numbers) -> dict:
    return {"name": name, "pass": bool(passed), **numbers}


def _describe(spec) -> str:
    hidden = "x".join(map(str, spec.hidden_dims)) or "none"
    return f"{spec.input_dim}-{hidden}-{spec.num_classes}-{spec.activation}"


def grad_suite(h: float = ref.FD_H, tolerance: float = ref.FD_TOLERANCE, specs=ref.FD_SPECS, seeds=ref.FD_SEEDS):
    out = []
    for spec in specs:
        for seed in seeds:
            params, labeled, unlabeled = ref.fd_case(spec, seed)
            for loss, objective in (("sup", supervised_objective(spec, labeled)),
                                    ("unsup", unsupervised_objective(spec, unlabeled))):
                rep = fd_check(objective, params, h=h)
                out.append(check(
                    f"fd/{_describe(spec)}/seed{seed}/{loss}", rep.max_rel_error <= tolerance,
                    max_rel_error=rep.max_rel_error, tolerance=tolerance, worst_coordinate=rep.worst_coordinate,
                    checked=rep.checked, skipped=len(rep.skipped),
                ))
    return out


def quadratic_bljust_checks(config=ref.QUAD_CONFIG):
    """Oracle gap, final gradient norms and the PT+FT lower-level norm ratio."""
    problem = ref.quadratic_problem()
    params, trace = run_bljust(problem, config)
    _, pt_trace = run_ptft(problem, StrategyConfig("ptft", config))
    gap = oracle_bilevel_gap(problem.quad, params)
    last, pt_last = trace.last, pt_trace.last
    ratio = pt_last.gnorm_g / last.gnorm_g if last.gnorm_g > 0 else math.inf
    tol = ref.QUAD_GRAD_TOLERANCE
    return [
        check("quadratic/bljust_gap", gap <= ref.QUAD_GAP_TOLERANCE, gap=gap, tolerance=ref.QUAD_GAP_TOLERANCE,
              final_params=params.data.tolist()),
        check("quadratic/bljust_gnorm_f", last.gnorm_f <= tol, gnorm_f=last.gnorm_f, tolerance=tol),
        check("quadratic/bljust_gnorm_g", last.gnorm_g <= tol, gnorm_g=last.gnorm_g, tolerance=tol),
        check("quadratic/ptft_gnorm_g_ratio", ratio >= ref.QUAD_NORM_RATIO, ratio=ratio,
              ptft_gnorm_g=pt_last.gnorm_g, bljust_gnorm_g=last.gnorm_g, minimum=ref.QUAD_NORM_RATIO),
    ]


def numerical_penalized_argmin(quad, gamma: float, seed: int = 0, n_warm: int = 200, max_steps: int = 100_000):
    """Minimize ``F_gamma = f + gamma * g`` by descent, starting from a lower-level warm start.

    The warm start fixes eta where ``F_0`` leaves it free.  The step
    ``1 / (4 (1 + gamma))`` is half the stability limit of every block;
    descent stops at a fixed point or after ``max_steps``.
    """
    problem = QuadraticProblem(quad)
    params = init_params(QUAD_PARTITION, problem.init, seed)
    params = explore_epoch(problem.lower, params, 0.25, n_warm, itertools.repeat(None))
    alpha = 1.0 / (4.0 * (1.0 + gamma))
    for _ in range(max_steps):
        _, gf = problem.upper(params)
        _, gg = problem.lower(params)
        new = pbgd_step(params, gf, gg, alpha, gamma)
        if new == params:
            break
        params = new
    return params.data


def argmin_checks(gammas=ref.ARGMIN_GAMMAS, tolerance=ref.ARGMIN_TOLERANCE):
    out = []
    for gamma in gammas:
        numeric = numerical_penalized_argmin(ref.QUAD, gamma)
        closed = np.array(quad_penalized_argmin(ref.QUAD, gamma))
        err = float(np.max(np.abs(numeric - closed)))
        out.append(check(f"argmin/gamma={gamma!r}", err <= tolerance, max_abs_error=err, tolerance=tolerance,
                         numeric=numeric.tolist(), closed_form=closed.tolist()))
    return out


def schedule_checks(gamma_max: float = 0.2, K: int = 100, increment: float = 0.002):
    """``gamma_k`` must equal ``(k - 1) * increment`` bit for bit."""
    schedule = PenaltySchedule("linear_ramp", gamma_max, K)
    values = [penalty_at(schedule, k) for k in range(1, K + 1)]
    mismatched = [k for k, v in enumerate(values, start=1) if v != (k - 1) * increment]
    return [
        check("schedule/gamma_1", values[0] == 0.0, gamma_1=values[0]),
        check("schedule/gamma_2", values[1] == increment, gamma_2=values[1], increment=increment),
        check("schedule/all_epochs", not mismatched, mismatched_epochs=mismatched, K=K),
    ]


def oracle_suite():
    return quadratic_bljust_checks() + argmin_checks() + schedule_checks()


def pl_suite(n_samples: int = ref.PL_SAMPLES, radius: float = ref.PL_RADIUS, seed: int = 0):
    problem = ref.quadratic_problem()
    v_hat = estimate_value_function(problem.lower, QUAD_PARTITION, 200, 0.25, seed)
    center = ParamVector(ref.QUAD.solution, QUAD_PARTITION)
    probe = pl_probe(problem.lower, center, n_samples, radius, v_hat, Rng(seed).derive("pl"))
    err = abs(probe.mu_hat - ref.PL_MU)
    return [
        check("pl/mu_hat", err <= ref.PL_TOLERANCE, mu_hat=probe.mu_hat, expected=ref.PL_MU,
              tolerance=ref.PL_TOLERANCE, v_hat=v_hat),
        check("pl/witnesses", not probe.witnesses, witnesses=len(probe.witnesses), excluded=probe.excluded),
    ]


def stationarity_suite(n_steps: int = ref.STATIONARITY_STEPS, gamma: float = ref.STATIONARITY_GAMMA):
    config = ref.stationarity_config()
    config = replace(config, N2=n_steps, gamma_max=gamma, schedule=PenaltySchedule.constant(gamma, 1))
    _, trace = run_bljust(ref.quadratic_problem(), config)
    series = stationarity_series(trace)
    slopes = [loglog_slope(s) for s in series]
    worst = max(slopes)
    return [check("stationarity/loglog_slope", worst <= ref.STATIONARITY_SLOPE, slope=worst,
                  maximum=ref.STATIONARITY_SLOPE, steps=n_steps, gamma=gamma)]


def run_suites(names, settings: dict = None) -> dict:
    """Run the named suites; ``settings`` holds ``[verify]`` overrides."""
    s = settings or {}
    runners = {
        "grad": lambda: grad_suite(h=s.get("fd_h", ref.FD_H), tolerance=s.get("fd_tolerance", ref.FD_TOLERANCE)),
        "oracle": oracle_suite,
        "pl": lambda: pl_suite(s.get("pl_samples", ref.PL_SAMPLES), s.get("pl_radius", ref.PL_RADIUS)),
        "stationarity": lambda: stationarity_suite(
            s.get("stationarity_steps", ref.STATIONARITY_STEPS), s.get("stationarity_gamma", ref.STATIONARITY_GAMMA)
        ),
    }
    unknown = [n for n in names if n not in runners]
    if unknown:
        raise InvalidArgument(f"unknown suite(s) {unknown}; choose from {list(SUITE_NAMES)}")
    suites = {}
    for name in names:
        checks = runners[name]()
        suites[name] = {"pass": all(c["pass"] for c in checks), "checks": checks}
    return {"pass": all(v["pass"] for v in suites.values()), "suites": suites}
