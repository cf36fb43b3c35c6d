import itertools
import math

import numpy as np
import pytest

from bljust import checks
from bljust.errors import InvalidArgument, NumericError
from bljust.models import ModelSpec, unpack
from bljust.objectives import (
    QUAD_PARTITION,
    LabeledBatch,
    QuadraticBilevel,
    UnlabeledBatch,
    make_unlabeled_batch,
    quad_eval,
    quad_penalized_argmin,
)
from bljust.params import InitScheme, ParamVector, Partition, Rng, init_params
from bljust.pbgd import BlJustConfig, PenaltySchedule, run_bljust
from bljust.trace import RunTrace
from bljust.verify import (
    BoundObjective,
    fd_check,
    loglog_slope,
    oracle_bilevel_gap,
    pl_probe,
    stationarity_series,
    supervised_objective,
    unsupervised_objective,
)

Q = QuadraticBilevel(a=1.0, b=2.0, c=3.0, d=-1.0)


def qp(*values):
    return ParamVector(np.array(values, dtype=float), QUAD_PARTITION)


class TestFd:
    def test_linear_model_squared_loss(self):
        """No hidden layer, identity activation: the masked MSE is quadratic in the parameters.

        Central differences carry no truncation error on a quadratic, so a wide
        stencil isolates the exactness claim from cancellation roundoff.
        """
        spec = ModelSpec(4, (), "identity", 2)
        params = init_params(spec.partition, InitScheme("uniform", 0.8), 3)
        x = Rng(4).normal((6, 4))
        batch = UnlabeledBatch(x, np.ones_like(x, dtype=bool), 1.0, fill="none")
        report = fd_check(unsupervised_objective(spec, batch), params, h=1e-3)
        assert report.max_rel_error <= 1e-9
        assert report.checked == spec.partition.total and not report.skipped

    def test_tanh_grid_point(self):
        spec = ModelSpec(3, (4,), "tanh", 3)
        params = init_params(spec.partition, InitScheme("uniform", 0.8), 0)
        batch = LabeledBatch(Rng(1).normal((5, 3)), np.array([0, 1, 2, 0, 1]))
        assert fd_check(supervised_objective(spec, batch), params).max_rel_error <= 1e-5

    def test_relu_kink_is_skipped(self):
        """Place one hidden pre-activation at 1e-7 so the stencil on its bias straddles zero."""
        spec = ModelSpec(2, (3,), "relu", 2)
        data = init_params(spec.partition, InitScheme("uniform", 0.8), 5).data.copy()
        (w, b), = unpack(spec, data)[0]
        x = np.array([[0.5, -1.0]])
        b[0] = 1e-7 - float(x[0] @ w[:, 0])
        params = ParamVector(data, spec.partition)
        report = fd_check(supervised_objective(spec, LabeledBatch(x, np.array([1]))), params)
        bias_index = 2 * 3
        assert bias_index in report.skipped
        assert report.checked + len(report.skipped) == spec.partition.total

    def test_bad_step(self):
        with pytest.raises(InvalidArgument):
            fd_check(BoundObjective(lambda p, b: quad_eval(Q, p, "lower")), qp(0, 0, 0), h=0.0)

    def test_non_finite_names_coordinate(self):
        def blowup(p, b):
            value = math.inf if abs(p.data[1]) > 0 else 0.0
            return value, np.zeros(3)

        with pytest.raises(NumericError) as info:
            fd_check(BoundObjective(blowup), qp(0, 0, 0))
        assert info.value.coordinate == 1

    def test_grad_suite_passes(self):
        results = checks.grad_suite()
        assert len(results) == 6 * 4 * 2
        assert all(c["pass"] for c in results)


class TestOracle:
    def test_at_solution(self):
        assert oracle_bilevel_gap(Q, qp(3, 2, -1)) == 0.0

    @pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0, 7.0, 100.0])
    def test_penalized_argmin_gap(self, gamma):
        gap = oracle_bilevel_gap(Q, qp(*quad_penalized_argmin(Q, gamma)))
        assert gap == pytest.approx(abs(Q.a - Q.c) / (1 + gamma), rel=1e-14)

    def test_monotone(self):
        gaps = [oracle_bilevel_gap(Q, qp(*quad_penalized_argmin(Q, g))) for g in np.linspace(0, 50, 200)]
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))

    def test_wrong_partition(self):
        with pytest.raises(InvalidArgument):
            oracle_bilevel_gap(Q, ParamVector(np.zeros(4), Partition(2, 1, 1)))

    def test_numerical_argmin_matches_closed_form(self):
        assert all(c["pass"] for c in checks.argmin_checks())

    def test_schedule_bitwise(self):
        assert all(c["pass"] for c in checks.schedule_checks())


def lower(p):
    return quad_eval(Q, p, "lower")


class TestPl:
    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_quadratic_mu(self, seed):
        probe = pl_probe(lower, qp(3, 2, -1), 200, 5.0, 0.0, Rng(seed))
        assert abs(probe.mu_hat - 0.25) <= 1e-9
        assert not probe.witnesses

    def test_single_sample_at_minimizer(self):
        probe = pl_probe(lower, qp(3, 2, -1), 1, 0.0, 0.0, Rng(0))
        assert probe.excluded == 1 and not probe.witnesses and math.isnan(probe.mu_hat)

    def test_constant_g(self):
        probe = pl_probe(lambda p: (1.5, np.zeros(3)), qp(0, 0, 0), 20, 1.0, 1.5, Rng(0))
        assert probe.excluded == 20 and not probe.witnesses

    def test_flat_but_above_value_is_witness(self):
        probe = pl_probe(lambda p: (1.0, np.zeros(3)), qp(0, 0, 0), 3, 1.0, 0.0, Rng(0))
        assert len(probe.witnesses) == 3

    def test_needs_samples(self):
        with pytest.raises(InvalidArgument):
            pl_probe(lower, qp(0, 0, 0), 0, 1.0, 0.0, Rng(0))

    def test_suite(self):
        assert all(c["pass"] for c in checks.pl_suite())


def constant_gamma_run(problem, n_steps, stride, gamma=1.0, alpha=0.05):
    cfg = BlJustConfig(rho=0.1, alpha=alpha, tau=0.1, gamma_max=gamma, K=1, N1=0, N2=n_steps, N3=0,
                       step_stride=stride, schedule=PenaltySchedule.constant(gamma, 1))
    return run_bljust(problem, cfg)[1]


class TestStationarity:
    def test_quadratic_slope(self, quad_problem):
        series = stationarity_series(constant_gamma_run(quad_problem, 5000, 1), 1.0)
        assert len(series) == 1
        assert loglog_slope(series[0]) <= -0.9

    @pytest.mark.parametrize("stride", [2, 5, 10])
    def test_stride_invariance(self, quad_problem, stride):
        full = stationarity_series(constant_gamma_run(quad_problem, 100, 1))[0]
        thin = stationarity_series(constant_gamma_run(quad_problem, 100, stride))[0]
        assert np.array_equal(thin.n, full.n[stride - 1::stride])
        assert np.array_equal(thin.mean, full.mean[stride - 1::stride])

    def test_all_zero(self):
        class Flat:
            partition = QUAD_PARTITION

            def initial_params(self, seed):
                return qp(0, 0, 0)

            def upper(self, p, batch=None):
                return 0.0, np.zeros(3)

            lower = eval_upper = eval_lower = upper

            def upper_batches(self, rng):
                return itertools.repeat(None)

            lower_batches = upper_batches

        series = stationarity_series(constant_gamma_run(Flat(), 20, 1))[0]
        assert not series.mean.any()

    def test_ramped_run_has_one_series_per_epoch(self, quad_problem):
        cfg = BlJustConfig(K=4, N1=2, N2=5, N3=0, gamma_max=1.0, step_stride=1)
        series = stationarity_series(run_bljust(quad_problem, cfg)[1])
        assert [s.epoch for s in series] == [1, 2, 3, 4]
        assert [s.gamma for s in series] == [0.0, 0.25, 0.5, 0.75]

    def test_missing_steps(self, quad_problem):
        with pytest.raises(InvalidArgument):
            stationarity_series(constant_gamma_run(quad_problem, 10, 0))
        with pytest.raises(InvalidArgument):
            stationarity_series(RunTrace())

    def test_suite(self):
        assert all(c["pass"] for c in checks.stationarity_suite())


def test_bljust_gap_within_invariant():
    """The terminal gap is at most the gap at gamma_K's penalized argmin plus 0.01."""
    from bljust.pbgd import penalty_at
    from bljust.reference import QUAD_CONFIG, quadratic_problem

    problem = quadratic_problem()
    params, _ = run_bljust(problem, QUAD_CONFIG)
    gamma_K = penalty_at(QUAD_CONFIG.schedule, QUAD_CONFIG.K)
    bound = oracle_bilevel_gap(problem.quad, qp(*quad_penalized_argmin(problem.quad, gamma_K)))
    assert oracle_bilevel_gap(problem.quad, params) <= bound + 0.01


def test_run_suites_report_shape():
    report = checks.run_suites(["pl"])
    assert set(report) == {"pass", "suites"} and set(report["suites"]) == {"pl"}
    for check in report["suites"]["pl"]["checks"]:
        assert isinstance(check["pass"], bool) and "name" in check
    with pytest.raises(InvalidArgument):
        checks.run_suites(["nope"])


def test_make_unlabeled_batch_rate():
    batch = make_unlabeled_batch(np.zeros((200, 50)), 0.1, Rng(0))
    assert 0.08 < batch.mask.mean() < 0.12
