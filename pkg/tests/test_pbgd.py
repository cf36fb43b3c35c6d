import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bljust.errors import InvalidArgument, NumericError
from bljust.objectives import QUAD_PARTITION, quad_penalized_argmin
from bljust.params import ParamVector, Rng
from bljust.pbgd import (
    BlJustConfig,
    PenaltySchedule,
    descend,
    explore_epoch,
    finetune,
    pbgd_step,
    penalty_at,
    run_bljust,
)
from bljust.reference import QUAD_CONFIG

NONE = itertools.repeat(None)


def qp(theta, phi, eta):
    return ParamVector(np.array([theta, phi, eta], dtype=float), QUAD_PARTITION)


class TestSchedule:
    def test_literal_ramp(self):
        s = PenaltySchedule("linear_ramp", 0.2, 100)
        assert penalty_at(s, 1) == 0.0
        assert penalty_at(s, 2) == 0.002
        assert penalty_at(s, 100) == 99 * (0.2 / 100)

    def test_constant(self):
        s = PenaltySchedule.constant(0.2, 7)
        assert {penalty_at(s, k) for k in range(1, 8)} == {0.2}

    def test_ramp_to_max(self):
        s = PenaltySchedule("linear_ramp", 0.2, 100, ramp_to_max=True)
        assert penalty_at(s, 1) == 0.0 and penalty_at(s, 100) == 0.2
        assert penalty_at(PenaltySchedule("linear_ramp", 0.2, 1, ramp_to_max=True), 1) == 0.2

    @pytest.mark.parametrize("k", [0, 101])
    def test_out_of_range(self, k):
        with pytest.raises(InvalidArgument):
            penalty_at(PenaltySchedule("linear_ramp", 0.2, 100), k)

    @given(st.floats(0, 1e3), st.integers(1, 300), st.booleans())
    def test_monotone_from_zero(self, gamma_max, K, to_max):
        s = PenaltySchedule("linear_ramp", gamma_max, K, ramp_to_max=to_max)
        values = [penalty_at(s, k) for k in range(1, K + 1)]
        assert values[0] == 0.0 or (K == 1 and to_max)
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert max(values) <= gamma_max


class TestPbgdStep:
    def test_hand_example(self, quad_problem):
        p = qp(0.0, 2.0, -1.0)
        _, gf = quad_problem.upper(p)
        _, gg = quad_problem.lower(p)
        assert (gf[0], gg[0]) == (-2.0, -6.0)
        assert pbgd_step(p, gf, gg, 0.1, 1.0).theta[0] == pytest.approx(0.8, abs=1e-15)

    def test_zero_gamma_is_supervised_step(self):
        p = qp(0.5, 1.0, 3.0)
        gf = np.array([1.0, -2.0, 0.0])
        gg = np.array([4.0, 0.0, 5.0])
        out = pbgd_step(p, gf, gg, 0.1, 0.0)
        assert out.eta[0] == 3.0
        assert np.array_equal(out.data, p.data - 0.1 * gf)

    def test_zero_gradients(self):
        p = qp(0.5, 1.0, 3.0)
        assert pbgd_step(p, np.zeros(3), np.zeros(3), 0.1, 5.0) == p

    def test_block_updates(self):
        p = qp(0.0, 0.0, 0.0)
        out = pbgd_step(p, np.array([1.0, 2.0, 0.0]), np.array([3.0, 0.0, 4.0]), 0.5, 2.0)
        assert out.data.tolist() == [-0.5 * (1 + 2 * 3), -0.5 * 2, -0.5 * 2 * 4]

    def test_eta_gamma_override(self):
        p = qp(0.0, 0.0, 0.0)
        out = pbgd_step(p, np.zeros(3), np.array([0.0, 0.0, 1.0]), 1.0, 0.5, gamma_eta=2.0)
        assert out.eta[0] == -2.0

    @pytest.mark.parametrize("gf,gg", [([0, 0, 1.0], [0, 0, 0.0]), ([0, 0, 0.0], [0, 1.0, 0]), ([0, 0], [0, 0])])
    def test_purity(self, gf, gg):
        with pytest.raises(InvalidArgument):
            pbgd_step(qp(0, 0, 0), np.array(gf), np.array(gg), 0.1, 1.0)


class TestPhases:
    def test_explore_zero_steps(self, quad_problem):
        p = qp(0.3, 0.4, 0.5)
        assert explore_epoch(quad_problem.lower, p, 0.1, 0, NONE) == p

    def test_explore_leaves_phi(self, mlp_problem):
        p = mlp_problem.initial_params(1)
        out = explore_epoch(mlp_problem.lower, p, 0.1, 5, mlp_problem.lower_batches(Rng(0)))
        assert out.phi.tobytes() == p.phi.tobytes()
        assert out.theta.tobytes() != p.theta.tobytes()

    def test_explore_converges(self, quad_problem):
        out = explore_epoch(quad_problem.lower, qp(0.0, 0.7, 0.0), 0.25, 100, NONE)
        assert abs(out.theta[0] - 3.0) < 1e-6 and abs(out.eta[0] + 1.0) < 1e-6
        assert out.phi[0] == 0.7

    def test_finetune_leaves_eta(self, mlp_problem):
        p = mlp_problem.initial_params(1)
        out = finetune(mlp_problem.upper, p, 0.1, 5, mlp_problem.upper_batches(Rng(0)))
        assert out.eta.tobytes() == p.eta.tobytes()

    def test_finetune_converges(self, quad_problem):
        out = finetune(quad_problem.upper, qp(5.0, 0.0, 0.7), 0.25, 100, NONE)
        assert abs(out.theta[0] - 1.0) < 1e-6 and abs(out.phi[0] - 2.0) < 1e-6
        assert out.eta[0] == 0.7
        assert finetune(quad_problem.upper, out, 0.25, 0, NONE) == out

    def test_negative_steps(self, quad_problem):
        with pytest.raises(InvalidArgument):
            explore_epoch(quad_problem.lower, qp(0, 0, 0), 0.1, -1, NONE)


class TestRunBljust:
    def test_config_validation(self):
        with pytest.raises(InvalidArgument):
            BlJustConfig(alpha=0.0)
        with pytest.raises(InvalidArgument):
            BlJustConfig(K=0)
        with pytest.raises(InvalidArgument):
            BlJustConfig(K=3, schedule=PenaltySchedule("linear_ramp", 1.0, 4))

    def test_one_record_per_epoch(self, mlp_problem):
        cfg = BlJustConfig(K=4, N1=2, N2=3, N3=2)
        _, trace = run_bljust(mlp_problem, cfg)
        assert [r.epoch for r in trace.epochs] == [0, 1, 2, 3, 4, 5]
        assert [r.phase for r in trace.epochs] == ["init"] + ["joint"] * 4 + ["finetune"]
        assert all(np.isfinite(r.row()[1:-1]).all() for r in trace.epochs)

    def test_deterministic(self, mlp_problem):
        cfg = BlJustConfig(K=3, N1=2, N2=3, N3=2, seed=9, step_stride=1)
        p1, t1 = run_bljust(mlp_problem, cfg)
        p2, t2 = run_bljust(mlp_problem, cfg)
        assert p1.data.tobytes() == p2.data.tobytes()
        assert t1.epoch_csv() == t2.epoch_csv() and t1.step_csv() == t2.step_csv()

    def test_seed_changes_run(self, mlp_problem):
        p1, _ = run_bljust(mlp_problem, BlJustConfig(K=2, seed=1))
        p2, _ = run_bljust(mlp_problem, BlJustConfig(K=2, seed=2))
        assert p1 != p2

    def test_eq14_decomposition(self, mlp_problem):
        """Every joint step moves the iterate by exactly -alpha * (grad_f + gamma * grad_g)."""
        cfg = BlJustConfig(K=3, N1=2, N2=4, N3=0, gamma_max=0.9, step_stride=1, record_params=True)
        final, trace = run_bljust(mlp_problem, cfg)
        steps = trace.steps
        joint = [i for i, s in enumerate(steps) if s.phase == "joint"]
        assert len(joint) == cfg.K * cfg.N2
        for i in joint:
            s = steps[i]
            nxt = steps[i + 1].params if i + 1 < len(steps) else final.data
            expected = s.params - s.lr * (s.grad_f + s.gamma * s.grad_g)
            assert np.array_equal(nxt, expected)
            assert s.source == "f+g"

    def test_phase_purity_in_trace(self, mlp_problem):
        cfg = BlJustConfig(K=2, N1=2, N2=2, N3=2, step_stride=1)
        _, trace = run_bljust(mlp_problem, cfg)
        sources = {(s.phase, s.source) for s in trace.steps}
        assert sources == {("explore", "g"), ("joint", "f+g"), ("finetune", "f")}

    def test_degenerate_is_supervised(self, mlp_problem):
        """K=1, N1=N2=0: only the fine-tune pass runs, on the fine-tune stream."""
        cfg = BlJustConfig(K=1, N1=0, N2=0, N3=5, tau=0.1, seed=4)
        params, _ = run_bljust(mlp_problem, cfg)
        from bljust.params import derive_seed

        p0 = mlp_problem.initial_params(derive_seed(4, "init"))
        manual = descend(mlp_problem.upper, p0, 0.1, 5, mlp_problem.upper_batches(Rng(4).derive("finetune")),
                         ("theta", "phi"))
        assert params.data.tobytes() == manual.data.tobytes()

    def test_quadratic_joint_phase_matches_oracle(self, quad_problem):
        """Before fine-tuning the iterate sits at the penalized minimizer for gamma_K."""
        cfg = replace(QUAD_CONFIG, N3=0)
        params, trace = run_bljust(quad_problem, cfg)
        gamma_K = penalty_at(cfg.schedule, cfg.K)
        theta, phi, eta = quad_penalized_argmin(quad_problem.quad, gamma_K)
        assert trace.last.gamma == gamma_K
        assert abs(params.theta[0] - theta) < 1e-3
        assert abs(params.phi[0] - phi) < 1e-3
        assert abs(params.eta[0] - eta) < 1e-3

    def test_divergence_context(self, quad_problem):
        cfg = BlJustConfig(rho=0.01, alpha=5.0, tau=0.01, gamma_max=10.0, K=5, N1=1, N2=2000, N3=0)
        with pytest.raises(NumericError) as info:
            run_bljust(quad_problem, cfg)
        exc = info.value
        assert exc.phase == "joint" and exc.epoch >= 1 and exc.step >= 1
        assert exc.trace is not None and exc.trace.epochs[0].phase == "init"

    def test_lr_table(self):
        cfg = BlJustConfig(lr_decay=0.5, lr_table=((3, 0.1),))
        assert cfg.lr_scale(1) == 1.0 and cfg.lr_scale(2) == 0.5 and cfg.lr_scale(3) == 0.25 * 0.1

    def test_adamw_runs(self, mlp_problem):
        params, trace = run_bljust(mlp_problem, BlJustConfig(K=2, N1=2, N2=2, N3=2, optimizer="adamw"))
        assert np.isfinite(params.data).all() and len(trace.epochs) == 4

    def test_empty_labeled_set_is_flagged(self):
        from conftest import small_mlp

        problem = small_mlp(n_labeled=0)
        _, trace = run_bljust(problem, BlJustConfig(K=1, N1=1, N2=2, N3=0))
        assert trace.flags["empty_batch"] == 2
        assert trace.last.f == 0.0
