import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bljust.data import PRESETS, SyntheticTask, generate, index_stream, read_dataset, write_dataset
from bljust.errors import InvalidArgument
from bljust.params import Rng
from bljust.pbgd import BlJustConfig
from bljust.strategies import StrategyConfig, run_strategy
from bljust.trace import EPOCH_COLUMNS, Recorder, RunTrace, read_epoch_csv, summary_of
from conftest import small_mlp


class TestTask:
    def test_presets(self):
        assert PRESETS == {"100-100": (500, 500), "100-860": (500, 4300), "300-2000": (750, 5000)}
        task = SyntheticTask.from_preset("300-2000", input_dim=3)
        assert (task.n_labeled, task.n_unlabeled, task.input_dim) == (750, 5000, 3)

    @pytest.mark.parametrize("kw", [
        dict(n_labeled=-1), dict(generator="moons"), dict(overlap_mode="mixed"), dict(label_noise=1.5),
        dict(num_classes=1), dict(latent_dim=9), dict(overlap_mode="labeled_subset_of_unlabeled", n_unlabeled=1),
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            SyntheticTask(**kw)

    def test_unknown_preset(self):
        with pytest.raises(InvalidArgument):
            SyntheticTask.from_preset("1-1")


class TestGenerate:
    @pytest.mark.parametrize("generator", ["gaussian_clusters", "teacher_net"])
    def test_shapes_and_labels(self, generator):
        data = generate(SyntheticTask(generator=generator, input_dim=5, num_classes=3, n_labeled=30, n_unlabeled=50))
        assert data.x_labeled.shape == (30, 5) and data.x_unlabeled.shape == (50, 5)
        assert data.y_unlabeled.shape == (50,)
        assert set(np.unique(data.y_labeled)) <= {0, 1, 2}

    def test_deterministic(self):
        task = SyntheticTask(n_labeled=20, n_unlabeled=30, seed=3)
        a, b = generate(task), generate(task)
        assert a.x_labeled.tobytes() == b.x_labeled.tobytes() and a.x_unlabeled.tobytes() == b.x_unlabeled.tobytes()

    def test_subset_overlap(self):
        data = generate(SyntheticTask(n_labeled=10, n_unlabeled=25, overlap_mode="labeled_subset_of_unlabeled"))
        assert np.array_equal(data.x_unlabeled[:10], data.x_labeled)
        assert np.array_equal(data.y_unlabeled[:10], data.y_labeled)

    def test_label_noise_changes_labels_only(self):
        clean = generate(SyntheticTask(n_labeled=400, n_unlabeled=10, num_classes=3))
        noisy = generate(SyntheticTask(n_labeled=400, n_unlabeled=10, num_classes=3, label_noise=0.3))
        assert np.array_equal(clean.x_labeled, noisy.x_labeled)
        flipped = np.mean(clean.y_labeled != noisy.y_labeled)
        assert 0.2 < flipped < 0.4

    def test_latent_subspace(self):
        data = generate(SyntheticTask(input_dim=8, latent_dim=2, n_labeled=50, n_unlabeled=50))
        assert np.linalg.matrix_rank(data.x_unlabeled, tol=1e-8) == 2

    def test_separated_clusters_are_learnable(self):
        """Two classes at separation 4 sigma: a supervised-only run reaches >= 99% train accuracy."""
        problem = small_mlp(n_labeled=300, n_unlabeled=10, separation=4.0)
        sc = StrategyConfig("ptft", train=BlJustConfig(alpha=0.2, tau=0.05, K=10, N1=0, N2=20, N3=10),
                            pretrain_epochs=0)
        params, trace = run_strategy(problem, sc)
        assert trace.meta["effective_strategy"] == "supervised"
        assert problem.accuracy(params, problem.data.x_labeled, problem.data.y_labeled) >= 0.99


class TestFiles:
    def test_round_trip(self, tmp_path):
        data = generate(SyntheticTask(n_labeled=7, n_unlabeled=9, input_dim=3, num_classes=3))
        manifest = write_dataset(data, tmp_path)
        back = read_dataset(tmp_path)
        assert manifest["seed"] == 0 and manifest["n_labeled"] == 7
        assert np.array_equal(back.x_labeled, data.x_labeled) and np.array_equal(back.y_labeled, data.y_labeled)
        assert np.array_equal(back.x_unlabeled, data.x_unlabeled)
        assert np.array_equal(back.y_unlabeled, data.y_unlabeled)
        assert back.task == data.task

    def test_empty_labeled(self, tmp_path):
        write_dataset(generate(SyntheticTask(n_labeled=0, n_unlabeled=4, input_dim=2)), tmp_path)
        assert (tmp_path / "labeled.csv").read_text() == "x_0,x_1,y\n"
        assert read_dataset(tmp_path).x_labeled.shape == (0, 2)

    def test_byte_identical(self, tmp_path):
        task = SyntheticTask(n_labeled=20, n_unlabeled=20, label_noise=0.1)
        write_dataset(generate(task), tmp_path / "a")
        write_dataset(generate(task), tmp_path / "b")
        for name in ("labeled.csv", "unlabeled.csv", "truth.csv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestIndexStream:
    @settings(max_examples=30)
    @given(st.integers(1, 50), st.integers(1, 20), st.integers(0, 1000))
    def test_each_pass_is_a_permutation(self, n, batch, seed):
        stream = index_stream(n, batch, Rng(seed))
        n_batches = -(-n // batch)
        seen = np.concatenate([next(stream) for _ in range(n_batches)])
        assert sorted(seen.tolist()) == list(range(n))

    def test_empty_pool(self):
        assert next(index_stream(0, 4, Rng(0))).size == 0

    def test_bad_batch(self):
        with pytest.raises(InvalidArgument):
            next(index_stream(5, 0, Rng(0)))


class TestTrace:
    def test_csv_round_trip(self, tmp_path, mlp_problem):
        _, trace = run_strategy(mlp_problem, StrategyConfig("bljust", train=BlJustConfig(K=3, N3=2)))
        path = tmp_path / "trace.csv"
        path.write_text(trace.epoch_csv())
        assert read_epoch_csv(path) == trace.epochs
        assert path.read_text().splitlines()[0] == ",".join(EPOCH_COLUMNS)

    @pytest.mark.parametrize("text", ["", "epoch,gamma\n", ",".join(EPOCH_COLUMNS) + "\n1,2\n",
                                      ",".join(EPOCH_COLUMNS) + "\nx,0,0,0,0,0,0,0,joint\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "t.csv"
        path.write_text(text)
        with pytest.raises(InvalidArgument):
            read_epoch_csv(path)

    def test_p_hat_uses_best_so_far(self):
        rec = Recorder()
        zeros = np.zeros(2)
        for g in (3.0, 1.0, 2.0):
            rec.epoch(epoch=0, phase="joint", gamma=0.0, f=0.0, g=g, grad_f=zeros, grad_g=zeros)
        assert [r.p_hat for r in rec.trace.epochs] == [0.0, 0.0, 1.0]

    def test_gnorm_F(self):
        rec = Recorder()
        r = rec.epoch(epoch=1, phase="joint", gamma=2.0, f=0.0, g=0.0, grad_f=np.array([1.0, 0.0]),
                      grad_g=np.array([1.0, 2.0]))
        assert r.gnorm_F == 5.0

    def test_summary(self, mlp_problem):
        _, trace = run_strategy(mlp_problem, StrategyConfig("ao", train=BlJustConfig(K=2)))
        s = summary_of(trace)
        assert s["final_f"] == trace.last.f and s["epochs_recorded"] == 4

    def test_stride_zero_stores_no_steps(self):
        rec = Recorder(stride=0)
        v = np.ones(3)

        class P:
            data = v

        rec.step(phase="joint", epoch=1, gamma=0.0, source="f", lr=0.1, params=P, loss_f=1.0, loss_g=0.0,
                 grad_f=v, grad_g=None, update=v)
        assert rec.trace.steps == [] and rec.cum == 3.0
        assert isinstance(rec.trace, RunTrace)
