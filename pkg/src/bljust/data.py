"""Synthetic labeled/unlabeled tasks, their CSV layout, and batch streams."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgument
from .io import atomic_write_json, atomic_write_text, fmt
from .params import Rng

GENERATORS = ("gaussian_clusters", "teacher_net")
OVERLAP_MODES = ("disjoint", "labeled_subset_of_unlabeled")

# labeled / unlabeled sample counts; names echo hour splits and carry no other meaning
PRESETS = {
    "100-100": (500, 500),
    "100-860": (500, 4300),
    "300-2000": (750, 5000),
}


@dataclass(frozen=True)
class SyntheticTask:
    """Recipe for a synthetic task.

    ``gaussian_clusters`` places class means at radius ``separation * noise``
    from the origin inside a random ``latent_dim``-dimensional subspace
    (the whole input space when ``latent_dim`` is 0) and adds isotropic
    ``ambient_noise`` in every input coordinate.  ``teacher_net`` labels
    standard-normal inputs with a random tanh network.
    """

    generator: str = "gaussian_clusters"
    input_dim: int = 8
    num_classes: int = 2
    n_labeled: int = 500
    n_unlabeled: int = 500
    label_noise: float = 0.0
    overlap_mode: str = "disjoint"
    seed: int = 0
    separation: float = 4.0
    noise: float = 1.0
    latent_dim: int = 0
    ambient_noise: float = 0.0
    teacher_hidden: int = 8

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidArgument(f"unknown generator {self.generator!r}")
        if self.overlap_mode not in OVERLAP_MODES:
            raise InvalidArgument(f"unknown overlap_mode {self.overlap_mode!r}")
        if self.n_labeled < 0 or self.n_unlabeled < 0:
            raise InvalidArgument("sample counts must be >= 0")
        if self.overlap_mode == "labeled_subset_of_unlabeled" and self.n_unlabeled < self.n_labeled:
            raise InvalidArgument("labeled_subset_of_unlabeled needs n_unlabeled >= n_labeled")
        if not 0.0 <= self.label_noise <= 1.0:
            raise InvalidArgument("label_noise must lie in [0, 1]")
        if self.input_dim < 1 or self.num_classes < 2:
            raise InvalidArgument("need input_dim >= 1 and num_classes >= 2")
        if not 0 <= self.latent_dim <= self.input_dim:
            raise InvalidArgument("latent_dim must lie in [0, input_dim]")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "SyntheticTask":
        if name not in PRESETS:
            raise InvalidArgument(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        n_lab, n_unl = PRESETS[name]
        return cls(n_labeled=n_lab, n_unlabeled=n_unl, **overrides)


@dataclass
class Dataset:
    x_labeled: np.ndarray
    y_labeled: np.ndarray
    x_unlabeled: np.ndarray
    y_unlabeled: np.ndarray  # hidden truth, for auditing pseudo-labels only
    task: SyntheticTask = None

    @property
    def input_dim(self) -> int:
        return self.x_labeled.shape[1]


def _class_means(task: SyntheticTask, rng: Rng) -> np.ndarray:
    k = task.latent_dim or task.input_dim
    radius = task.separation * task.noise
    if task.num_classes == 2:
        u = rng.normal(k)
        u /= np.linalg.norm(u)
        return radius * np.stack([u, -u])
    dirs = rng.normal((task.num_classes, k))
    return radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _sample(task: SyntheticTask, n: int, rng: Rng):
    if task.generator == "gaussian_clusters":
        k = task.latent_dim or task.input_dim
        means = _class_means(task, rng.derive("means"))
        if task.latent_dim:
            basis, _ = np.linalg.qr(rng.derive("basis").normal((task.input_dim, k)))
        else:
            basis = np.eye(task.input_dim)
        draws = rng.derive("samples")
        y = draws.integers(task.num_classes, n)
        z = means[y] + task.noise * draws.normal((n, k))
        x = z @ basis.T + task.ambient_noise * draws.normal((n, task.input_dim))
        return x, y
    teacher = rng.derive("teacher")
    w1 = teacher.normal((task.input_dim, task.teacher_hidden)) / np.sqrt(task.input_dim)
    b1 = 0.1 * teacher.normal(task.teacher_hidden)
    w2 = teacher.normal((task.teacher_hidden, task.num_classes)) / np.sqrt(task.teacher_hidden)
    x = rng.derive("samples").normal((n, task.input_dim))
    y = np.argmax(np.tanh(x @ w1 + b1) @ w2, axis=1)
    return x, y


def generate(task: SyntheticTask) -> Dataset:
    rng = Rng(task.seed).derive("synthetic-task")
    subset = task.overlap_mode == "labeled_subset_of_unlabeled"
    n_extra = task.n_unlabeled - task.n_labeled if subset else task.n_unlabeled
    x, y = _sample(task, task.n_labeled + n_extra, rng)
    x_lab, y_true = x[: task.n_labeled], y[: task.n_labeled]
    if subset:
        x_unl, y_unl = x, y
    else:
        x_unl, y_unl = x[task.n_labeled:], y[task.n_labeled:]

    y_lab = y_true.copy()
    if task.label_noise > 0 and task.n_labeled:
        noisy = rng.derive("label-noise")
        flip = noisy.bernoulli(task.label_noise, task.n_labeled)
        shift = 1 + noisy.integers(task.num_classes - 1, task.n_labeled)
        y_lab = np.where(flip, (y_true + shift) % task.num_classes, y_true)
    return Dataset(x_lab, y_lab.astype(np.int64), x_unl, y_unl.astype(np.int64), task)


def _rows(x, extra=None):
    for i in range(x.shape[0]):
        row = [fmt(v) for v in x[i]]
        if extra is not None:
            row.append(str(int(extra[i])))
        yield ",".join(row)


def _table(header, x, extra=None) -> str:
    return "\n".join([",".join(header), *_rows(x, extra)]) + "\n"


def write_dataset(data: Dataset, out_dir) -> dict:
    out = Path(out_dir)
    d = data.input_dim
    xcols = [f"x_{i}" for i in range(d)]
    atomic_write_text(out / "labeled.csv", _table(xcols + ["y"], data.x_labeled, data.y_labeled))
    atomic_write_text(out / "unlabeled.csv", _table(xcols, data.x_unlabeled))
    atomic_write_text(out / "truth.csv", "y\n" + "".join(f"{int(v)}\n" for v in data.y_unlabeled))
    manifest = {
        "task": asdict(data.task) if data.task else None,
        "seed": data.task.seed if data.task else None,
        "files": ["labeled.csv", "unlabeled.csv", "truth.csv"],
        "n_labeled": int(data.x_labeled.shape[0]),
        "n_unlabeled": int(data.x_unlabeled.shape[0]),
        "input_dim": d,
    }
    atomic_write_json(out / "manifest.json", manifest)
    return manifest


def _read_matrix(path: Path, label_col: bool):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    xcols = [h for h in header if h.startswith("x_")]
    d = len(xcols)
    if label_col and header[-1] != "y":
        raise InvalidArgument(f"{path}: missing label column 'y'")
    x = np.array([[float(v) for v in r[:d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    y = np.array([int(r[d]) for r in rows], dtype=np.int64) if label_col else None
    return x, y


def read_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    x_lab, y_lab = _read_matrix(root / "labeled.csv", True)
    x_unl, _ = _read_matrix(root / "unlabeled.csv", False)
    truth = root / "truth.csv"
    if truth.exists():
        with open(truth) as fh:
            next(fh)
            y_unl = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
    else:
        y_unl = np.full(x_unl.shape[0], -1, dtype=np.int64)
    task = None
    manifest = root / "manifest.json"
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        if meta.get("task"):
            task = SyntheticTask(**meta["task"])
    if x_lab.shape[1] != x_unl.shape[1] and x_lab.shape[0] and x_unl.shape[0]:
        raise InvalidArgument("labeled and unlabeled files disagree on input dimension")
    return Dataset(x_lab, y_lab, x_unl, y_unl, task)


def index_stream(n: int, batch_size: int, rng: Rng) -> Iterator[np.ndarray]:
    """Endless mini-batch indices; each pass over the data is a fresh permutation."""
    if batch_size < 1:
        raise InvalidArgument("batch_size must be >= 1")
    if n == 0:
        while True:
            yield np.zeros(0, dtype=np.int64)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]
