import sys

import pytest

from bljust.data import SyntheticTask, generate
from bljust.models import ModelSpec
from bljust.objectives import QuadraticBilevel
from bljust.params import InitScheme
from bljust.problems import MlpProblem, QuadraticProblem


def small_mlp(n_labeled=40, n_unlabeled=80, seed=0, **task_kw):
    task = SyntheticTask(input_dim=4, num_classes=2, n_labeled=n_labeled, n_unlabeled=n_unlabeled, seed=seed,
                         **task_kw)
    spec = ModelSpec(4, (6,), "tanh", 2)
    return MlpProblem(spec, generate(task), batch_sup=8, batch_unsup=16, mask_prob=0.25,
                      init=InitScheme("uniform", 0.3))


@pytest.fixture
def mlp_problem():
    return small_mlp()


@pytest.fixture
def quad_problem():
    return QuadraticProblem(QuadraticBilevel(a=1.0, b=2.0, c=3.0, d=-1.0))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
