"""Frozen reference configurations used by the verification suites and the acceptance tests.

Everything here was fixed before the outcome it is checked against was
inspected; changing a value changes what the acceptance suite measures.
"""
from __future__ import annotations

from .data import SyntheticTask, generate
from .models import ModelSpec
from .objectives import LabeledBatch, QuadraticBilevel, make_unlabeled_batch
from .params import InitScheme, Rng, init_params
from .pbgd import BlJustConfig, PenaltySchedule
from .problems import MlpProblem, QuadraticProblem

# --- gradient check grid -------------------------------------------------

FD_SPECS = (
    ModelSpec(3, (4,), "tanh", 3),
    ModelSpec(4, (5, 3), "tanh", 2),
    ModelSpec(2, (), "identity", 2),
    ModelSpec(5, (6,), "relu", 4),
    ModelSpec(3, (4, 4, 3), "tanh", 3),
    ModelSpec(4, (3,), "identity", 2),
)
FD_SEEDS = (0, 1, 2, 3)
FD_INIT = InitScheme("uniform", 0.8)
FD_BATCH = 8
FD_MASK_PROB = 0.5
FD_H = 1e-6
FD_TOLERANCE = 1e-5


def fd_case(spec: ModelSpec, seed: int):
    """Parameters plus one labeled and one masked batch for a grid cell."""
    rng = Rng(seed).derive("fd", spec.input_dim, spec.hidden_dims, spec.activation, spec.num_classes)
    params = init_params(spec.partition, FD_INIT, rng.derive("params").state)
    x = rng.derive("x").normal((FD_BATCH, spec.input_dim))
    y = rng.derive("y").integers(spec.num_classes, FD_BATCH)
    unl = make_unlabeled_batch(rng.derive("xu").normal((FD_BATCH, spec.input_dim)), FD_MASK_PROB, rng.derive("mask"))
    return params, LabeledBatch(x, y), unl


# --- quadratic family ----------------------------------------------------

QUAD = QuadraticBilevel(a=1.0, b=2.0, c=3.0, d=-1.0)

# Step sizes respect alpha < 1 / L_gamma with L_gamma = 2 (1 + gamma_K) = 21.6.
QUAD_CONFIG = BlJustConfig(
    rho=0.1, alpha=0.02, tau=0.0002, gamma_max=10.0, K=50, N1=50, N2=20, N3=10, seed=0,
)
QUAD_GAP_TOLERANCE = 0.05
QUAD_GRAD_TOLERANCE = 1e-2
QUAD_NORM_RATIO = 10.0

ARGMIN_GAMMAS = (0.0, 0.5, 1.0, 2.0, 10.0)
ARGMIN_TOLERANCE = 1e-6

STATIONARITY_GAMMA = 1.0
STATIONARITY_STEPS = 5000
STATIONARITY_ALPHA = 0.05
STATIONARITY_SLOPE = -0.9

PL_SAMPLES = 200
PL_RADIUS = 5.0
PL_MU = 0.25
PL_TOLERANCE = 1e-9


def quadratic_problem() -> QuadraticProblem:
    return QuadraticProblem(QUAD)


def stationarity_config(seed: int = 0) -> BlJustConfig:
    """One long constant-penalty joint segment with every step recorded."""
    return BlJustConfig(
        alpha=STATIONARITY_ALPHA, K=1, N1=0, N2=STATIONARITY_STEPS, N3=0, seed=seed, step_stride=1,
        gamma_max=STATIONARITY_GAMMA, schedule=PenaltySchedule.constant(STATIONARITY_GAMMA, 1),
    )


# --- learned reference task ----------------------------------------------

REFERENCE_PRESET = "100-860"
REFERENCE_TASK = SyntheticTask.from_preset(
    REFERENCE_PRESET, input_dim=16, latent_dim=4, num_classes=4, separation=2.0, ambient_noise=0.3,
)
REFERENCE_HIDDEN = (8,)
# fan-in scale 1 / sqrt(input_dim)
REFERENCE_INIT = InitScheme("uniform", 0.25)
REFERENCE_CONFIG = BlJustConfig(
    rho=0.05, alpha=0.05, tau=0.01, gamma_max=1.0, K=20, N1=10, N2=10, N3=20,
)
REFERENCE_SEEDS = tuple(range(10))
REFERENCE_MIN_WINS = 8


def reference_problem() -> MlpProblem:
    task = REFERENCE_TASK
    spec = ModelSpec(task.input_dim, REFERENCE_HIDDEN, "tanh", task.num_classes)
    return MlpProblem(spec, generate(task), init=REFERENCE_INIT)
