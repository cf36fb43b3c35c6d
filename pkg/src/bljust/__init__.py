"""Bilevel joint unsupervised and supervised training (BL-JUST) at desk scale.

The package trains a shared backbone with a supervised head and an
unsupervised reconstruction head by penalty-based bilevel gradient descent,
alongside the usual baselines, and ships the checks that validate it.
"""
from .errors import InvalidArgument, InvalidState, NumericError
from .models import ModelSpec
from .objectives import QuadraticBilevel
from .params import InitScheme, ParamVector, Partition, Rng, load_params, save_params
from .pbgd import BlJustConfig, PenaltySchedule, pbgd_step, penalty_at, run_bljust
from .problems import MlpProblem, QuadraticProblem
from .strategies import StrategyConfig, run_ablation, run_strategy

__version__ = "0.1.0"

__all__ = [
    "BlJustConfig", "InitScheme", "InvalidArgument", "InvalidState", "MlpProblem", "ModelSpec", "NumericError",
    "ParamVector", "Partition", "PenaltySchedule", "QuadraticBilevel", "QuadraticProblem", "Rng",
    "StrategyConfig", "load_params", "pbgd_step", "penalty_at", "run_ablation", "run_bljust", "run_strategy",
    "save_params",
]
