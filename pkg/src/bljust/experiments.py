"""Multi-seed comparison and ablation cells, plus their CSV and Markdown summaries.

A cell is one (configuration, seed) run.  Its training seed is
``derive_seed(seed, tag)`` with the strategy kind as the tag, so no two
strategies share random streams while identical configurations reproduce
each other exactly.  Ablation variants share the BL-JUST cell seed so that
each seed compares the variants on the same batches.
"""
from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor

from .config import RunConfig
from .errors import InvalidArgument, NumericError
from .io import csv_text
from .params import derive_seed
from .pbgd import run_bljust
from .strategies import ABLATION_VARIANTS, ablation_config, run_strategy
from .trace import summary_of

METRICS = ("final_f", "final_g", "gnorm_f", "gnorm_g")
COMPARE_COLUMNS = ("strategy", "seed") + METRICS + ("config", "cell_seed", "status")
ABLATE_COLUMNS = ("variant", "seed") + METRICS + ("cell_seed", "status")
VARIANT_LABELS = {
    "full": "BL-JUST",
    "no_finetune": "- fine-tuning",
    "no_explore": "- self-supervised exploration",
    "neither": "- both",
}

_problems = {}


def cell_seed(seed: int, tag: str) -> int:
    return derive_seed(seed, tag)


def _problem(config: RunConfig):
    key = (config.source, config.dump())
    if key not in _problems:
        _problems.clear()
        _problems[key] = config.problem()
    return _problems[key]


def _outcome(run) -> dict:
    try:
        _, trace = run()
    except NumericError as exc:
        return {**{m: float("nan") for m in METRICS}, "status": f"diverged: {exc}"}
    except (InvalidArgument, OSError) as exc:
        return {**{m: float("nan") for m in METRICS}, "status": f"failed: {exc}"}
    summary = summary_of(trace)
    return {**{m: summary[m] for m in METRICS}, "status": "ok"}


def compare_cell(config: RunConfig, label: str, seed: int) -> dict:
    kind = config.get("strategy", "kind")
    derived = cell_seed(seed, kind)

    def run():
        sc = config.with_seed(derived).strategy_config()
        return run_strategy(_problem(config), sc)

    return {"strategy": kind, "seed": seed, "config": label, "cell_seed": derived, **_outcome(run)}


def ablate_cell(config: RunConfig, variant: str, seed: int) -> dict:
    derived = cell_seed(seed, "bljust")

    def run():
        base = config.with_seed(derived).train_config()
        return run_bljust(_problem(config), ablation_config(base, variant))

    return {"variant": variant, "seed": seed, "cell_seed": derived, **_outcome(run)}


def _run_cells(fn, jobs_args, jobs: int):
    if jobs <= 1:
        return [fn(*args) for args in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*jobs_args)))


def seed_list(base: int, n: int) -> list:
    if n < 1:
        raise InvalidArgument("need at least one seed")
    return [base + i for i in range(n)]


def compare(configs, seeds, jobs: int = 1) -> list:
    """``configs`` is a list of ``(label, RunConfig)``; rows come back in config-major order."""
    if len(configs) < 2:
        raise InvalidArgument("compare needs at least two configurations")
    for _, config in configs:
        config.validate()
    args = [(config, label, seed) for label, config in configs for seed in seeds]
    return _run_cells(compare_cell, args, jobs)


def ablate(config: RunConfig, seeds, jobs: int = 1) -> list:
    """The four ablation variants for every seed, in variant-major order."""
    if config.get("strategy", "kind") != "bljust":
        raise InvalidArgument("ablate needs strategy kind 'bljust'")
    config.validate()
    args = [(config, variant, seed) for variant in ABLATION_VARIANTS for seed in seeds]
    return _run_cells(ablate_cell, args, jobs)


def rows_csv(columns, rows) -> str:
    return csv_text(columns, ([row[c] for c in columns] for row in rows))


def _mean_std(values):
    ok = [v for v in values if v == v]
    if not ok:
        return float("nan"), float("nan")
    return statistics.fmean(ok), (statistics.pstdev(ok) if len(ok) > 1 else 0.0)


def _pm(values) -> str:
    mean, std = _mean_std(values)
    return f"{mean:.4f} ± {std:.4f}"


def group(rows, key) -> dict:
    out = {}
    for row in rows:
        out.setdefault(row[key], []).append(row)
    return out


def means(rows, key, metric="final_f") -> dict:
    return {name: _mean_std([r[metric] for r in cells])[0] for name, cells in group(rows, key).items()}


def compare_markdown(rows, sizes: dict = None) -> str:
    """Means ± population std per configuration; ``sizes`` maps label to an L/U string."""
    sizes = sizes or {}
    lines = [
        "| config | strategy | L/U | runs | final_f | final_g | gnorm_f | gnorm_g |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for label, cells in group(rows, "config").items():
        ok = sum(c["status"] == "ok" for c in cells)
        stats = " | ".join(_pm([c[m] for c in cells]) for m in METRICS)
        lines.append(f"| {label} | {cells[0]['strategy']} | {sizes.get(label, '')} | {ok}/{len(cells)} | {stats} |")
    return "\n".join(lines) + "\n"


def ablation_markdown(rows) -> str:
    """Four rows in the order full, no_finetune, no_explore, neither."""
    full = {r["seed"]: r["final_f"] for r in rows if r["variant"] == "full"}
    by_variant = group(rows, "variant")
    lines = [
        "| variant | runs | final_f | final_g | gnorm_f | gnorm_g | seeds with final_f >= full |",
        "|---|---|---|---|---|---|---|",
    ]
    for variant in ABLATION_VARIANTS:
        cells = by_variant.get(variant, [])
        ok = sum(c["status"] == "ok" for c in cells)
        stats = " | ".join(_pm([c[m] for c in cells]) for m in METRICS)
        wins = "" if variant == "full" else str(sum(c["final_f"] >= full.get(c["seed"], float("nan")) for c in cells))
        lines.append(f"| {VARIANT_LABELS[variant]} | {ok}/{len(cells)} | {stats} | {wins} |")
    return "\n".join(lines) + "\n"
