"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 I/O error, 4 numeric divergence.  Output directories default to
``$BLJ_OUT_DIR/<command>`` (``./blj-out/<command>`` when unset).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import experiments as ex
from .checks import SUITE_NAMES, run_suites
from .config import ConfigError, load_config
from .data import generate, write_dataset
from .errors import InvalidArgument, NumericError
from .io import atomic_write_json, atomic_write_text, csv_text
from .params import save_params
from .strategies import labeled_steps, run_strategy
from .trace import read_epoch_csv, summary_of
from .verify import oracle_bilevel_gap

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4
PLOT_SERIES = ("f", "g", "gamma", "p_hat", "gnorm_f", "gnorm_g", "gnorm_F")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("BLJ_OUT_DIR", "blj-out")) / command


def _load(path, seed=None):
    try:
        config = load_config(path)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
    return config if seed is None else config.with_seed(seed)


def _say(args, text):
    if not args.quiet:
        print(text)


def _json_safe(obj):
    """NaN and infinities become strings so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_gen_data(args) -> int:
    config = _load(args.config)
    if config.is_quadratic:
        raise CliError("gen-data needs an MLP [data] section, not a quadratic model", EXIT_CONFIG)
    task = config.task()
    out = _out_dir(args, "gen-data")
    manifest = write_dataset(generate(task), out)
    _say(args, f"wrote {task.n_labeled} labeled / {task.n_unlabeled} unlabeled rows to {out} (seed {manifest['task']['seed']})")
    return EXIT_OK


def cmd_run(args) -> int:
    config = _load(args.config, args.seed)
    sc = config.strategy_config()
    config.validate()
    try:
        problem = config.problem()
    except ConfigError:
        raise
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read data: {exc}", EXIT_IO) from None
    out = _out_dir(args, "run")
    summary = {
        "config": config.resolved(),
        "seed": sc.train.seed,
        "strategy": sc.kind,
        "effective_strategy": sc.effective_kind,
        "labeled_steps": labeled_steps(sc),
    }
    try:
        params, trace = run_strategy(problem, sc)
        code = EXIT_OK
        summary["status"] = "ok"
    except NumericError as exc:
        trace = exc.trace
        params = trace.final_params if trace is not None else None
        code = EXIT_DIVERGED
        summary["status"] = "diverged"
        summary["error"] = {"message": str(exc), "epoch": exc.epoch, "phase": exc.phase, "step": exc.step,
                            "coordinate": exc.coordinate}
    try:
        out.mkdir(parents=True, exist_ok=True)
        if trace is not None:
            atomic_write_text(out / "trace.csv", trace.epoch_csv())
            if trace.steps:
                atomic_write_text(out / "steps.csv", trace.step_csv())
            if trace.epochs:
                summary["result"] = summary_of(trace)
            summary["meta"] = {k: v for k, v in trace.meta.items() if k not in ("strategy", "effective_strategy")}
        if params is not None:
            save_params(params, out / "params.bin")
            if config.is_quadratic:
                summary["oracle_gap"] = oracle_bilevel_gap(problem.quad, params)
            elif problem.data.y_labeled.size:
                summary["train_accuracy"] = problem.accuracy(params, problem.data.x_labeled, problem.data.y_labeled)
        atomic_write_json(out / "summary.json", _json_safe(summary))
    except OSError as exc:
        raise CliError(f"cannot write outputs to {out}: {exc}", EXIT_IO) from None
    if code == EXIT_DIVERGED:
        print(f"diverged: {summary['error']['message']} (partial trace in {out})", file=sys.stderr)
    elif trace.epochs:
        r = summary["result"]
        _say(args, f"{sc.effective_kind}: f={r['final_f']:.6g} g={r['final_g']:.6g} "
                   f"|grad f|={r['gnorm_f']:.3g} |grad g|={r['gnorm_g']:.3g}")
    return code


def _write_table(out: Path, stem: str, columns, rows, markdown: str):
    try:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / f"{stem}.csv", ex.rows_csv(columns, rows))
        atomic_write_text(out / f"{stem}.md", markdown)
    except OSError as exc:
        raise CliError(f"cannot write outputs to {out}: {exc}", EXIT_IO) from None


def _labels(paths) -> list:
    stems = [Path(p).stem for p in paths]
    return [s if stems.count(s) == 1 else f"{s}#{i + 1}" for i, s in enumerate(stems)]


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise CliError("compare needs at least two configs", EXIT_CONFIG)
    configs = [(label, _load(path)) for label, path in zip(_labels(args.configs), args.configs)]
    base = args.seed if args.seed is not None else configs[0][1].get("strategy", "seed")
    rows = ex.compare(configs, ex.seed_list(base, args.seeds), args.jobs)
    sizes = {}
    for label, config in configs:
        if not config.is_quadratic:
            task = config.task()
            sizes[label] = f"{task.n_labeled}/{task.n_unlabeled}"
    markdown = ex.compare_markdown(rows, sizes)
    _write_table(_out_dir(args, "compare"), "compare", ex.COMPARE_COLUMNS, rows, markdown)
    _say(args, markdown.rstrip())
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load(args.config)
    base = args.seed if args.seed is not None else config.get("strategy", "seed")
    try:
        rows = ex.ablate(config, ex.seed_list(base, args.seeds), args.jobs)
    except ConfigError:
        raise
    except InvalidArgument as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    markdown = ex.ablation_markdown(rows)
    _write_table(_out_dir(args, "ablate"), "ablate", ex.ABLATE_COLUMNS, rows, markdown)
    _say(args, markdown.rstrip())
    return EXIT_OK


def cmd_verify(args) -> int:
    settings = {}
    if args.config:
        config = _load(args.config)
        settings = {key: config.get("verify", key) for key in config.values.get("verify", {})}
    names = SUITE_NAMES if args.suite == "all" else (args.suite,)
    report = _json_safe(run_suites(names, settings))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        try:
            atomic_write_text(args.out, text + "\n")
        except OSError as exc:
            raise CliError(f"cannot write report: {exc}", EXIT_IO) from None
    if not args.quiet:
        print(text)
    return EXIT_OK if report["pass"] else EXIT_VERIFY


def cmd_plot_data(args) -> int:
    try:
        records = read_epoch_csv(args.trace)
    except OSError as exc:
        raise CliError(f"cannot read trace: {exc}", EXIT_IO) from None
    except InvalidArgument as exc:
        raise CliError(f"malformed trace: {exc}", EXIT_CONFIG) from None
    rows = [(rec.epoch, name, getattr(rec, name)) for rec in records for name in PLOT_SERIES]
    out = Path(args.out) if args.out else Path(os.environ.get("BLJ_OUT_DIR", "blj-out")) / "plot-data.csv"
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out, csv_text(("step", "series", "value"), rows))
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None
    _say(args, f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the [strategy] seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel cells for compare/ablate")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress stdout summaries")

    parser = argparse.ArgumentParser(prog="bljust", description="Bilevel joint unsupervised and supervised training.")
    parser.add_argument("--seed", type=int, default=None, help="override the [strategy] seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel cells for compare/ablate")
    parser.add_argument("--quiet", action="store_true", help="suppress stdout summaries")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", parents=[common], help="train one strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="run several configs across seeds")
    p.add_argument("--configs", nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", parents=[common], help="BL-JUST with exploration and/or fine-tuning removed")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", parents=[common], help="gradient, oracle, PL and stationarity checks")
    p.add_argument("--suite", choices=SUITE_NAMES + ("all",), default="all")
    p.add_argument("--config", help="optional file whose [verify] section overrides defaults")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot-data", parents=[common], help="tidy CSV of a trace for external plotting")
    p.add_argument("--trace", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
