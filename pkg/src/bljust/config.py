"""Line-oriented run configuration files.

::

    # comment
    [model]
    hidden_dims = 8, 4
    [strategy]
    kind = bljust
    K = 20

Sections are ``[model]``, ``[data]``, ``[strategy]``, ``[schedule]`` and
``[verify]``.  Unknown sections or keys, duplicate keys and malformed values
are errors that carry the line number.  :meth:`RunConfig.resolved` returns
every setting including defaults, and is what run outputs echo.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import GENERATORS, OVERLAP_MODES, PRESETS, SyntheticTask, generate, read_dataset
from .errors import InvalidArgument
from .models import ACTIVATIONS, ModelSpec
from .objectives import QuadraticBilevel
from .params import InitScheme
from .pbgd import SCHEDULE_KINDS, BlJustConfig, PenaltySchedule
from .problems import MlpProblem, QuadraticProblem
from .strategies import KINDS, StrategyConfig


class ConfigError(InvalidArgument):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else f"{source or '<config>'}: "
        super().__init__(where + message)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if text.lower() in ("", "none", "auto") else int(text)


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text
    return parse


def _lr_table(text):
    pairs = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        epoch, sep, factor = item.partition(":")
        if not sep:
            raise ValueError(f"lr_table entries are epoch:factor, got {item!r}")
        pairs.append((int(epoch), float(factor)))
    return tuple(pairs)


def _init(text):
    return str(InitScheme.parse(text))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{e}:{f!r}" for e, f in value)
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TASK = SyntheticTask()
_TRAIN = BlJustConfig()
_STRAT = StrategyConfig()

# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "kind": (_choice("mlp", "quadratic"), "mlp"),
        "hidden_dims": (_ints, (8,)),
        "activation": (_choice(*ACTIVATIONS), "tanh"),
        "init": (_init, "uniform:0.5"),
        "a": (float, 1.0),
        "b": (float, 2.0),
        "c": (float, 3.0),
        "d": (float, -1.0),
    },
    "data": {
        "path": (str, ""),
        "preset": (_choice("", *PRESETS), ""),
        "generator": (_choice(*GENERATORS), _TASK.generator),
        "input_dim": (int, _TASK.input_dim),
        "num_classes": (int, _TASK.num_classes),
        "n_labeled": (_optional_int, None),
        "n_unlabeled": (_optional_int, None),
        "label_noise": (float, _TASK.label_noise),
        "overlap_mode": (_choice(*OVERLAP_MODES), _TASK.overlap_mode),
        "seed": (int, _TASK.seed),
        "separation": (float, _TASK.separation),
        "noise": (float, _TASK.noise),
        "latent_dim": (int, _TASK.latent_dim),
        "ambient_noise": (float, _TASK.ambient_noise),
        "teacher_hidden": (int, _TASK.teacher_hidden),
        "batch_sup": (int, 32),
        "batch_unsup": (int, 128),
        "mask_prob": (float, 0.1),
        "eval_seed": (int, 0),
    },
    "strategy": {
        "kind": (_choice(*KINDS), "bljust"),
        "seed": (int, _TRAIN.seed),
        "rho": (float, _TRAIN.rho),
        "alpha": (float, _TRAIN.alpha),
        "tau": (float, _TRAIN.tau),
        "K": (int, _TRAIN.K),
        "N1": (int, _TRAIN.N1),
        "N2": (int, _TRAIN.N2),
        "N3": (int, _TRAIN.N3),
        "lr_decay": (float, _TRAIN.lr_decay),
        "lr_table": (_lr_table, ()),
        "eta_gamma": (_choice("epoch", "max"), _TRAIN.eta_gamma),
        "optimizer": (_choice("sgd", "adamw"), _TRAIN.optimizer),
        "step_stride": (int, _TRAIN.step_stride),
        "pl_rounds": (int, _STRAT.pl_rounds),
        "pl_continue": (_bool, _STRAT.pl_continue),
        "pretrain_epochs": (_optional_int, None),
        "finetune_epochs": (_optional_int, None),
        "pt_steps": (_optional_int, None),
        "just_gamma": (float, _STRAT.just_gamma),
        "pretrain_init": (_bool, _STRAT.pretrain_init),
        "ao_sup_steps": (_optional_int, None),
        "ao_unsup_steps": (_optional_int, None),
    },
    "schedule": {
        "kind": (_choice(*SCHEDULE_KINDS), "linear_ramp"),
        "gamma_max": (float, _TRAIN.gamma_max),
        "constant_value": (float, 0.0),
        "ramp_to_max": (_bool, False),
    },
    "verify": {
        "fd_h": (float, 1e-6),
        "fd_tolerance": (float, 1e-5),
        "pl_samples": (int, 200),
        "pl_radius": (float, 5.0),
        "stationarity_steps": (int, 5000),
        "stationarity_gamma": (float, 1.0),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: explicit values plus the line each came from."""

    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str = None

    def get(self, section, key):
        return self.values.get(section, {}).get(key, SCHEMA[section][key][1])

    def has(self, section, key) -> bool:
        return key in self.values.get(section, {})

    def with_value(self, section, key, value) -> "RunConfig":
        values = {s: dict(kv) for s, kv in self.values.items()}
        values.setdefault(section, {})[key] = value
        return replace(self, values=values)

    def with_seed(self, seed: int) -> "RunConfig":
        return self.with_value("strategy", "seed", int(seed))

    def _error(self, message, section, key=None):
        """Point at ``key``, else at a key of ``section`` named in the message, else at the header."""
        if key is None:
            named = [k for (sec, k) in self.lines if sec == section and k and k in message]
            key = max(named, key=len) if named else None
        return ConfigError(message, self.lines.get((section, key)) or self.lines.get((section, None)), self.source)

    # --- builders -----------------------------------------------------------

    @property
    def is_quadratic(self) -> bool:
        return self.get("model", "kind") == "quadratic"

    def task(self) -> SyntheticTask:
        preset = self.get("data", "preset")
        counts = PRESETS.get(preset, (_TASK.n_labeled, _TASK.n_unlabeled))
        kw = {
            f.name: self.get("data", f.name)
            for f in fields(SyntheticTask)
            if f.name not in ("n_labeled", "n_unlabeled")
        }
        for key, default in zip(("n_labeled", "n_unlabeled"), counts):
            value = self.get("data", key)
            kw[key] = default if value is None else value
        try:
            return SyntheticTask(**kw)
        except InvalidArgument as exc:
            raise self._error(str(exc), "data") from None

    def model_spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        try:
            return ModelSpec(input_dim, self.get("model", "hidden_dims"), self.get("model", "activation"), num_classes)
        except InvalidArgument as exc:
            raise self._error(str(exc), "model") from None

    def problem(self, dataset=None):
        """Build the problem; ``dataset`` overrides both ``path`` and generation.

        Reading ``[data] path`` may raise ``OSError``; callers map that to an
        I/O failure rather than a configuration error.
        """
        init = InitScheme.parse(self.get("model", "init"))
        if self.is_quadratic:
            quad = QuadraticBilevel(*(self.get("model", k) for k in "abcd"))
            return QuadraticProblem(quad, init)
        if dataset is None:
            path = self.get("data", "path")
            if path:
                base = Path(path)
                if not base.is_absolute() and self.source:
                    base = Path(self.source).parent / base
                dataset = read_dataset(base)
            else:
                dataset = generate(self.task())
        spec = self.model_spec(dataset.input_dim, max(self.get("data", "num_classes"), _num_classes(dataset)))
        try:
            return MlpProblem(
                spec, dataset,
                batch_sup=self.get("data", "batch_sup"),
                batch_unsup=self.get("data", "batch_unsup"),
                mask_prob=self.get("data", "mask_prob"),
                init=init,
                eval_seed=self.get("data", "eval_seed"),
            )
        except InvalidArgument as exc:
            raise self._error(str(exc), "data") from None

    def schedule(self) -> PenaltySchedule:
        K = self.get("strategy", "K")
        try:
            return PenaltySchedule(
                self.get("schedule", "kind"),
                gamma_max=self.get("schedule", "gamma_max"),
                num_epochs=K,
                constant_value=self.get("schedule", "constant_value"),
                ramp_to_max=self.get("schedule", "ramp_to_max"),
            )
        except InvalidArgument as exc:
            raise self._error(str(exc), "schedule") from None

    def train_config(self) -> BlJustConfig:
        s = lambda key: self.get("strategy", key)  # noqa: E731
        try:
            return BlJustConfig(
                rho=s("rho"), alpha=s("alpha"), tau=s("tau"), K=s("K"), N1=s("N1"), N2=s("N2"), N3=s("N3"),
                seed=s("seed"), lr_decay=s("lr_decay"), lr_table=s("lr_table"), eta_gamma=s("eta_gamma"),
                optimizer=s("optimizer"), step_stride=s("step_stride"),
                gamma_max=self.get("schedule", "gamma_max"), schedule=self.schedule(),
            )
        except InvalidArgument as exc:
            if isinstance(exc, ConfigError):
                raise
            raise self._error(str(exc), "strategy") from None

    def strategy_config(self) -> StrategyConfig:
        s = lambda key: self.get("strategy", key)  # noqa: E731
        try:
            return StrategyConfig(
                kind=s("kind"), train=self.train_config(), pl_rounds=s("pl_rounds"), pl_continue=s("pl_continue"),
                pretrain_epochs=s("pretrain_epochs"), finetune_epochs=s("finetune_epochs"), pt_steps=s("pt_steps"),
                just_gamma=s("just_gamma"), pretrain_init=s("pretrain_init"),
                ao_sup_steps=s("ao_sup_steps"), ao_unsup_steps=s("ao_unsup_steps"),
            )
        except InvalidArgument as exc:
            if isinstance(exc, ConfigError):
                raise
            raise self._error(str(exc), "strategy") from None

    def validate(self) -> "RunConfig":
        """Build every piece that does not need data on disk; raises ConfigError."""
        self.strategy_config()
        if not self.is_quadratic:
            self.task()
            if self.get("data", "path") == "":
                self.model_spec(self.get("data", "input_dim"), self.get("data", "num_classes"))
        return self

    def resolved(self) -> dict:
        """Every key of every section, defaults included, as plain JSON values."""
        out = {}
        for section, keys in SCHEMA.items():
            out[section] = {}
            for key in keys:
                value = self.get(section, key)
                if isinstance(value, tuple):
                    value = [list(v) if isinstance(v, tuple) else v for v in value]
                out[section][key] = value
        if not self.is_quadratic:
            task = self.task()
            out["data"]["n_labeled"], out["data"]["n_unlabeled"] = task.n_labeled, task.n_unlabeled
        return out

    def dump(self) -> str:
        """Configuration text listing every key; parsing it gives the same settings."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {_fmt(self.get(section, key))}" for key in keys)
            lines.append("")
        return "\n".join(lines)


def _num_classes(dataset) -> int:
    labels = [y for y in (dataset.y_labeled, dataset.y_unlabeled) if y.size]
    return int(max(int(y.max()) for y in labels) + 1) if labels else 2


def parse_config(text: str, source: str = None) -> RunConfig:
    values, lines = {}, {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, source)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, source)
            values.setdefault(section, {})
            lines.setdefault((section, None), lineno)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if section is None:
            raise ConfigError(f"key {key!r} appears before any section header", lineno, source)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, source)
        if key in values[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno, source)
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(value)
        except (ValueError, InvalidArgument) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from None
        lines[(section, key)] = lineno
    return RunConfig(values, lines, source)


def load_config(path) -> RunConfig:
    """Read and parse a configuration file; ``OSError`` propagates unchanged."""
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
