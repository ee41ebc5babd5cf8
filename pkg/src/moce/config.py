"""Run configuration: defaults, named presets and the ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .evaluation import BOOTSTRAP_SAMPLES, TiePolicy
from .objectives import ObjectiveKind
from .optim import OptimizerKind
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # data
    data: str = "synthetic"
    test_data: str = ""
    time_col: str = "time"
    event_col: str = "event"
    jitter: float = 0.0
    standardize: bool = True
    synthetic_n: int = 2000
    synthetic_dim: int = 5
    synthetic_experts: int = 2
    synthetic_censoring: float = 0.2
    synthetic_seed: int = 0
    # split
    train_frac: float = 0.7
    val_frac: float = 0.1
    no_validation: bool = False
    # model
    n_experts: int = 2
    hidden: tuple = ()
    activation: str = "relu"
    # training
    objective: str = "elbo"
    optimizer: str = "adam"
    learning_rate: float = 0.001
    epochs: int = 4000
    l2_experts: float = 0.01
    patience: int | None = None
    init_scale: float = 0.1
    seed: int = 0
    # evaluation
    tie_policy: str = "strict"
    bootstrap: int = BOOTSTRAP_SAMPLES
    # experiment control
    restarts: int = 100
    jobs: int = 1
    out: str = "out"

    def __post_init__(self):
        try:
            ObjectiveKind(self.objective)
            OptimizerKind(self.optimizer)
            TiePolicy(self.tie_policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_experts < 1:
            raise ConfigError("n_experts must be at least 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.bootstrap < 2:
            raise ConfigError("bootstrap must be at least 2")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if self.activation not in ("relu", "selu", "sigmoid"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def is_synthetic(self) -> bool:
        return self.data == "synthetic"

    def train_config(self, seed=None) -> TrainConfig:
        return TrainConfig(
            objective=self.objective,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            l2_experts=self.l2_experts,
            seed=self.seed if seed is None else seed,
            patience=self.patience,
            init_scale=self.init_scale,
            tie_policy=self.tie_policy,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# Appendix hyperparameter tables; activation is not reported there, so the default applies.
PRESETS = {
    "metabric-hard": dict(optimizer="adam", learning_rate=0.001, epochs=4000, n_experts=10, hidden=(9,)),
    "gbsg-hard": dict(optimizer="adam", learning_rate=0.001, epochs=4000, n_experts=12, hidden=()),
    "support-hard": dict(optimizer="adam", learning_rate=0.001, epochs=4000, n_experts=10, hidden=(14, 14)),
    "metabric-soft": dict(optimizer="adam", learning_rate=0.0001, epochs=4000, n_experts=12, hidden=(9, 9)),
    "gbsg-soft": dict(optimizer="adam", learning_rate=0.001, epochs=4000, n_experts=5, hidden=(7,)),
    "support-soft": dict(optimizer="adam", learning_rate=0.001, epochs=4000, n_experts=5, hidden=(14,)),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "int | None":
            return None if raw.lower() in ("none", "") else int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            values.update(preset_values(raw))
            continue
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def preset_values(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return dict(PRESETS[name])


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def dumps(cfg: RunConfig) -> str:
    lines = ["# resolved run configuration"]
    lines += [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def resolve(preset: str | None = None, config_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then preset, then config file, then explicit overrides."""
    values = {}
    if preset:
        values.update(preset_values(preset))
    if config_path:
        values.update(read_config(config_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
