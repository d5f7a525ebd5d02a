"""Run configuration: a TOML file with [task], [space], [screen], [search] and [output] sections.

Nested tables are flattened to dotted keys, so ``[screen.early_stop] window = 20``
and ``--set screen.early_stop.window=20`` address the same setting.
"""
from __future__ import annotations

import difflib
import sys
from dataclasses import dataclass, field
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .equiv import ProbeConfig
from .errors import ConfigError
from .expr import DEFAULT_REGISTRY
from .screen import DescentTestConfig, EarlyStopPolicy, ScreenConfig
from .search import SearchConfig
from .space import DEFAULT_CONSTRAINTS, ConstraintSet, SpaceConfig

DEFAULTS = {
    "task": {
        "name": "quadratic",
        "seed": 0,
        "dim": 20,
        "condition_number": 100.0,
        "max_eigenvalue": 10.0,
        "noise": 0.1,
        "n": 512,
        "separation": 1.5,
        "variant": "default",
        "hidden": None,
        "activation": None,
        "proxy_steps": None,
        "full_steps": None,
        "batch_size": None,
        "lr_grid": None,
        "data_dir": None,
    },
    "space": {
        "max_depth": 10,
        "operators": None,
        "remove": [],
        "constraints": None,
    },
    "screen": {
        "lambda_d": 0.15,
        "descent_batch": 25,
        "descent_dim": 100,
        "descent_steps": 5,
        "descent_seed": 0,
        "use_descent_test": True,
        "score_threshold.loss": 10.0,
        "score_threshold.accuracy": 0.20,
        "early_stop.window": 10,
        "early_stop.patience": 5,
        "early_stop.accuracy_fraction": 0.10,
    },
    "search": {
        "algorithm": "mct",
        "levels": 4,
        "samples_per_level": 32,
        "budget": None,
        "proposal_size": 5,
        "count_early_stopped_in_budget": False,
        "master_seed": 0,
        "parallelism": 1,
        "restart_per_level": False,
        "use_threshold": True,
        "attempt_factor": 100,
        "probe.seed": 0,
        "probe.dim": 256,
        "probe.steps": 41,
        "probe.quantization": 1e-6,
        "probe.horizon": 41,
    },
    "output": {
        "dir": "runs/latest",
    },
}

TASK_NAMES = ("quadratic", "logreg", "mnistnet")
ALGORITHMS = ("mct", "random")
ALL_KEYS = [f"{s}.{k}" for s, keys in DEFAULTS.items() for k in keys]


def _flatten(table: dict, prefix="") -> dict:
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _unknown_key(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, ALL_KEYS, n=1, cutoff=0.0)
    hint = f"; did you mean '{close[0]}'?" if close else ""
    return ConfigError(f"unknown config key '{key}'{hint}")


def parse_value(text: str) -> Any:
    """Interpret a --set value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: dict(k) for s, k in DEFAULTS.items()})

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.values[section][key]

    def set(self, dotted: str, value) -> None:
        if "." not in dotted:
            raise _unknown_key(dotted)
        section, key = dotted.split(".", 1)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise _unknown_key(dotted)
        self.values[section][key] = value

    def echo(self) -> dict:
        return {s: dict(v) for s, v in self.values.items()}

    # -- builders ---------------------------------------------------------

    def validate(self) -> None:
        if self["task.name"] not in TASK_NAMES:
            raise ConfigError(f"task.name must be one of {TASK_NAMES}, got {self['task.name']!r}")
        if self["search.algorithm"] not in ALGORITHMS:
            raise ConfigError(f"search.algorithm must be one of {ALGORITHMS}")
        budget = self["search.budget"]
        nominal = self["search.levels"] * self["search.samples_per_level"]
        if budget is not None and self["search.algorithm"] == "mct" and budget != nominal:
            raise ConfigError(
                f"search.budget = {budget} but levels * samples_per_level = {nominal}"
            )
        try:
            self.space_config()
            self.screen_config()
            self.search_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def budget(self) -> int:
        b = self["search.budget"]
        return b if b is not None else self["search.levels"] * self["search.samples_per_level"]

    def space_config(self) -> SpaceConfig:
        registry = DEFAULT_REGISTRY
        try:
            if self["space.operators"] is not None:
                registry = registry.subset(list(self["space.operators"]))
            if self["space.remove"]:
                registry = registry.without(*self["space.remove"])
        except Exception as exc:
            raise ConfigError(f"space: {exc}") from exc
        entries = self["space.constraints"]
        constraints = DEFAULT_CONSTRAINTS if entries is None else ConstraintSet.from_entries(entries, registry)
        return SpaceConfig(int(self["space.max_depth"]), registry, constraints)

    def screen_config(self) -> ScreenConfig:
        return ScreenConfig(
            descent=DescentTestConfig(
                lambda_d=float(self["screen.lambda_d"]),
                batch=int(self["screen.descent_batch"]),
                dim=int(self["screen.descent_dim"]),
                steps=int(self["screen.descent_steps"]),
                seed=int(self["screen.descent_seed"]),
            ),
            early_stop=EarlyStopPolicy(
                loss_window=int(self["screen.early_stop.window"]),
                patience=int(self["screen.early_stop.patience"]),
                accuracy_checkpoint_fraction=float(self["screen.early_stop.accuracy_fraction"]),
            ),
            loss_threshold=float(self["screen.score_threshold.loss"]),
            accuracy_threshold=float(self["screen.score_threshold.accuracy"]),
            use_descent_test=bool(self["screen.use_descent_test"]),
        )

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            levels=int(self["search.levels"]),
            samples_per_level=int(self["search.samples_per_level"]),
            proposal_size=int(self["search.proposal_size"]),
            count_early_stopped_in_budget=bool(self["search.count_early_stopped_in_budget"]),
            master_seed=int(self["search.master_seed"]),
            parallelism=int(self["search.parallelism"]),
            restart_per_level=bool(self["search.restart_per_level"]),
            use_threshold=bool(self["search.use_threshold"]),
            attempt_factor=int(self["search.attempt_factor"]),
            probe=ProbeConfig(
                seed=int(self["search.probe.seed"]),
                dim=int(self["search.probe.dim"]),
                steps=int(self["search.probe.steps"]),
                quantization=float(self["search.probe.quantization"]),
                horizon=int(self["search.probe.horizon"]),
            ),
        )

    def build_task(self):
        from .tasks import load_mnist, logreg_task, mnistnet_task, quadratic_task

        name = self["task.name"]
        common = {
            k: self[f"task.{k}"]
            for k in ("proxy_steps", "full_steps", "lr_grid")
            if self[f"task.{k}"] is not None
        }
        if "lr_grid" in common:
            common["lr_grid"] = tuple(float(x) for x in common["lr_grid"])
        if name == "quadratic":
            return quadratic_task(
                dim=int(self["task.dim"]),
                condition_number=float(self["task.condition_number"]),
                max_eigenvalue=float(self["task.max_eigenvalue"]),
                noise=float(self["task.noise"]),
                seed=int(self["task.seed"]),
                **common,
            )
        if self["task.batch_size"] is not None:
            common["batch_size"] = int(self["task.batch_size"])
        if name == "logreg":
            return logreg_task(
                n=int(self["task.n"]),
                dim=int(self["task.dim"]),
                seed=int(self["task.seed"]),
                separation=float(self["task.separation"]),
                **common,
            )
        data = load_mnist(self["task.data_dir"], seed=int(self["task.seed"]))
        if self["task.hidden"] is not None:
            common["hidden"] = tuple(int(h) for h in self["task.hidden"])
        if self["task.activation"] is not None:
            common["activation"] = self["task.activation"]
        return mnistnet_task(data, variant=self["task.variant"], **common)


def load_config(path=None, overrides=()) -> RunConfig:
    """Read `path` (optional) and apply ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section, table in raw.items():
            if section not in DEFAULTS or not isinstance(table, dict):
                raise _unknown_key(section)
            for key, value in _flatten(table).items():
                cfg.set(f"{section}.{key}", value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), parse_value(value.strip()))
    cfg.validate()
    return cfg
