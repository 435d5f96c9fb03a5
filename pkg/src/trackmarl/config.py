"""Run configuration: a JSON key/value tree with dotted-path overrides.

The tree has three sections: ``task`` (arena.TaskConfig fields), ``trainer``
(marl.TrainerConfig fields) and ``run`` (representation, dropout, knn, seeds,
eval_dropout). Every run directory receives the fully resolved tree back as
``resolved_config.json`` so results can be reproduced bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import arena, marl


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: arena.TaskConfig = field(default_factory=arena.TaskConfig)
    trainer: marl.TrainerConfig = field(default_factory=marl.TrainerConfig)
    representation: str = "tracklets_gcn"
    dropout: float = 0.0
    knn: int | None = None
    seeds: tuple = (0,)
    eval_dropout: bool = False

    def __post_init__(self):
        if self.representation not in marl.REPRESENTATIONS:
            raise ConfigError(
                f"run.representation must be one of {marl.REPRESENTATIONS}, got {self.representation!r}"
            )
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"run.dropout must lie in [0, 1], got {self.dropout}")
        m = arena.layout(self.task).n_entities
        if self.knn is not None and not 1 <= self.knn <= m - 1:
            raise ConfigError(f"run.knn must lie in [1, {m - 1}] for this task, got {self.knn}")
        if not self.seeds:
            raise ConfigError("run.seeds must be nonempty")


def load_tree(path) -> dict:
    """Read the JSON config tree; errors carry file/line/column."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        tree = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{p}:{err.lineno}:{err.colno}: {err.msg}") from err
    if not isinstance(tree, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return tree


def apply_overrides(tree: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` strings; values parse as JSON, else strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = tree
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r}: {k!r} is not a section")
        node[keys[-1]] = value
    return tree


def _build_section(cls, section: dict, name: str):
    known = {f.name for f in fields(cls)}
    for k in section:
        if k not in known:
            raise ConfigError(f"unknown key {name}.{k!r} (known: {sorted(known)})")
    try:
        return cls(**section)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {name} section: {err}") from err


def from_tree(tree: dict) -> RunConfig:
    for k in tree:
        if k not in ("task", "trainer", "run"):
            raise ConfigError(f"unknown top-level section {k!r} (expected task/trainer/run)")
    task = _build_section(arena.TaskConfig, dict(tree.get("task", {})), "task")
    trainer = _build_section(marl.TrainerConfig, dict(tree.get("trainer", {})), "trainer")
    run = dict(tree.get("run", {}))
    known = {"representation", "dropout", "knn", "seeds", "eval_dropout"}
    for k in run:
        if k not in known:
            raise ConfigError(f"unknown key run.{k!r} (known: {sorted(known)})")
    if "seeds" in run:
        run["seeds"] = tuple(int(s) for s in run["seeds"])
    try:
        return RunConfig(task=task, trainer=trainer, **run)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid run section: {err}") from err


def load(path, overrides: Sequence[str] = ()) -> RunConfig:
    return from_tree(apply_overrides(load_tree(path), overrides))


def to_tree(cfg: RunConfig) -> dict:
    return {
        "task": asdict(cfg.task),
        "trainer": asdict(cfg.trainer),
        "run": {
            "representation": cfg.representation,
            "dropout": cfg.dropout,
            "knn": cfg.knn,
            "seeds": list(cfg.seeds),
            "eval_dropout": cfg.eval_dropout,
        },
    }


def save_resolved(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(to_tree(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")
