"""Run configuration: one YAML file, flags override, env var for the path.

Top-level keys mirror the domain objects they build: ``classes``,
``backend`` (with nested ``noise``), ``loop``, ``cost``, plus ``dataset``,
``output_dir``, and ``seed``. See docs/configuration.md for the annotated
reference file.
"""

from __future__ import annotations

import os
from pathlib import Path

import yaml

from autolabel.active import CostModel
from autolabel.backends import BackendDescriptor, NoiseModel
from autolabel.dataset import ClassTable
from autolabel.errors import ConfigError
from autolabel.selfloop import LoopConfig

CONFIG_ENV_VAR = "AUTOLABEL_CONFIG"


def load_config(path: str | Path | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
    return loaded


def build_class_table(config: dict) -> ClassTable:
    names = config.get("classes")
    if not names:
        raise ConfigError("config needs a 'classes' list")
    return ClassTable(tuple(names))


def build_noise_model(section: dict | None) -> NoiseModel:
    section = section or {}
    curve = section.get("accuracy_curve")
    if curve is not None:
        curve = {int(size): dict(overrides) for size, overrides in curve.items()}
    kwargs = {
        key: section[key]
        for key in ("dropout_rate", "spurious_rate", "jitter_sigma")
        if key in section
    }
    if "conf_hi" in section:
        kwargs["conf_hi"] = tuple(section["conf_hi"])
    if "conf_lo" in section:
        kwargs["conf_lo"] = tuple(section["conf_lo"])
    if "confusion" in section:
        kwargs["confusion"] = tuple(tuple(row) for row in section["confusion"])
    return NoiseModel(accuracy_curve=curve, **kwargs)


def build_backend(config: dict, classes: ClassTable) -> BackendDescriptor:
    section = config.get("backend")
    if not section:
        raise ConfigError("config needs a 'backend' section")
    kind = section.get("kind")
    backend_config: dict = {}
    if kind == "simulated":
        backend_config["noise"] = build_noise_model(section.get("noise"))
        backend_config["seed"] = int(section.get("seed", config.get("seed", 0)))
    elif kind == "detection_file":
        backend_config["path"] = section.get("path")
    elif kind == "external_process":
        backend_config["command"] = list(section.get("command") or [])
    try:
        return BackendDescriptor(
            name=section.get("name", kind or "backend"),
            kind=kind or "",
            class_table=classes,
            config=backend_config,
        )
    except Exception as exc:
        raise ConfigError(f"invalid backend section: {exc}") from None


def build_loop_config(config: dict, backend: BackendDescriptor) -> LoopConfig:
    section = dict(config.get("loop") or {})
    retrain_hook = section.pop("retrain_hook", None)
    if retrain_hook is not None:
        retrain_hook = [str(part) for part in retrain_hook]
    try:
        return LoopConfig(backend=backend, retrain_hook=retrain_hook, **section)
    except TypeError as exc:
        raise ConfigError(f"invalid loop section: {exc}") from None


def build_cost_model(config: dict) -> CostModel:
    section = config.get("cost") or {}
    try:
        return CostModel(**section)
    except TypeError as exc:
        raise ConfigError(f"invalid cost section: {exc}") from None


def dump_effective_config(config: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
