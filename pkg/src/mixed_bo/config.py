"""Load run settings and hyperparameters from a YAML file.

The file has two optional top-level sections::

    hyperparams:        # d, M, Q, gamma, P, s, m, noise_var
      gamma: [[25.0, 25.0]]
      ...
    run:                # RunConfig field names
      algo: mtpes
      budget: 500

Command-line flags override values read here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .engine import RunConfig
from .errors import ConfigurationError
from .kernel import Hyperparams

SECTIONS = ("hyperparams", "run")


@dataclass
class FileConfig:
    hyperparams: Optional[Hyperparams] = None
    run: Dict[str, Any] = field(default_factory=dict)

    def run_config(self, defaults: Optional[Dict[str, Any]] = None, **overrides: Any) -> RunConfig:
        """RunConfig from the file's ``run`` section.

        ``defaults`` sit below the file, ``overrides`` above it; ``None``
        overrides are ignored.
        """
        settings = dict(defaults or {})
        settings.update(self.run)
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(settings)


def load_config(path: Path) -> FileConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")

    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc

    if data is None:
        return FileConfig()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"{path}: unknown sections {sorted(unknown)}")

    h = data.get("hyperparams")
    run = data.get("run") or {}
    if not isinstance(run, dict):
        raise ConfigurationError(f"{path}: 'run' must be a mapping")
    # validates keys early, before any CLI override is merged in
    RunConfig.from_dict(run)
    return FileConfig(
        hyperparams=Hyperparams.from_dict(h) if h else None,
        run=run,
    )


def dump_config(path: Path, cfg: Optional[RunConfig] = None, h: Optional[Hyperparams] = None) -> Path:
    data: Dict[str, Any] = {}
    if h is not None:
        data["hyperparams"] = h.to_dict()
    if cfg is not None:
        data["run"] = cfg.to_dict()
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)
    return Path(path)
