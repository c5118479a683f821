"""Packaged benchmark presets (desk-scale and full-size)."""

from __future__ import annotations

import importlib.resources

from .bench import ExperimentSpec, parse_config_text, spec_from_settings
from .errors import ConfigError

PRESETS = (
    "bernoulli_desk", "bernoulli_paper",
    "lorenz_desk", "lorenz_paper",
    "robot_desk", "robot_paper",
)


def load_preset(name: str) -> ExperimentSpec:
    resource = importlib.resources.files("dmpf").joinpath(f"configs/{name}.cfg")
    if not resource.is_file():
        raise ConfigError(f"no packaged preset '{name}' (choose from {PRESETS})")
    return spec_from_settings(parse_config_text(resource.read_text()))
