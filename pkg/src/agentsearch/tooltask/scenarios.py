"""Loading of scenario files, including the bundled synthetic suite."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .types import Scenario

BUNDLED_SCENARIOS = (
    "new-account-meeting",
    "alarm-login-required",
    "account-recovery",
    "birthday-party-update",
    "cancel-meeting-lookup",
    "account-info-login",
    "gift-alarm-calendar",
)


def load_scenario_file(path: str | Path) -> Scenario:
    """Read one scenario JSON document."""
    return Scenario.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_bundled_scenario(name: str) -> Scenario:
    if name not in BUNDLED_SCENARIOS:
        raise KeyError(f"unknown bundled scenario: {name!r}")
    blob = resources.files("agentsearch.data.scenarios").joinpath(f"{name}.json").read_text("utf-8")
    return Scenario.from_dict(json.loads(blob))


def load_bundled_scenarios() -> list[Scenario]:
    """The full synthetic fixture suite, in a stable order."""
    return [load_bundled_scenario(name) for name in BUNDLED_SCENARIOS]


def load_scenario_dir(path: str | Path) -> list[Scenario]:
    """Read every ``*.json`` scenario in a directory, sorted by filename."""
    scenarios = []
    for file in sorted(Path(path).glob("*.json")):
        scenarios.append(load_scenario_file(file))
    return scenarios
