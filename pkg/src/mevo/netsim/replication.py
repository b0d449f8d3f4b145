"""Checked-in scenario fixtures.

The package ships scenario files under ``netsim/scenarios/``; the CLI
accepts their bare names in place of a path, and
:func:`replication_scenario` exposes the intercity fixture directly.
"""

from __future__ import annotations

from importlib import resources

from .scenario import Scenario, scenario_from_dict

import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _scenario_dir():
    return resources.files(__package__) / "scenarios"


def packaged_scenario_names() -> list[str]:
    names = [
        entry.name[: -len(".toml")]
        for entry in _scenario_dir().iterdir()
        if entry.name.endswith(".toml")
    ]
    return sorted(names)


def packaged_scenario(name: str) -> Scenario:
    """Load a shipped scenario by bare name (no path, no extension)."""
    entry = _scenario_dir() / (name + ".toml")
    if not entry.is_file():
        raise KeyError(name)
    doc = tomllib.loads(entry.read_text(encoding="utf-8"))
    return scenario_from_dict(doc, name=name)


def replication_scenario() -> Scenario:
    """The fitted two-city session: 9900 s, two aggregate peers,
    ~25.99 ms base OWD each way, shifted-exponential jitter with a
    hard 52 ms RTT floor, loss 0.131%/0.177% per direction, and
    +-50 ppm audio-clock drift."""
    return packaged_scenario("replication")
