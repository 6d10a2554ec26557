"""Scenario files: JSON documents validated against ``scenario.schema.json``."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import jsonschema

from .model import (ClassParams, Exponential, Mg1Config, MmkConfig, class_from_dict)

SECONDS_PER = {"seconds": 1.0, "hours": 3600.0}
SIM_DEFAULTS = {"horizon": 1_000_000, "warmup": 0.1, "replications": 10, "seed": 0}


class ScenarioError(ValueError):
    """The scenario document is malformed or describes an invalid system."""


def schema() -> dict:
    text = resources.files("impatientq").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class Scenario:
    name: str
    system: Mg1Config | MmkConfig
    time_unit: str
    sim: dict


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{where}: {exc.message}") from None
    units = doc.get("units", {})
    time_unit = units.get("time", "seconds")
    # rates quoted per another unit are rescaled to the scenario's time unit
    per = units.get("arrivals_per", time_unit)
    factor = SECONDS_PER[time_unit] / SECONDS_PER[per]
    try:
        classes = [class_from_dict(c) for c in doc["classes"]]
        classes = [c.with_arrival_rate(c.arrival_rate * factor) for c in classes]
        solver = doc.get("solver", {})
        if doc["model"] == "mmk":
            system = MmkConfig(int(doc["servers"]), classes[0], classes[1], **solver)
        else:
            system = Mg1Config(classes[0], classes[1], **solver)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from None
    sim = {**SIM_DEFAULTS, **doc.get("sim", {})}
    return Scenario(doc.get("name", name), system, time_unit, sim)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(doc, name=path.stem)


def with_total_arrival_rate(system, total: float, split: float = 0.5):
    """Copy of ``system`` with arrival rates ``(split*total, (1-split)*total)``."""
    if not 0 <= split <= 1:
        raise ValueError(f"split must lie in [0, 1], got {split}")
    c1 = system.class1.with_arrival_rate(split * total)
    c2 = system.class2.with_arrival_rate((1 - split) * total)
    return replace(system, class1=c1, class2=c2)


def pooled_service(system: MmkConfig) -> MmkConfig:
    """Both classes served at the rate of the arrival-weighted mean service time."""
    lams = system.lam
    total = sum(lams)
    means = [c.tau for c in system.classes]
    if total > 0:
        mean = sum(l * m for l, m in zip(lams, means)) / total
    else:
        mean = sum(means) / 2
    svc = Exponential(1.0 / mean)
    c1, c2 = (ClassParams(c.arrival_rate, svc, c.patience) for c in system.classes)
    return replace(system, class1=c1, class2=c2)
