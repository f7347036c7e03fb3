"""TOML scenario/training/sweep configuration loading."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

import numpy as np

from .plant import DEFAULT_INIT, PlantParams, PlantState, read_trace_csv
from .attack import AttackScenario


class ConfigError(ValueError):
    """Malformed or inconsistent configuration file."""


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")


def _build(cls, table: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    bad = set(table) - known
    if bad:
        raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}")


@dataclasses.dataclass
class ScenarioConfig:
    n_steps: int
    seed: int
    noise_frac: float
    params: PlantParams
    init: PlantState
    attack: AttackScenario | None
    label: str


def out_root(cli_out=None) -> Path:
    root = Path(cli_out) if cli_out else Path(os.environ.get("ICSGUARD_OUT", "."))
    root.mkdir(parents=True, exist_ok=True)
    return root


def load_scenario(path, base_dir=None) -> ScenarioConfig:
    """Load a simulation scenario, resolving replay_path relative to the file."""
    doc = load_toml(path)
    base = Path(base_dir) if base_dir else Path(path).parent
    run = doc.get("run", {})
    for key in ("n_steps", "seed"):
        if key not in run:
            raise ConfigError(f"{path}: [run] missing required key {key!r}")
    params = _build(PlantParams, doc.get("plant", {}), f"{path}: [plant]")
    init_table = doc.get("init", {})
    init = _build(PlantState, init_table, f"{path}: [init]") if init_table \
        else DEFAULT_INIT

    attack = None
    if "attack" in doc:
        a = dict(doc["attack"])
        replay_path = a.pop("replay_path", None)
        source = None
        if replay_path is not None:
            rp = Path(replay_path)
            if not rp.is_absolute():
                rp = base / rp
            source = read_trace_csv(rp)
        try:
            attack = AttackScenario(
                start_step=a.pop("start_step"),
                zone=a.pop("zone"),
                overrides=a.pop("overrides", {}),
                concealment=a.pop("concealment", "replay"),
                replay_source=source,
                label=a.pop("label", ""))
        except KeyError as exc:
            raise ConfigError(f"{path}: [attack] missing key {exc}")
        except ValueError as exc:
            raise ConfigError(f"{path}: [attack] {exc}")
        if a:
            raise ConfigError(f"{path}: [attack] unknown keys {sorted(a)}")

    return ScenarioConfig(
        n_steps=int(run["n_steps"]),
        seed=int(run["seed"]),
        noise_frac=float(run.get("noise_frac", 0.005)),
        params=params, init=init, attack=attack,
        label=doc.get("attack", {}).get("label", "normal"))
