"""Data-injection attacks: actuator overrides plus replay concealment of the
compromised zone's telemetry."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .plant import (CHANNELS, CHANNEL_INDEX, ControlState, TelemetryFrame,
                    ZoneMap, dominant_period)

CONTROL_CHANNELS = ("V1", "V2", "H", "P")


class AttackConfigError(ValueError):
    """Raised when a scenario is internally inconsistent."""


@dataclass(frozen=True)
class AttackScenario:
    start_step: int
    zone: int
    overrides: dict                      # control channel -> 0/1
    concealment: str = "replay"          # "replay" | "none"
    replay_source: Optional[np.ndarray] = None  # (n, 11) recorded normal trace
    label: str = ""

    def __post_init__(self):
        if self.start_step < 1:
            raise AttackConfigError("start_step must be >= 1")
        if self.zone not in (1, 2):
            raise AttackConfigError(f"unknown zone {self.zone}")
        zone_channels = ZoneMap().channels(self.zone)
        for name, val in self.overrides.items():
            if name not in CONTROL_CHANNELS:
                raise AttackConfigError(f"{name} is not a control variable")
            if name not in zone_channels:
                raise AttackConfigError(
                    f"override {name} is outside compromised zone {self.zone}")
            if val not in (0, 1):
                raise AttackConfigError(f"override {name} must be 0 or 1")
        if self.concealment not in ("replay", "none"):
            raise AttackConfigError(f"unknown concealment {self.concealment!r}")
        if self.concealment == "replay":
            self._check_replay()

    def _check_replay(self):
        src = self.replay_source
        if src is None:
            raise AttackConfigError("replay concealment needs a replay_source")
        src = np.asarray(src)
        if src.ndim != 2 or src.shape[1] != len(CHANNELS):
            raise AttackConfigError("replay_source must be an (n, 11) trace")
        n_loop = src.shape[0] - self.start_step
        if n_loop < 1:
            raise AttackConfigError("replay_source does not cover start_step")
        # the looped tail must span at least one controller period
        period, peak = dominant_period(src[:, CHANNEL_INDEX["L1"]])
        if period > 0 and peak >= 0.5 and n_loop < period:
            raise AttackConfigError(
                f"replay tail ({n_loop} steps) shorter than one controller "
                f"period ({period} steps)")

    @property
    def replay_len(self) -> int:
        return self.replay_source.shape[0] - self.start_step


def apply_overrides(control: ControlState, scenario: AttackScenario,
                    t: int) -> ControlState:
    """Force the scenario's overridden actuators once the attack is active."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t < scenario.start_step or not scenario.overrides:
        return control
    return replace(control, **{k: int(v) for k, v in scenario.overrides.items()})


def replay_values(scenario: AttackScenario, t: int) -> np.ndarray:
    """Replay-source row used to conceal step t (phase-aligned looped tail)."""
    pos = scenario.start_step + (t - scenario.start_step) % scenario.replay_len
    return np.asarray(scenario.replay_source)[pos]


def conceal(frame: TelemetryFrame, scenario: AttackScenario,
            zone_map: ZoneMap) -> TelemetryFrame:
    """Replace the compromised zone's reported channels with replayed data."""
    if frame.t < 0:
        raise ValueError("frame.t must be >= 0")
    if scenario.concealment == "none" or frame.t < scenario.start_step:
        return frame
    source_row = replay_values(scenario, frame.t)
    compromised = set(zone_map.channels(scenario.zone))
    values = tuple(source_row[i] if name in compromised else frame.values[i]
                   for i, name in enumerate(CHANNELS))
    return TelemetryFrame(t=frame.t, values=values)


def canonical_scenario(label: str, replay_source: np.ndarray,
                       start_step: int = 500) -> AttackScenario:
    """The two zone-2 fixtures: P0_V10 (V1=0, P=0) and P1_V10 (V1=0, P=1)."""
    if label == "P0_V10":
        overrides = {"V1": 0, "P": 0}
    elif label == "P1_V10":
        overrides = {"V1": 0, "P": 1}
    else:
        raise AttackConfigError(f"unknown canonical scenario {label!r}")
    return AttackScenario(start_step=start_step, zone=2, overrides=overrides,
                          concealment="replay", replay_source=replay_source,
                          label=label)
