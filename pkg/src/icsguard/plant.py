"""Two-tank hot-water circulation plant: state types, bang-bang controller,
explicit-Euler physics and episode runner.

Channel order for telemetry is fixed:
    L1, L2, T1, T2, F1, F2, F3, V1, V2, H, P
Process variables come first (levels, temperatures, flows), then the four
binary control variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

CHANNELS = ("L1", "L2", "T1", "T2", "F1", "F2", "F3", "V1", "V2", "H", "P")
CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}
N_CHANNELS = len(CHANNELS)

# Nominal per-channel spans under normal operation, used to scale the default
# sensor noise (sigma = noise_frac * span).
NOMINAL_SPAN = {
    "L1": 0.4, "L2": 0.4, "T1": 10.0, "T2": 12.0,
    "F1": 0.025, "F2": 0.012, "F3": 0.012,
    "V1": 1.0, "V2": 1.0, "H": 1.0, "P": 1.0,
}


class SimulationError(RuntimeError):
    """Raised when the plant state becomes invalid during integration."""


@dataclass(frozen=True)
class PlantState:
    L1: float
    L2: float
    T1: float
    T2: float
    F1: float = 0.0
    F2: float = 0.0
    F3: float = 0.0


@dataclass(frozen=True)
class ControlState:
    V1: int = 0
    V2: int = 0
    H: int = 0
    P: int = 0

    def __post_init__(self):
        for name in ("V1", "V2", "H", "P"):
            v = getattr(self, name)
            if v not in (0, 1):
                raise ValueError(f"control {name} must be 0 or 1, got {v!r}")


@dataclass(frozen=True)
class PlantParams:
    A1: float = 1.0
    A2: float = 1.0
    # q_pump is kept below k1*sqrt(L1_low): if noise briefly leaves both the
    # drain valve and the pump on, the drain wins and the level keeps moving
    # toward the valve-off setpoint instead of parking at a flow balance
    # inside both hysteresis bands (which would freeze the limit cycle).
    k1: float = 0.025
    q_pump: float = 0.012
    P_h: float = 2.0
    r: float = 0.001
    T_amb: float = 20.0
    T_max: float = 120.0
    dt: float = 1.0
    L_min: float = 0.05
    L1_low: float = 0.4
    L1_high: float = 0.8
    L2_low: float = 0.4
    L2_high: float = 0.8
    T2_low: float = 55.0
    T2_high: float = 65.0

    def __post_init__(self):
        if not (self.L1_low < self.L1_high and self.L2_low < self.L2_high
                and self.T2_low < self.T2_high):
            raise ValueError("setpoint pairs must satisfy low < high")
        if self.dt <= 0 or self.A1 <= 0 or self.A2 <= 0:
            raise ValueError("dt and tank areas must be positive")
        # one step must not jump a level across a full hysteresis band
        if self.dt * self.q_pump / min(self.A1, self.A2) >= min(
                self.L1_high - self.L1_low, self.L2_high - self.L2_low):
            raise ValueError("dt too large for the level hysteresis bands")


@dataclass(frozen=True)
class ZoneMap:
    zone1: frozenset = frozenset({"L1", "T1", "V2", "F2", "H"})
    zone2: frozenset = frozenset({"L2", "T2", "V1", "F1", "F3", "P"})

    def __post_init__(self):
        if self.zone1 | self.zone2 != set(CHANNELS) or self.zone1 & self.zone2:
            raise ValueError("zones must partition the 11 channels")

    def channels(self, zone: int) -> list:
        members = self.zone1 if zone == 1 else self.zone2
        return [c for c in CHANNELS if c in members]


DEFAULT_ZONE_MAP = ZoneMap()

# Default initial condition: L1 below its lower setpoint so the pump engages
# immediately and the relay limit cycle starts.
DEFAULT_INIT = PlantState(L1=0.35, L2=0.85, T1=55.0, T2=58.0)


@dataclass(frozen=True)
class TelemetryFrame:
    t: int
    values: tuple  # 11 floats in CHANNELS order

    def __post_init__(self):
        if len(self.values) != N_CHANNELS:
            raise ValueError(f"expected {N_CHANNELS} values, got {len(self.values)}")

    def __getitem__(self, channel: str) -> float:
        return self.values[CHANNEL_INDEX[channel]]


def control_law(state: PlantState, prev: ControlState, params: PlantParams) -> ControlState:
    """Hysteresis control of pump, drain valve and heater; V2 tracks P."""
    P = prev.P
    if state.L1 < params.L1_low:
        P = 1
    elif state.L1 > params.L1_high:
        P = 0
    V1 = prev.V1
    if state.L2 < params.L2_low:
        V1 = 1
    elif state.L2 > params.L2_high:
        V1 = 0
    H = prev.H
    if state.T2 < params.T2_low:
        H = 1
    elif state.T2 > params.T2_high:
        H = 0
    return ControlState(V1=V1, V2=P, H=H, P=P)


def step(state: PlantState, control: ControlState, params: PlantParams) -> PlantState:
    """One explicit-Euler step of the tank dynamics.

    Levels are updated first and clamped at zero with the excess returned to
    the other tank, so total volume is conserved exactly.  Temperatures use
    the post-update volumes, which makes total enthalpy exact (not just
    O(dt^2)) when the heater and radiation terms are off.
    """
    for name in ("L1", "L2", "T1", "T2", "F1", "F2", "F3"):
        if not math.isfinite(getattr(state, name)):
            raise SimulationError(f"non-finite state field {name}")
    p = params
    F1 = control.V1 * p.k1 * math.sqrt(max(state.L1, 0.0))
    F3 = p.q_pump * control.P * control.V2 if state.L2 > p.L_min else 0.0
    F2 = F3

    L1 = state.L1 + p.dt * (F3 - F1) / p.A1
    L2 = state.L2 + p.dt * (F1 - F3) / p.A2
    if L1 < 0.0 or L2 < 0.0:
        # a flow overdrew its source tank this step; cap the empty tank at
        # zero and keep the total volume in the other one
        total = p.A1 * L1 + p.A2 * L2
        if L1 < 0.0:
            L1, L2 = 0.0, max(total, 0.0) / p.A2
        else:
            L1, L2 = max(total, 0.0) / p.A1, 0.0

    vol1 = p.A1 * max(L1, p.L_min)
    vol2 = p.A2 * max(L2, p.L_min)
    T1 = state.T1 + p.dt * (F3 * (state.T2 - state.T1) / vol1
                            - p.r * (state.T1 - p.T_amb))
    T2 = state.T2 + p.dt * (F1 * (state.T1 - state.T2) / vol2
                            + control.H * p.P_h / vol2)
    T1 = min(max(T1, p.T_amb), p.T_max)
    T2 = min(max(T2, p.T_amb), p.T_max)

    return PlantState(L1=L1, L2=L2, T1=T1, T2=T2, F1=F1, F2=F2, F3=F3)


def _noise_sigma_vector(noise_frac: float) -> np.ndarray:
    return np.array([noise_frac * NOMINAL_SPAN[c] for c in CHANNELS])


@dataclass
class EpisodeResult:
    states: list          # PlantState per step
    controls: list        # actual (possibly overridden) ControlState per step
    frames: list          # TelemetryFrame per step (what detectors see)

    def telemetry_array(self) -> np.ndarray:
        return np.array([f.values for f in self.frames])

    def truth_array(self) -> np.ndarray:
        rows = []
        for s, c in zip(self.states, self.controls):
            rows.append((s.L1, s.L2, s.T1, s.T2, s.F1, s.F2, s.F3,
                         float(c.V1), float(c.V2), float(c.H), float(c.P)))
        return np.array(rows)


def run_episode(init: PlantState, params: PlantParams, n_steps: int,
                attack=None, noise_frac: float = 0.0, seed: int = 0,
                zone_map: ZoneMap = DEFAULT_ZONE_MAP,
                init_control: ControlState = ControlState()) -> EpisodeResult:
    """Simulate n_steps of closed-loop operation, optionally under attack.

    The controller reads the field measurements directly, so it sees exact
    process values -- except that an active attacker feeds it the replayed
    (concealed) values for compromised-zone channels.  Gaussian sensor noise
    applies only to the recorded telemetry stream the detectors observe.
    The physics always uses the true, possibly overridden, actuation.
    Deterministic given all arguments.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    from .attack import apply_overrides, replay_values

    rng = np.random.default_rng(seed)
    sigma = _noise_sigma_vector(noise_frac)
    state = init
    cmd = init_control            # controller's own last command
    states, controls, frames = [], [], []
    for t in range(n_steps):
        try:
            process_true = np.array([state.L1, state.L2, state.T1, state.T2,
                                     state.F1, state.F2, state.F3])
            noise = rng.normal(0.0, 1.0, N_CHANNELS) * sigma
            reported = process_true + noise[:7]
            loop_view = process_true.copy()

            concealed = None
            if attack is not None and attack.concealment == "replay" \
                    and t >= attack.start_step:
                concealed = replay_values(attack, t)
                mask = np.array([c in zone_map.channels(attack.zone)
                                 for c in CHANNELS])
                reported = np.where(mask[:7], concealed[:7], reported)
                loop_view = np.where(mask[:7], concealed[:7], loop_view)

            perceived = PlantState(L1=loop_view[0], L2=loop_view[1],
                                   T1=loop_view[2], T2=loop_view[3],
                                   F1=loop_view[4], F2=loop_view[5],
                                   F3=loop_view[6])
            cmd = control_law(perceived, cmd, params)
            actual = cmd if attack is None else apply_overrides(cmd, attack, t)
            # V2 is slaved to the pump contactor by a hardwired interlock, so
            # it follows the pump's actual (possibly overridden) state
            actual = replace(actual, V2=actual.P)

            ctrl_reported = np.array([actual.V1, actual.V2, actual.H, actual.P],
                                     dtype=float) + noise[7:]
            if concealed is not None:
                cmask = np.array([c in zone_map.channels(attack.zone)
                                  for c in CHANNELS[7:]])
                ctrl_reported = np.where(cmask, concealed[7:], ctrl_reported)

            frame = TelemetryFrame(t=t, values=tuple(np.concatenate(
                [reported, ctrl_reported])))
            states.append(state)
            controls.append(actual)
            frames.append(frame)
            state = step(state, actual, params)
        except SimulationError as exc:
            raise SimulationError(f"step {t}: {exc}") from exc
    return EpisodeResult(states=states, controls=controls, frames=frames)


def _fmt(x: float) -> str:
    return format(x, ".9g")


def write_trace_csv(path, array: np.ndarray) -> None:
    """Write a telemetry/truth trace as CSV with the fixed channel header."""
    with open(path, "w", newline="\n") as fh:
        fh.write("t," + ",".join(CHANNELS) + "\n")
        for t, row in enumerate(array):
            fh.write(str(t) + "," + ",".join(_fmt(v) for v in row) + "\n")


def read_trace_csv(path) -> np.ndarray:
    """Read a trace CSV written by write_trace_csv; the schema is strict."""
    with open(path, "r") as fh:
        header = fh.readline().strip()
        expected = "t," + ",".join(CHANNELS)
        if header != expected:
            raise ValueError(f"bad trace header: {header!r} (expected {expected!r})")
        rows = []
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != N_CHANNELS + 1:
                raise ValueError(f"bad trace row: {line!r}")
            rows.append([float(v) for v in parts[1:]])
    return np.array(rows)


def dominant_period(x: Sequence[float], max_lag: int = 400) -> tuple:
    """Return (lag, autocorrelation) of the strongest secondary peak."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    ac = np.correlate(x, x, "full")[len(x) - 1:]
    if ac[0] <= 0:
        return 0, 0.0
    ac = ac / ac[0]
    limit = min(max_lag, len(ac) - 1)
    best_lag, best_val = 0, -1.0
    for lag in range(2, limit):
        if ac[lag] > ac[lag - 1] and ac[lag] >= ac[lag + 1] and ac[lag] > best_val:
            best_lag, best_val = lag, ac[lag]
    return best_lag, best_val
