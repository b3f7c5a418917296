"""First-order rotor dynamics, saturation, faults and per-step moment headroom."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import moment_mixing
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActuatorParams:
    # 60 Hz bandwidth, read as 1/tau
    time_constant: float = 1.0 / 60.0
    omega_min: float = 100.0
    omega_max: float = 1300.0
    spin_sign: int = 1

    def __post_init__(self):
        if not self.time_constant > 0:
            raise ConfigError("actuator time constant must be positive")
        if not 0 <= self.omega_min < self.omega_max:
            raise ConfigError("need 0 <= omega_min < omega_max")
        if self.spin_sign not in (1, -1):
            raise ConfigError("spin_sign must be +1 or -1")

    def bounds(self, caps=None):
        """Per-rotor (lower, upper) speed limits after applying fault caps."""
        caps = np.ones(4) if caps is None else np.asarray(caps, dtype=float)
        upper = caps * self.omega_max
        lower = np.minimum(self.omega_min, upper)
        return lower, upper


@dataclass(frozen=True)
class RotorSet:
    speeds: np.ndarray
    commanded: np.ndarray = field(default_factory=lambda: np.zeros(4))
    caps: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        object.__setattr__(self, "speeds", np.asarray(self.speeds, dtype=float))
        object.__setattr__(self, "commanded", np.asarray(self.commanded, dtype=float))
        object.__setattr__(self, "caps", np.asarray(self.caps, dtype=float))
        if np.any((self.caps < 0) | (self.caps > 1)):
            raise ConfigError("fault caps must lie in [0, 1]")

    @classmethod
    def at(cls, speed, n=4):
        s = np.full(n, float(speed))
        return cls(s, s.copy(), np.ones(n))


@dataclass(frozen=True)
class FaultEvent:
    rotor: int  # 1-based
    cap: float
    time: float

    def __post_init__(self):
        if self.rotor not in (1, 2, 3, 4):
            raise ConfigError(f"rotor index must be 1..4, got {self.rotor}")
        if not 0 <= self.cap <= 1:
            raise ConfigError("fault cap must lie in [0, 1]")
        if self.time < 0:
            raise ConfigError("fault activation time must be >= 0")


def actuator_step(rotors: RotorSet, commands, params: ActuatorParams, dt: float) -> RotorSet:
    """One explicit first-order lag update toward the clamped command."""
    lower, upper = params.bounds(rotors.caps)
    cmd = np.clip(np.asarray(commands, dtype=float), lower, upper)
    w = rotors.speeds + (dt / params.time_constant) * (cmd - rotors.speeds)
    return replace(rotors, speeds=np.clip(w, lower, upper), commanded=cmd)


def inject_fault(schedule, t: float, rotors: RotorSet, params: ActuatorParams | None = None) -> RotorSet:
    """Apply every fault event active at time ``t`` as a cap on omega_max."""
    caps = np.ones(4)
    seen = set()
    for ev in schedule:
        if ev.time > t:
            continue
        if ev.rotor in seen:
            log.warning("duplicate fault event for rotor %d; last one wins", ev.rotor)
        seen.add(ev.rotor)
        caps[ev.rotor - 1] = ev.cap
    if not seen:
        return rotors
    lower, upper = (params or ActuatorParams()).bounds(caps)
    return replace(rotors, speeds=np.clip(rotors.speeds, lower, upper), caps=caps)


def max_moment_change(speeds, direction, params: ActuatorParams, dt: float, caps=None) -> np.ndarray:
    """Largest control-moment change reachable in one step, per axis.

    For each axis, every rotor is pushed toward whichever saturation limit
    moves that axis's moment in ``direction`` (sign per axis; zero counts as
    positive). Rotors already beyond the limit contribute nothing. ``caps``
    defaults to healthy rotors, i.e. the detector is not told about faults.

    Vectorised over leading dimensions: ``speeds`` (..., 4), ``direction`` (..., 3).
    """
    speeds = np.asarray(speeds, dtype=float)
    sign = np.where(np.asarray(direction, dtype=float) < 0, -1.0, 1.0)
    lower, upper = params.bounds(caps)
    up_room = np.maximum(upper - speeds, 0.0)[..., None, :]
    down_room = np.maximum(speeds - lower, 0.0)[..., None, :]
    G = moment_mixing(params.spin_sign)
    increase = (G * sign[..., :, None]) > 0
    room = np.where(increase, up_room, down_room)
    return dt / params.time_constant * room.sum(axis=-1)
