"""Closed-loop simulation: rigid body + rotors + controller + measurement noise."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actuator import ActuatorParams, RotorSet, actuator_step, inject_fault
from .controller import Controller, ControllerGains, Measurement, ReferenceProgram, Segment
from .dynamics import (AeroMomentModel, BodyState, QuadParams, RotorMomentModel,
                       default_aero_model, integrate_step, quat_to_euler)
from .errors import DivergenceError

SIGMA_VELOCITY = 0.01
SIGMA_RATES = 8.73e-5


@dataclass(frozen=True)
class OscillatingDisturbance:
    """Roll/pitch moment ``amp * exp(growth * s) * (sin, cos)(2 pi f s)``, ``s = t - onset``."""

    onset: float
    growth_rate: float
    amplitude: float = 2e-4
    frequency: float = 4.0
    max_amplitude: float = 0.5

    def __call__(self, t: float):
        if self.growth_rate <= 0 or t < self.onset:
            return None
        s = t - self.onset
        a = min(self.amplitude * np.exp(self.growth_rate * s), self.max_amplitude)
        ph = 2 * np.pi * self.frequency * s
        return np.array([a * np.sin(ph), a * np.cos(ph), 0.0])


@dataclass
class Scenario:
    name: str = "nominal"
    dt: float = 1.0 / 250.0
    duration: float = 20.0
    quad: QuadParams = field(default_factory=QuadParams)
    # identified model used by the controller (and by detectors downstream)
    aero: AeroMomentModel = field(default_factory=default_aero_model)
    # moments actually acting on the simulated airframe; None means ``aero``
    airframe: RotorMomentModel | AeroMomentModel | None = field(
        default_factory=RotorMomentModel)
    actuator: ActuatorParams = field(default_factory=ActuatorParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    program: ReferenceProgram = None
    faults: tuple = ()
    sigma_velocity: float = SIGMA_VELOCITY
    sigma_rates: float = SIGMA_RATES
    sigma_rotor: float = 0.0
    disturbance: OscillatingDisturbance | None = None
    seed: int = 0
    initial_position: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.program is None:
            self.program = ReferenceProgram((Segment(self.duration),))


@dataclass
class SimRun:
    scenario: Scenario
    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    quaternion: np.ndarray
    rates: np.ndarray
    rotor_speeds: np.ndarray
    rotor_commands: np.ndarray
    meas_rates: np.ndarray
    meas_velocity: np.ndarray
    meas_rotor_speeds: np.ndarray
    caps: np.ndarray

    def __len__(self):
        return len(self.time)

    @property
    def euler(self) -> np.ndarray:
        return quat_to_euler(self.quaternion)


def simulate(sc: Scenario, stop=None) -> SimRun:
    """Run the closed loop at fixed ``sc.dt`` for ``sc.duration`` seconds.

    Sample k logs the state at t_k together with the rotor speeds held over
    [t_k, t_k+1]. ``stop(t, state)`` may end the run early.
    """
    rng = np.random.default_rng(sc.seed)
    n = int(round(sc.duration / sc.dt))
    ctrl = Controller(sc.gains, sc.quad, sc.actuator, sc.aero, sc.dt)
    state = BodyState(position=np.array(sc.initial_position, dtype=float))
    rotors = RotorSet.at(sc.quad.hover_speed)
    faults = sorted(sc.faults, key=lambda ev: ev.time)

    cols = {k: [] for k in ("t", "pos", "vel", "quat", "rates", "w", "cmd",
                            "m_rates", "m_vel", "m_w", "caps")}
    for k in range(n):
        t = k * sc.dt
        rotors = inject_fault(faults, t, rotors, sc.actuator)
        m_rates = state.rates + rng.normal(0.0, sc.sigma_rates, 3)
        m_vel = state.velocity + rng.normal(0.0, sc.sigma_velocity, 3)
        meas = Measurement(state.position.copy(), m_vel, state.quaternion.copy(),
                           m_rates, rotors.speeds.copy())
        cmd = ctrl(meas, sc.program.at(t))
        rotors = actuator_step(rotors, cmd, sc.actuator, sc.dt)
        w_meas = rotors.speeds
        if sc.sigma_rotor > 0:
            w_meas = w_meas + rng.normal(0.0, sc.sigma_rotor, 4)

        cols["t"].append(t)
        cols["pos"].append(state.position)
        cols["vel"].append(state.velocity)
        cols["quat"].append(state.quaternion)
        cols["rates"].append(state.rates)
        cols["w"].append(rotors.speeds)
        cols["cmd"].append(rotors.commanded)
        cols["m_rates"].append(m_rates)
        cols["m_vel"].append(m_vel)
        cols["m_w"].append(w_meas)
        cols["caps"].append(rotors.caps)

        dist = sc.disturbance(t) if sc.disturbance is not None else None
        state = integrate_or_raise(state, rotors.speeds, sc, dist, t)
        if stop is not None and stop(t + sc.dt, state):
            break

    a = {k: np.array(v) for k, v in cols.items()}
    return SimRun(sc, a["t"], a["pos"], a["vel"], a["quat"], a["rates"], a["w"], a["cmd"],
                  a["m_rates"], a["m_vel"], a["m_w"], a["caps"])


def integrate_or_raise(state, speeds, sc, dist, t):
    truth = sc.airframe if sc.airframe is not None else sc.aero
    nxt = integrate_step(state, speeds, sc.quad, truth, sc.dt, sc.actuator.spin_sign, dist, t)
    if np.any(np.abs(nxt.rates) > 1e4) or np.any(np.abs(nxt.velocity) > 1e4):
        raise DivergenceError(t + sc.dt)
    return nxt
