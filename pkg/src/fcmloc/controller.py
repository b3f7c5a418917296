"""Cascaded position/attitude controller with an incremental (INDI-style) rate loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .actuator import ActuatorParams
from .dynamics import AeroMomentModel, QuadParams, moment_mixing, quat_to_euler, quat_to_rotation
from .errors import ConfigError


def _vec3(x):
    return np.broadcast_to(np.asarray(x, dtype=float), (3,)).copy()


@dataclass
class ControllerGains:
    pos_kp: np.ndarray = field(default_factory=lambda: np.array([1.2, 1.2, 1.5]))
    vel_kp: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0, 4.0]))
    vel_ki: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5, 1.0]))
    att_kp: np.ndarray = field(default_factory=lambda: np.array([9.0, 9.0, 3.0]))
    rate_kp: np.ndarray = field(default_factory=lambda: np.array([25.0, 25.0, 12.0]))
    max_velocity: float = 3.0
    max_accel: float = 6.0
    max_tilt: float = np.radians(35.0)
    max_rate: np.ndarray = field(default_factory=lambda: np.array([8.0, 8.0, 40.0]))
    integral_limit: float = 2.0

    def __post_init__(self):
        for name in ("pos_kp", "vel_kp", "vel_ki", "att_kp", "rate_kp", "max_rate"):
            v = _vec3(getattr(self, name))
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"gain {name} must be finite")
            setattr(self, name, v)
        if not (self.max_velocity > 0 and self.max_accel > 0 and 0 < self.max_tilt < np.pi / 2):
            raise ConfigError("controller limits must be positive (tilt below 90 deg)")


@dataclass(frozen=True)
class Segment:
    duration: float
    mode: str = "position"  # "position" | "yaw_rate"
    position: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("segment duration must be positive")
        if self.mode not in ("position", "yaw_rate"):
            raise ConfigError(f"unknown reference mode {self.mode!r}")


@dataclass(frozen=True)
class ReferenceProgram:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("reference program has no segments")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def at(self, t: float) -> Segment:
        elapsed = 0.0
        for seg in self.segments:
            elapsed += seg.duration
            if t < elapsed:
                return seg
        return self.segments[-1]

    @classmethod
    def from_rows(cls, rows):
        """Build from timestamped setpoints ``(t, x, y, z, yaw[, yaw_rate, mode])``.

        Each row holds until the next timestamp; the final row gets 1 s.
        """
        rows = sorted(rows, key=lambda r: float(r[0]))
        segs = []
        for i, row in enumerate(rows):
            t0 = float(row[0])
            t1 = float(rows[i + 1][0]) if i + 1 < len(rows) else t0 + 1.0
            mode = row[6] if len(row) > 6 else "position"
            segs.append(Segment(t1 - t0, mode, tuple(float(v) for v in row[1:4]),
                                float(row[4]) if len(row) > 4 else 0.0,
                                float(row[5]) if len(row) > 5 else 0.0))
        return cls(tuple(segs))


def rate_loop_incremental(rates, rate_dot, rates_des, gain, B) -> np.ndarray:
    """Control-moment increment ``B^-1 (K (Omega_des - Omega) - Omega_dot)``."""
    nu = np.asarray(gain) * (np.asarray(rates_des) - np.asarray(rates))
    return np.linalg.solve(np.asarray(B, dtype=float), nu - np.asarray(rate_dot))


def allocate(u, collective, act: ActuatorParams, caps=None) -> np.ndarray:
    """Rotor-speed commands realising control moments ``u`` and speed sum ``collective``.

    Roll/pitch and collective are allocated first; the yaw share is scaled down
    until it fits inside the rotor limits.
    """
    G = moment_mixing(act.spin_sign)
    base = (G[:2].T @ np.asarray(u[:2], dtype=float) + collective) / 4.0
    yaw = G[2] * u[2] / 4.0
    lower, upper = act.bounds(caps)
    alpha = 1.0
    for b, y, lo, hi in zip(base, yaw, lower, upper):
        if y > 0:
            alpha = min(alpha, max(hi - b, 0.0) / y)
        elif y < 0:
            alpha = min(alpha, max(b - lo, 0.0) / -y)
    return np.clip(base + alpha * yaw, lower, upper)


@dataclass
class Measurement:
    position: np.ndarray
    velocity_body: np.ndarray
    quaternion: np.ndarray
    rates: np.ndarray
    rotor_speeds: np.ndarray


class Controller:
    """Position -> velocity -> attitude -> rate cascade.

    Holds integrator and incremental-loop memory; one instance per flight.
    """

    def __init__(self, gains: ControllerGains, params: QuadParams, act: ActuatorParams,
                 aero: AeroMomentModel, dt: float):
        self.gains = gains
        self.params = params
        self.act = act
        self.dt = dt
        self.B = params.inertia_inv @ np.diag(aero.partials(np.zeros(3), np.zeros(3))[1])
        self.vel_int = np.zeros(3)
        self.prev_rates = None
        self.prev_rotor = None
        self.last_command = None
        self.degraded = False

    def outer_loop(self, meas: Measurement, ref: Segment):
        """Return (desired body rates, desired collective thrust in N)."""
        g = self.gains
        R = quat_to_rotation(meas.quaternion)
        vel = R @ meas.velocity_body
        v_des = g.pos_kp * (np.asarray(ref.position) - meas.position)
        if ref.mode == "yaw_rate":
            v_des[:2] = 0.0
        speed = np.linalg.norm(v_des)
        if speed > g.max_velocity:
            v_des *= g.max_velocity / speed
        err = v_des - vel
        self.vel_int = np.clip(self.vel_int + err * self.dt, -g.integral_limit, g.integral_limit)
        a_des = g.vel_kp * err + g.vel_ki * self.vel_int
        a_norm = np.linalg.norm(a_des)
        if a_norm > g.max_accel:
            a_des *= g.max_accel / a_norm

        f = self.params.mass * (a_des - self.params.gravity)
        # keep thrust upward and within the tilt limit
        f[2] = min(f[2], -0.2 * self.params.mass * 9.81)
        horiz = np.linalg.norm(f[:2])
        max_h = -f[2] * np.tan(g.max_tilt)
        if horiz > max_h:
            f[:2] *= max_h / horiz
        b3_des = -f / np.linalg.norm(f)
        thrust = max(float(-f @ R[:, 2]), 0.0)

        d = R.T @ b3_des  # desired thrust axis in body coordinates
        axis = np.cross([0.0, 0.0, 1.0], d)
        s = np.linalg.norm(axis)
        angle = np.arctan2(s, d[2])
        tilt_err = axis / s * angle if s > 1e-12 else np.zeros(3)
        rates_des = np.zeros(3)
        rates_des[:2] = g.att_kp[:2] * tilt_err[:2]
        if ref.mode == "yaw_rate":
            rates_des[2] = ref.yaw_rate
        else:
            yaw = quat_to_euler(meas.quaternion)[2]
            yaw_err = (ref.yaw - yaw + np.pi) % (2 * np.pi) - np.pi
            rates_des[2] = g.att_kp[2] * yaw_err
        lim = g.max_rate.copy()
        if ref.mode == "yaw_rate":
            lim[2] = max(lim[2], abs(ref.yaw_rate))
        return np.clip(rates_des, -lim, lim), thrust

    def rate_loop(self, meas: Measurement, rates_des, thrust, caps=None) -> np.ndarray:
        """Incremental rate loop; returns rotor-speed commands."""
        G = moment_mixing(self.act.spin_sign)
        if self.prev_rates is None:
            rate_dot = np.zeros(3)
            u0 = G @ meas.rotor_speeds
        else:
            rate_dot = (meas.rates - self.prev_rates) / self.dt
            u0 = G @ self.prev_rotor
        self.prev_rates = meas.rates.copy()
        self.prev_rotor = meas.rotor_speeds.copy()
        try:
            du = rate_loop_incremental(meas.rates, rate_dot, rates_des, self.gains.rate_kp, self.B)
            self.degraded = False
        except np.linalg.LinAlgError:
            self.degraded = True
            if self.last_command is None:
                self.last_command = meas.rotor_speeds.copy()
            return self.last_command
        omega_eq = np.sqrt(max(thrust, 0.0) / (4.0 * self.params.thrust_coefficient))
        cmd = allocate(u0 + du, 4.0 * omega_eq, self.act, caps)
        self.last_command = cmd
        return cmd

    def __call__(self, meas: Measurement, ref: Segment) -> np.ndarray:
        rates_des, thrust = self.outer_loop(meas, ref)
        return self.rate_loop(meas, rates_des, thrust)
