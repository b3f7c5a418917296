"""Body-frame rigid-body quadrotor model.

State convention: NED inertial frame, body axes x forward / y right / z down,
unit quaternion ``(w, x, y, z)`` rotating body vectors into the inertial frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, InvalidInputError

MAX_DT = 0.02
MAX_DEGREE = 4


@dataclass
class QuadParams:
    mass: float = 0.433
    inertia: np.ndarray = field(
        default_factory=lambda: 1e-3 * np.diag([0.865, 1.07, 1.71])
    )
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 9.81]))
    hub_diameter: float = 0.217
    # thrust per rotor = k_T * omega^2; default gives hover near 700 rad/s
    thrust_coefficient: float = 2.167e-6
    # linear body-velocity drag, N per m/s, per body axis
    drag: np.ndarray = field(default_factory=lambda: np.array([0.05, 0.05, 0.08]))
    allow_any_gravity: bool = False

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.inertia.shape == (3,):
            self.inertia = np.diag(self.inertia)
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.drag = np.asarray(self.drag, dtype=float)
        self.validate()

    def validate(self):
        if not self.mass > 0:
            raise ConfigError(f"mass must be positive, got {self.mass}")
        if self.inertia.shape != (3, 3) or np.any(np.diag(self.inertia) <= 0):
            raise ConfigError("inertia must be 3x3 with positive diagonal")
        g = np.linalg.norm(self.gravity)
        if not self.allow_any_gravity and not 9.0 <= g <= 10.5:
            raise ConfigError(f"gravity magnitude {g:.3f} outside [9.0, 10.5] m/s^2")
        if self.thrust_coefficient <= 0:
            raise ConfigError("thrust_coefficient must be positive")

    @property
    def inertia_inv(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.inertia)
        except np.linalg.LinAlgError as exc:
            raise ConfigError("inertia matrix is singular") from exc

    @property
    def hover_speed(self) -> float:
        """Rotor speed (rad/s) at which four equal rotors balance gravity."""
        weight = self.mass * np.linalg.norm(self.gravity)
        return float(np.sqrt(weight / (4.0 * self.thrust_coefficient)))


@dataclass
class BodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.quaternion = np.asarray(self.quaternion, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.quaternion, self.rates])

    @classmethod
    def from_vector(cls, y) -> "BodyState":
        y = np.asarray(y, dtype=float)
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:10].copy(), y[10:13].copy())

    @property
    def rotation(self) -> np.ndarray:
        """Body-to-inertial rotation matrix."""
        return quat_to_rotation(self.quaternion)

    @property
    def euler(self) -> np.ndarray:
        return quat_to_euler(self.quaternion)


@dataclass
class BodyWrench:
    force: np.ndarray
    moment: np.ndarray


@dataclass
class AeroMomentModel:
    """Per-axis polynomial moment model.

    Each axis holds terms ``(rate_exp, input_exp, coef)``; axis 0 is driven by
    (p, u_p), axis 1 by (q, u_q), axis 2 by (r, u_r).
    """

    terms: tuple = ()

    def __post_init__(self):
        self.terms = tuple(tuple((int(a), int(b), float(c)) for a, b, c in axis)
                           for axis in self.terms)
        if len(self.terms) != 3:
            raise ConfigError("aero moment model needs exactly three axes")
        for i, axis in enumerate(self.terms):
            if not axis:
                raise ConfigError(f"aero axis {i} has no terms")
            for a, b, c in axis:
                if a < 0 or b < 0 or a + b > MAX_DEGREE:
                    raise ConfigError(f"term ({a}, {b}) on axis {i} exceeds degree {MAX_DEGREE}")
                if not np.isfinite(c):
                    raise ConfigError(f"non-finite coefficient on axis {i}")

    @classmethod
    def linear(cls, input_gain, rate_damping) -> "AeroMomentModel":
        """``M_axis = k_u * u_axis + k_d * rate_axis``."""
        return cls(tuple(((0, 1, ku), (1, 0, kd)) for ku, kd in zip(input_gain, rate_damping)))

    def evaluate(self, rates, u) -> np.ndarray:
        rates = np.asarray(rates, dtype=float)
        u = np.asarray(u, dtype=float)
        out = np.zeros(np.broadcast(rates, u).shape)
        for i, axis in enumerate(self.terms):
            w, v = rates[..., i], u[..., i]
            for a, b, c in axis:
                out[..., i] += c * w**a * v**b
        return out

    def partials(self, rates, u):
        """Return (dM/drate, dM/du) per axis, each shaped like ``rates``."""
        rates = np.asarray(rates, dtype=float)
        u = np.asarray(u, dtype=float)
        shape = np.broadcast(rates, u).shape
        d_rate = np.zeros(shape)
        d_input = np.zeros(shape)
        for i, axis in enumerate(self.terms):
            w, v = rates[..., i], u[..., i]
            for a, b, c in axis:
                if a:
                    d_rate[..., i] += c * a * w ** (a - 1) * v**b
                if b:
                    d_input[..., i] += c * b * w**a * v ** (b - 1)
        return d_rate, d_input

    def rotor_moments(self, rates, rotor_speeds, spin_sign: int = 1) -> np.ndarray:
        return self.evaluate(rates, control_moments(rotor_speeds, spin_sign))


DEFAULT_MOMENT_GAIN = (2.33e-4, 2.33e-4, 3.0e-5)
DEFAULT_RATE_DAMPING = (-2.0e-4, -2.0e-4, -3.0e-4)


def default_aero_model() -> AeroMomentModel:
    return AeroMomentModel.linear(DEFAULT_MOMENT_GAIN, DEFAULT_RATE_DAMPING)


@dataclass(frozen=True)
class RotorMomentModel:
    """Moments from per-rotor thrust ``k_T w^2`` and drag torque ``k_Q w^2``.

    Used as the simulated airframe. Its moments are quadratic in rotor speed,
    so a polynomial in the mixed inputs u only matches it near the hover
    point it was linearised at.
    """

    arm: float = 0.0767  # rotor to roll/pitch axis, m
    thrust_coefficient: float = 2.167e-6
    torque_coefficient: float = 2.143e-8
    rate_damping: tuple = DEFAULT_RATE_DAMPING

    def __post_init__(self):
        if not (self.arm > 0 and self.thrust_coefficient > 0 and self.torque_coefficient > 0):
            raise ConfigError("rotor moment coefficients must be positive")

    def rotor_moments(self, rates, rotor_speeds, spin_sign: int = 1) -> np.ndarray:
        w = np.asarray(rotor_speeds, dtype=float)
        sq = control_moments(w**2, spin_sign)
        k = np.array([self.arm * self.thrust_coefficient] * 2 + [self.torque_coefficient])
        return k * sq + np.asarray(self.rate_damping) * np.asarray(rates, dtype=float)

    def linearized(self, hover_speed: float) -> AeroMomentModel:
        """Linear model in (rate, u) matching this one at equal rotor speeds."""
        k = 2.0 * hover_speed * np.array(
            [self.arm * self.thrust_coefficient] * 2 + [self.torque_coefficient])
        return AeroMomentModel.linear(k, self.rate_damping)


# Rows map rotor speeds to (u_p, u_q, u_r / S_r).
_MIX = np.array([
    [1.0, -1.0, -1.0, 1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
])


def moment_mixing(spin_sign: int = 1) -> np.ndarray:
    """3x4 matrix G with ``control_moments(w) = G @ w``."""
    G = _MIX.copy()
    G[2] *= spin_sign
    return G


def control_moments(rotor_speeds, spin_sign: int = 1) -> np.ndarray:
    """Roll, pitch and yaw control moments (u_p, u_q, u_r) from rotor speeds.

    Rotor order: 1 front-left, 2 front-right, 3 aft-right, 4 aft-left.
    Works on a single 4-vector or on an (N, 4) array.
    """
    w = np.asarray(rotor_speeds, dtype=float)
    if w.shape[-1] != 4:
        raise InvalidInputError(f"expected 4 rotor speeds, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidInputError("rotor speeds must be finite")
    if spin_sign not in (1, -1):
        raise InvalidInputError("spin_sign must be +1 or -1")
    return w @ moment_mixing(spin_sign).T


def aero_moments(rates, u, model: AeroMomentModel) -> np.ndarray:
    return model.evaluate(rates, u)


def body_forces(state: BodyState, rotor_speeds, params: QuadParams) -> np.ndarray:
    w = np.asarray(rotor_speeds, dtype=float)
    thrust = params.thrust_coefficient * np.sum(w**2)
    return np.array([0.0, 0.0, -thrust]) - params.drag * state.velocity


def rate_derivative(state: BodyState, moment, params: QuadParams) -> np.ndarray:
    """Euler's rotation equation solved for the body angular acceleration."""
    omega = state.rates
    I = params.inertia
    return params.inertia_inv @ (np.asarray(moment, dtype=float) - np.cross(omega, I @ omega))


def translational_derivative(state: BodyState, force, params: QuadParams) -> np.ndarray:
    R_be = quat_to_rotation(state.quaternion).T
    return (R_be @ params.gravity + np.asarray(force, dtype=float) / params.mass
            - np.cross(state.rates, state.velocity))


def rate_dynamics(rates, u, params: QuadParams, aero: AeroMomentModel) -> np.ndarray:
    """Vectorised angular acceleration f(Omega, u) for (N, 3) arrays."""
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    I = params.inertia
    moments = aero.evaluate(rates, u)
    gyro = np.cross(rates, rates @ I.T)
    return (moments - gyro) @ params.inertia_inv.T


def rate_jacobians(rates, u, params: QuadParams, aero: AeroMomentModel):
    """Analytic A = df/dOmega and B = df/du of the rate dynamics.

    Accepts (N, 3) arrays and returns (N, 3, 3) stacks.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    I = params.inertia
    I_inv = params.inertia_inv
    d_rate, d_input = aero.partials(rates, u)
    n = max(len(rates), len(u))
    # d(Omega x I Omega)/dOmega = [Omega]x I - [I Omega]x
    gyro = _skew(np.broadcast_to(rates, (n, 3))) @ I - _skew(np.broadcast_to(rates, (n, 3)) @ I.T)
    A = I_inv @ (_diag_stack(np.broadcast_to(d_rate, (n, 3))) - gyro)
    B = I_inv @ _diag_stack(np.broadcast_to(d_input, (n, 3)))
    return A, B


def _skew(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def _diag_stack(d):
    out = np.zeros(d.shape + (3,))
    idx = np.arange(3)
    out[..., idx, idx] = d
    return out


def quat_to_rotation(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_to_euler(q) -> np.ndarray:
    """ZYX Euler angles (roll, pitch, yaw) in radians; accepts (..., 4)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.stack([roll, pitch, yaw], axis=-1)


def euler_to_quat(roll, pitch, yaw) -> np.ndarray:
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ])


def _state_derivative(y, rotor_speeds, params, aero, spin_sign, disturbance):
    state = BodyState.from_vector(y)
    q = state.quaternion
    R = quat_to_rotation(q)
    force = body_forces(state, rotor_speeds, params)
    moment = aero.rotor_moments(state.rates, rotor_speeds, spin_sign)
    if disturbance is not None:
        moment = moment + disturbance
    p, qr, r = state.rates
    q_dot = 0.5 * np.array([
        -q[1] * p - q[2] * qr - q[3] * r,
        q[0] * p + q[2] * r - q[3] * qr,
        q[0] * qr - q[1] * r + q[3] * p,
        q[0] * r + q[1] * qr - q[2] * p,
    ])
    return np.concatenate([
        R @ state.velocity,
        translational_derivative(state, force, params),
        q_dot,
        rate_derivative(state, moment, params),
    ])


def integrate_step(state: BodyState, rotor_speeds, params: QuadParams,
                   aero: AeroMomentModel, dt: float, spin_sign: int = 1,
                   disturbance=None, t: float = 0.0) -> BodyState:
    """Advance the rigid body by one RK4 step with rotor speeds held constant.

    ``aero`` is any moment model with ``rotor_moments``. ``disturbance`` is an extra body moment (N m) held over the step.
    """
    if not 0 < dt <= MAX_DT:
        raise InvalidInputError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    y = state.to_vector()
    args = (rotor_speeds, params, aero, spin_sign, disturbance)
    k1 = _state_derivative(y, *args)
    k2 = _state_derivative(y + 0.5 * dt * k1, *args)
    k3 = _state_derivative(y + 0.5 * dt * k2, *args)
    k4 = _state_derivative(y + dt * k3, *args)
    y_next = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise DivergenceError(t + dt)
    y_next[6:10] /= np.linalg.norm(y_next[6:10])
    return BodyState.from_vector(y_next)
