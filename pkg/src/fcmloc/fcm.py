"""Feasibly controllable metric: per-sample feasibility check and windowed vote.

Pipeline per sample k of a log::

    filter -> differentiate rates -> align -> d(xdot), dx, du
           -> M (windowed correlation) -> B_k -> e -> du_c = B^-1 e
           -> du_max (actuator headroom) -> rank(C) -> FCM[k] -> FCMW
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .actuator import ActuatorParams, max_moment_change
from .dynamics import AeroMomentModel, QuadParams, control_moments, rate_jacobians
from .errors import ConfigError, EstimationError, SingularEffectivenessError
from .signals import FilterSpec, SeriesAlignment, differentiate_rates, lowpass, synchronize

EPSILON = 1e-3
MIN_M_WINDOW = 10


@dataclass
class LinearizedModel:
    """Constant differential-form model ``d(xdot) = A dx + B du``."""

    B: np.ndarray
    A: np.ndarray = None
    b_only: bool = True
    x: np.ndarray = None
    u: np.ndarray = None

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        n = self.B.shape[0]
        if self.A is None or self.b_only:
            self.A = np.zeros((n, n))
        self.A = np.asarray(self.A, dtype=float)
        if self.A.shape != (n, n):
            raise ConfigError(f"A must be {n}x{n}, got {self.A.shape}")

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def jacobians(self, x, u):
        k = len(x)
        return (np.broadcast_to(self.A, (k,) + self.A.shape),
                np.broadcast_to(self.B, (k,) + self.B.shape))


@dataclass
class ScheduledRateModel:
    """Full-mode model: A and B from the analytic Jacobian at each (Omega, u)."""

    params: QuadParams
    aero: AeroMomentModel
    b_only: bool = False
    n: int = 3

    def jacobians(self, x, u):
        return rate_jacobians(x, u, self.params, self.aero)

    def nominal(self) -> LinearizedModel:
        A, B = self.jacobians(np.zeros((1, 3)), np.zeros((1, 3)))
        return LinearizedModel(B[0], A[0], b_only=False)


def effectiveness_from_aero(params: QuadParams, aero: AeroMomentModel) -> LinearizedModel:
    """Hover B-only model for logs without a trusted A."""
    _, B = rate_jacobians(np.zeros((1, 3)), np.zeros((1, 3)), params, aero)
    return LinearizedModel(B[0], b_only=True)


@dataclass
class FcmConfig:
    mvw: float = 0.2
    cf: float | None = None
    m_window: float = 0.2
    dt: float | None = None
    rank_tol: float = 1e-8
    b_only: bool = False
    threshold: float = 0.5
    zero_phase: bool = True
    shift_samples: int = 1
    m_method: str = "correlation"  # or "regression"
    m_update: str = "cumulative"  # or "scheduled"
    excitation_floor: float = 5.0
    epsilon: float = EPSILON
    disclose_faults: bool = False
    refilter_accel: bool = False

    def __post_init__(self):
        if self.m_method not in ("correlation", "regression"):
            raise ConfigError(f"unknown m_method {self.m_method!r}")
        if self.m_update not in ("scheduled", "cumulative"):
            raise ConfigError(f"unknown m_update {self.m_update!r}")
        if not self.rank_tol > 0:
            raise ConfigError("rank tolerance must be positive")
        if self.threshold != 0.5:
            raise ConfigError("voting threshold is fixed at 0.5")
        if self.dt is not None:
            self.check_dt(self.dt)

    def check_dt(self, dt):
        if self.mvw < dt * (1 - 1e-9) or self.m_window < dt * (1 - 1e-9):
            raise ConfigError("MVW and M window must be at least one sample long")

    def samples(self, seconds, dt) -> int:
        return max(1, int(round(seconds / dt)))


# ---------------------------------------------------------------------------
# single-sample / single-window operations


def difference_model(dx, du, A, B) -> np.ndarray:
    """Predicted d(xdot) = A dx + B du; broadcasts over leading sample axes."""
    dx = np.asarray(dx, dtype=float)
    du = np.asarray(du, dtype=float)
    return (np.einsum("...ij,...j->...i", np.asarray(A, dtype=float), dx)
            + np.einsum("...ij,...j->...i", np.asarray(B, dtype=float), du))


def _window_scale(meas, pred, method, floor, eps):
    """Per-window effectiveness scale along the last axis; NaN where not excited."""
    pc = pred - pred.mean(axis=-1, keepdims=True)
    mc = meas - meas.mean(axis=-1, keepdims=True)
    var_p = (pc * pc).mean(axis=-1)
    var_m = (mc * mc).mean(axis=-1)
    cov = (pc * mc).mean(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        if method == "correlation":
            m = cov / np.sqrt(var_p * var_m)
        else:
            m = cov / var_p
    m = np.clip(m, eps, 1.0)
    excited = (np.sqrt(var_p) >= floor) & (var_m > 0)
    return np.where(excited & np.isfinite(m), m, np.nan)


def estimate_M(dxdot, dx, du, model, previous=None, method="correlation",
               floor=0.5, eps=EPSILON) -> np.ndarray:
    """Diagonal effectiveness scale from one window of samples (rows = time).

    Channels whose predicted signal is not excited keep ``previous``
    (default 1).
    """
    dxdot = np.asarray(dxdot, dtype=float)
    if len(dxdot) < MIN_M_WINDOW:
        raise EstimationError(f"M window needs >= {MIN_M_WINDOW} samples, got {len(dxdot)}")
    A, B = (model.A, model.B) if hasattr(model, "A") else model
    pred = difference_model(dx, du, A, B)
    m = _window_scale(dxdot.T, pred.T, method, floor, eps)
    prev = np.ones(m.shape) if previous is None else np.asarray(previous, dtype=float)
    return np.where(np.isnan(m), prev, m)


def update_B(B, M) -> np.ndarray:
    """``B_{k+1} = B_k M`` for a diagonal scale given as matrix or vector."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = np.diag(M)
    return np.asarray(B, dtype=float) @ M


def model_error(dxdot, dx, du, A, B) -> np.ndarray:
    return np.asarray(dxdot, dtype=float) - difference_model(dx, du, A, B)


def corrective_control(B, e) -> np.ndarray:
    """``du_c = B^-1 e``; works on single matrices or (N, n, n) stacks."""
    B = np.asarray(B, dtype=float)
    e = np.asarray(e, dtype=float)
    diag = np.diagonal(B, axis1=-2, axis2=-1)
    if np.any(np.abs(diag) < 1e-12):
        raise SingularEffectivenessError("control effectiveness has a (near) zero diagonal entry")
    if B.ndim == 2:
        return np.linalg.solve(B, e)
    return np.linalg.solve(B, e[..., None])[..., 0]


def controllability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    blocks = [B]
    for _ in range(A.shape[-1] - 1):
        blocks.append(A @ blocks[-1])
    return np.concatenate(blocks, axis=-1)


def controllability_rank(A, B, tol: float = 1e-8):
    """Numerical rank of [B AB ... A^(n-1) B], singular values relative to the largest."""
    C = controllability_matrix(A, B)
    s = np.linalg.svd(C, compute_uv=False)
    smax = s.max(axis=-1, keepdims=True) if s.size else np.zeros(s.shape[:-1] + (1,))
    rank = np.sum((s >= tol * smax) & (smax > 0), axis=-1)
    return int(rank) if np.ndim(rank) == 0 else rank


def fcm_instant(du_max, du_c, rank, n) -> int:
    """1 if every axis can supply its corrective increment and C has full rank."""
    if rank < n:
        return 0
    return int(not np.any(np.abs(np.asarray(du_c)) > np.asarray(du_max)))


def fcmw(window) -> int:
    """Majority vote: 0 when the mean of the window is below one half."""
    w = np.asarray(window, dtype=np.int64)
    return int(2 * int(w.sum()) >= len(w))


def fcmw_trace(fcm, n: int, start: int = 0) -> np.ndarray:
    """Windowed vote over the trailing ``n`` samples; 1 before ``start + n - 1``."""
    fcm = np.asarray(fcm, dtype=np.int64)
    out = np.ones(len(fcm), dtype=np.int64)
    if len(fcm) - start < n:
        return out
    csum = np.concatenate([[0], np.cumsum(fcm[start:])])
    sums = csum[n:] - csum[:-n]
    out[start + n - 1:] = (2 * sums >= n).astype(np.int64)
    return out


def rolling_M(meas, pred, n: int, method="correlation", floor=0.5, eps=EPSILON,
              valid=None, hold=True) -> np.ndarray:
    """M estimated over the trailing ``n`` samples ending at each index.

    Unexcited or incomplete windows hold the previous estimate (initially 1),
    or are left NaN when ``hold`` is false.
    """
    if n < MIN_M_WINDOW:
        raise EstimationError(f"M window needs >= {MIN_M_WINDOW} samples, got {n}")
    N, c = meas.shape
    raw = np.full((N, c), np.nan)
    if N >= n:
        meas_f = np.where(np.isfinite(meas), meas, 0.0)
        pred_f = np.where(np.isfinite(pred), pred, 0.0)
        wm = sliding_window_view(meas_f, n, axis=0)
        wp = sliding_window_view(pred_f, n, axis=0)
        raw[n - 1:] = _window_scale(wm, wp, method, floor, eps)
        ok = np.ones(N, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        full = np.zeros(N, dtype=bool)
        full[n - 1:] = sliding_window_view(ok, n).all(axis=1)
        raw[~full] = np.nan
    return _hold(raw, 1.0) if hold else raw


def _hold(raw, initial):
    idx = np.where(np.isfinite(raw), np.arange(len(raw))[:, None], -1)
    idx = np.maximum.accumulate(idx, axis=0)
    filled = raw[np.maximum(idx, 0), np.arange(raw.shape[1])]
    return np.where(idx >= 0, filled, initial)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class DetectionResult:
    time: np.ndarray
    fcm: np.ndarray
    fcmw: np.ndarray
    m_trace: np.ndarray
    rank_trace: np.ndarray
    valid: np.ndarray
    warmup_index: int
    detection_time: float | None
    error: np.ndarray = field(repr=False, default=None)
    du_c: np.ndarray = field(repr=False, default=None)
    du_max: np.ndarray = field(repr=False, default=None)

    @property
    def first_fcm_zero(self) -> float | None:
        idx = np.flatnonzero((self.fcm == 0) & self.valid)
        return float(self.time[idx[0]]) if len(idx) else None

    def to_dict(self, config=None, downsample: int = 1, extra=None) -> dict:
        s = slice(None, None, max(1, int(downsample)))
        d = {
            "config": config if config is not None else {},
            "detection_time_s": self.detection_time,
            "fcm": self.fcm[s].tolist(),
            "fcmw": self.fcmw[s].tolist(),
            "m_trace": np.round(self.m_trace[s], 9).tolist(),
            "rank_trace": self.rank_trace[s].tolist(),
        }
        if extra:
            d.update(extra)
        return d

    def to_json(self, config=None, downsample: int = 1, extra=None) -> str:
        return json.dumps(self.to_dict(config, downsample, extra), sort_keys=True)


def prepare_signals(rates, rotors, dt, config: FcmConfig, spin_sign=1):
    """Filter, differentiate and align; returns dict of per-sample arrays."""
    x = np.asarray(rates, dtype=float)
    w = np.asarray(rotors, dtype=float)
    if config.cf is not None:
        spec = FilterSpec(config.cf, 1.0 / dt, "zero_phase" if config.zero_phase else "causal")
        x = lowpass(x, spec)
        w = lowpass(w, spec)
    else:
        spec = None
    u = control_moments(w, spin_sign)
    xdot = differentiate_rates(x, dt)
    if config.refilter_accel and spec is not None:
        xdot[1:] = lowpass(xdot[1:], spec)
    xmid = np.full_like(x, np.nan)
    xmid[1:] = 0.5 * (x[1:] + x[:-1])
    s = -int(config.shift_samples)
    aligned, valid = synchronize({"xdot": xdot, "xmid": xmid, "u": u, "w": w},
                                 SeriesAlignment({"xdot": s, "xmid": s}))
    xd, xm = aligned["xdot"], aligned["xmid"]
    out = {
        "w": w,
        "u": u,
        "x": xm,
        "dxdot": np.vstack([np.full((1, 3), np.nan), np.diff(xd, axis=0)]),
        "dx": np.vstack([np.full((1, 3), np.nan), np.diff(xm, axis=0)]),
        "du": np.vstack([np.full((1, 3), np.nan), np.diff(u, axis=0)]),
    }
    ok = valid.copy()
    for k in ("dxdot", "dx", "du"):
        ok &= np.all(np.isfinite(out[k]), axis=1)
    out["valid"] = ok
    return out


def detect(log, model, config: FcmConfig, actuator: ActuatorParams, caps=None) -> DetectionResult:
    """Run the detector over a uniformly sampled flight log.

    ``model`` is a :class:`LinearizedModel` (B-only) or :class:`ScheduledRateModel`
    (full mode). ``caps`` are per-sample rotor caps, used for the headroom only
    when ``config.disclose_faults`` is set.
    """
    dt = config.dt or log.dt
    config.check_dt(dt)
    sig = prepare_signals(log.rates, log.rotor_speeds, dt, config, actuator.spin_sign)
    valid = sig["valid"]
    N = len(valid)
    n = model.n
    b_only = config.b_only or getattr(model, "b_only", False)

    zero = lambda a: np.where(np.isfinite(a), a, 0.0)  # noqa: E731
    x, u, dx, du, dxdot = (zero(sig[k]) for k in ("x", "u", "dx", "du", "dxdot"))
    A, B_nom = model.jacobians(x, u)
    if b_only:
        A = np.zeros_like(np.broadcast_to(A, (N, n, n)))
    A = np.broadcast_to(A, (N, n, n))
    B_nom = np.broadcast_to(B_nom, (N, n, B_nom.shape[-1]))

    pred_nom = difference_model(dx, du, A, B_nom)
    n_m = config.samples(config.m_window, dt)
    M_raw = rolling_M(dxdot, pred_nom, n_m, config.m_method, config.excitation_floor,
                      config.epsilon, valid, hold=False)
    # the estimate available after sample k-1 acts on sample k
    M_raw = np.vstack([np.full((1, M_raw.shape[1]), np.nan), M_raw[:-1]])
    if config.m_update == "cumulative":
        # unexcited windows leave B where it is; the product shares M's floor
        scale = np.cumprod(np.where(np.isnan(M_raw), 1.0, M_raw), axis=0)
        scale = np.maximum(scale, config.epsilon)
    else:
        scale = _hold(M_raw, 1.0)
    B = B_nom * scale[:, None, :]

    e = dxdot - difference_model(dx, du, A, B)
    du_c = corrective_control(B, e)
    fault_caps = caps if (config.disclose_faults and caps is not None) else None
    du_max = max_moment_change(sig["w"], du_c, actuator, dt, fault_caps)

    if b_only:
        # without A the system is taken as controllable
        rank = np.full(N, n, dtype=np.int64)
    else:
        rank = np.asarray(controllability_rank(A, B, config.rank_tol), dtype=np.int64)

    infeasible = np.any(np.abs(du_c) > du_max, axis=1)
    fcm = np.where(valid & ((rank < n) | infeasible), 0, 1).astype(np.int64)

    n_w = config.samples(config.mvw, dt)
    first = int(np.argmax(valid)) if valid.any() else N
    warm = first + max(n_m, n_w) - 1
    votes = fcmw_trace(fcm, n_w, first)
    votes[:warm] = 1
    hits = np.flatnonzero(votes[warm:] == 0)
    t = np.asarray(log.time, dtype=float)
    det = float(t[warm + hits[0]]) if len(hits) else None
    return DetectionResult(t, fcm, votes, scale, rank, valid, warm, det, e, du_c, du_max)


def config_dict(config: FcmConfig) -> dict:
    return asdict(config)
