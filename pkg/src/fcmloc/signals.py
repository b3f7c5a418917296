"""Low-pass filtering, rate differentiation and integer-sample alignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import AlignmentError, ConfigError

MAX_SHIFT = 16


@dataclass(frozen=True)
class FilterSpec:
    cutoff: float
    sample_rate: float
    mode: str = "zero_phase"  # or "causal"
    order: int = 2

    def __post_init__(self):
        if self.order != 2:
            raise ConfigError("only second-order Butterworth filters are supported")
        if self.mode not in ("zero_phase", "causal"):
            raise ConfigError(f"unknown filter mode {self.mode!r}")
        if not 0 < self.cutoff < self.sample_rate / 2:
            raise ConfigError(
                f"cutoff {self.cutoff} Hz must lie in (0, {self.sample_rate / 2}) Hz (Nyquist)")

    @property
    def coefficients(self):
        return sps.butter(self.order, self.cutoff, btype="low", fs=self.sample_rate)

    @property
    def warmup(self) -> float:
        return 3.0 / self.cutoff


def lowpass(series, spec: FilterSpec) -> np.ndarray:
    """Filter along axis 0.

    Causal mode starts from the steady state of the first sample, so a
    constant input passes unchanged from the first output on.
    """
    x = np.asarray(series, dtype=float)
    b, a = spec.coefficients
    if spec.mode == "zero_phase":
        return sps.filtfilt(b, a, x, axis=0)
    zi = sps.lfilter_zi(b, a)
    zi = zi.reshape((-1,) + (1,) * (x.ndim - 1)) * x[:1]
    y, _ = sps.lfilter(b, a, x, axis=0, zi=zi)
    return y


def group_delay(spec: FilterSpec, frequency: float = None) -> float:
    """Causal-mode group delay in seconds (at ``frequency``, default near DC)."""
    if spec.mode == "zero_phase":
        return 0.0
    f = spec.cutoff * 1e-3 if frequency is None else frequency
    b, a = spec.coefficients
    _, gd = sps.group_delay((b, a), w=[f], fs=spec.sample_rate)
    return float(gd[0]) / spec.sample_rate


def differentiate_rates(series, dt: float) -> np.ndarray:
    """Backward difference ``(x_k - x_{k-1}) / dt``; row 0 is NaN."""
    x = np.asarray(series, dtype=float)
    out = np.full_like(x, np.nan)
    out[1:] = (x[1:] - x[:-1]) / dt
    return out


def shift(series, n: int) -> np.ndarray:
    """``out[k] = in[k - n]`` with NaN where no source sample exists."""
    x = np.asarray(series, dtype=float)
    out = np.full_like(x, np.nan)
    if n == 0:
        out[:] = x
    elif n > 0:
        if n < len(x):
            out[n:] = x[:-n]
    else:
        if -n < len(x):
            out[:n] = x[-n:]
    return out


@dataclass(frozen=True)
class SeriesAlignment:
    shifts: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, s in self.shifts.items():
            if abs(int(s)) > MAX_SHIFT:
                raise AlignmentError(f"shift {s} for {name!r} exceeds +/-{MAX_SHIFT} samples")


def synchronize(channels: dict, alignment: SeriesAlignment):
    """Shift each channel by its integer offset.

    Returns ``(aligned, valid)`` where ``valid`` is the boolean mask of the
    index range every channel covers.
    """
    if not channels:
        raise AlignmentError("no channels to align")
    n = {len(v) for v in channels.values()}
    if len(n) != 1:
        raise AlignmentError("channels differ in length")
    (length,) = n
    shifts = {k: int(alignment.shifts.get(k, 0)) for k in channels}
    lo = max([0] + [s for s in shifts.values()])
    hi = min([length] + [length + s for s in shifts.values()])
    if hi <= lo:
        raise AlignmentError("aligned channels have no common valid range")
    valid = np.zeros(length, dtype=bool)
    valid[lo:hi] = True
    return {k: shift(v, shifts[k]) for k, v in channels.items()}, valid
