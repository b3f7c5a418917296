"""Flight logs: CSV interchange, simulation recording and synthetic yaw-LOC flights."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .controller import ReferenceProgram, Segment
from .errors import DivergenceError, GenerationError, LoadError
from .simulation import OscillatingDisturbance, Scenario, SimRun, simulate

log = logging.getLogger(__name__)

LABELS = ("non-LOC", "yaw-maneuver", "unknown")
SOURCES = ("sim", "file", "synthetic")
RATE_COLS = ("p", "q", "r")
ROTOR_COLS = ("w1", "w2", "w3", "w4")
ATT_COLS = ("phi", "theta", "psi")
JITTER_TOL = 1e-6
MAX_NAN_FRACTION = 0.01


@dataclass
class FlightLog:
    time: np.ndarray
    rates: np.ndarray
    rotor_speeds: np.ndarray
    attitude: np.ndarray | None = None
    yaw_rate_ref: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float).reshape(-1, 3)
        self.rotor_speeds = np.asarray(self.rotor_speeds, dtype=float).reshape(-1, 4)
        if self.attitude is not None:
            self.attitude = np.asarray(self.attitude, dtype=float).reshape(-1, 3)
        if self.yaw_rate_ref is not None:
            self.yaw_rate_ref = np.asarray(self.yaw_rate_ref, dtype=float)
        self.metadata = {"label": "unknown", "source": "file", **self.metadata}
        self.validate()

    def validate(self):
        n = len(self.time)
        if n < 2:
            raise LoadError("a flight log needs at least 2 samples")
        lengths = [len(self.rates), len(self.rotor_speeds)]
        if self.attitude is not None:
            lengths.append(len(self.attitude))
        if self.yaw_rate_ref is not None:
            lengths.append(len(self.yaw_rate_ref))
        if any(m != n for m in lengths):
            raise LoadError("all channels must have the same length")
        steps = np.diff(self.time)
        dt = np.median(steps)
        if not dt > 0 or np.max(np.abs(steps - dt)) > JITTER_TOL * dt:
            raise LoadError("time stamps are not uniformly sampled")
        if not np.all(np.isfinite(self.rates)):
            raise LoadError("rate channels contain non-finite values")
        if self.metadata["label"] not in LABELS:
            raise LoadError(f"unknown label {self.metadata['label']!r}")
        if self.metadata["source"] not in SOURCES:
            raise LoadError(f"unknown source {self.metadata['source']!r}")

    @property
    def dt(self) -> float:
        return float((self.time[-1] - self.time[0]) / (len(self.time) - 1))

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def __len__(self):
        return len(self.time)

    def to_frame(self) -> pd.DataFrame:
        cols = {"t": self.time}
        cols.update({c: self.rates[:, i] for i, c in enumerate(RATE_COLS)})
        cols.update({c: self.rotor_speeds[:, i] for i, c in enumerate(ROTOR_COLS)})
        if self.attitude is not None:
            cols.update({c: self.attitude[:, i] for i, c in enumerate(ATT_COLS)})
        if self.yaw_rate_ref is not None:
            cols["r_ref"] = self.yaw_rate_ref
        return pd.DataFrame(cols)


def save_csv(flight: FlightLog, path, header: dict | None = None) -> None:
    """Write the canonical CSV; a leading ``#`` line carries metadata as JSON."""
    meta = {**flight.metadata, **(header or {})}
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True, default=_jsonable) + "\n")
        flight.to_frame().to_csv(fh, index=False, float_format="%.12g", lineterminator="\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def erpm_factor(pole_pairs: int) -> float:
    return 2 * np.pi / (60.0 * pole_pairs)


def load_csv(path, erpm: bool = False, pole_pairs: int = 7, label: str | None = None) -> FlightLog:
    """Load a log in the canonical column schema.

    Non-uniform time stamps are resampled by linear interpolation onto the
    median step; isolated NaNs (at most 1% per column) are interpolated.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"log file not found: {path}")
    meta = {}
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith("#"):
        try:
            meta = json.loads(first[1:])
        except json.JSONDecodeError:
            meta = {}
    try:
        df = pd.read_csv(path, comment="#", skip_blank_lines=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise LoadError(f"{path}: cannot parse CSV ({exc})") from exc
    df.columns = [c.strip() for c in df.columns]
    for col in ("t",) + RATE_COLS + ROTOR_COLS:
        if col not in df.columns:
            raise LoadError(f"{path}: missing mandatory column {col!r}")
    if len(df) < 2:
        raise LoadError(f"{path}: fewer than 2 data rows")

    optional = [c for c in ATT_COLS + ("r_ref",) if c in df.columns]
    has_att = all(c in df.columns for c in ATT_COLS)
    cols = ["t", *RATE_COLS, *ROTOR_COLS, *optional]
    data = df[cols].apply(pd.to_numeric, errors="coerce")
    for col in cols:
        bad = data[col].isna()
        if bad.mean() > MAX_NAN_FRACTION:
            rows = np.flatnonzero(bad.to_numpy())[:5].tolist()
            raise LoadError(f"{path}: column {col!r} has {bad.mean():.1%} invalid values "
                            f"(first rows {rows})")
    data = data.dropna(subset=["t"]).sort_values("t").drop_duplicates("t")
    data = data.interpolate(limit_direction="both")

    t = data["t"].to_numpy()
    steps = np.diff(t)
    dt = float(np.median(steps))
    jitter = float(np.max(np.abs(steps - dt)) / dt) if len(steps) else 0.0
    resampled = jitter > JITTER_TOL
    if resampled:
        n = int(np.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
        t_new = t[0] + dt * np.arange(n)
        data = pd.DataFrame({c: np.interp(t_new, t, data[c].to_numpy()) for c in cols})
        t = t_new

    rotors = data[list(ROTOR_COLS)].to_numpy()
    meta = {**meta, "source": "file", "path": str(path), "jitter_rel": jitter,
            "resampled": resampled}
    meta.setdefault("label", "unknown")
    if label is not None:
        meta["label"] = label
    if erpm:
        f = erpm_factor(pole_pairs)
        rotors = rotors * f
        meta["rotor_unit_conversion"] = {"from": "eRPM", "to": "rad/s",
                                         "pole_pairs": pole_pairs, "factor": f}
    return FlightLog(
        time=t,
        rates=data[list(RATE_COLS)].to_numpy(),
        rotor_speeds=rotors,
        attitude=data[list(ATT_COLS)].to_numpy() if has_att else None,
        yaw_rate_ref=data["r_ref"].to_numpy() if "r_ref" in data.columns else None,
        metadata=meta,
    )


def record_sim(run: SimRun, label: str = "unknown", extra: dict | None = None) -> FlightLog:
    """Measured (noise-injected) channels of a finished simulation."""
    if len(run) == 0:
        raise LoadError("simulation produced no samples")
    if len(run) < 2:
        raise LoadError("simulation too short to record")
    sc = run.scenario
    yaw_ref = np.array([sc.program.at(t).yaw_rate if sc.program.at(t).mode == "yaw_rate" else 0.0
                        for t in run.time])
    meta = {"source": "sim", "label": label, "scenario": sc.name, "seed": sc.seed,
            "dt": sc.dt, **(extra or {})}
    return FlightLog(run.time, run.meas_rates, run.meas_rotor_speeds, run.euler, yaw_ref, meta)


# ---------------------------------------------------------------------------
# synthetic yaw-manoeuvre flights


@dataclass
class YawLocParams:
    """Generator settings; times in seconds, rates in rad/s, moments in N m.

    The off-axis disturbance grows as ``exp(growth_rate * s)`` from the onset
    and is scaled to reach ``crash_moment`` at ``crash_offset`` after the
    manoeuvre starts. The crash is the first time roll or pitch passes 90 deg;
    the log ends ``tumble_time`` later.
    """

    dt: float = 1.0 / 500.0
    hover_before: float = 1.0
    yaw_rate: float = np.radians(2000.0)
    growth_rate: float = 3.0
    onset_delay: float = 0.5
    crash_offset: float = 2.4
    crash_moment: float = 0.05
    tumble_time: float = 0.1
    stop_after: float = 1.0  # non-LOC: manoeuvre length before stopping
    hover_after: float = 1.5
    disturbance_frequency: float = 4.0
    sigma_rates: float = 0.01
    sigma_rotor: float = 3.0
    max_duration: float = 12.0

    def __post_init__(self):
        if self.growth_rate < 0 or self.crash_offset <= self.onset_delay:
            raise GenerationError("need growth_rate >= 0 and crash_offset > onset_delay")


@dataclass
class SyntheticFlight:
    log: FlightLog
    maneuver_start: float
    onset: float | None
    crash_time: float | None
    params: YawLocParams


def _tumble_stop(limit_time: float, tumble: float):
    """Stop ``tumble`` seconds after roll or pitch first passes 90 deg."""
    crashed = [None]

    def stop(t, state):
        roll, pitch, _ = state.euler
        if crashed[0] is None and max(abs(roll), abs(pitch)) > np.pi / 2:
            crashed[0] = t
        return t >= limit_time or (crashed[0] is not None and t - crashed[0] >= tumble)
    return stop


def generate_synthetic_yaw_loc(seed: int, params: YawLocParams | None = None) -> SyntheticFlight:
    """Simulate one yaw-rate manoeuvre flight.

    With ``growth_rate > 0`` the growing roll/pitch disturbance flips the
    vehicle and the log ends shortly after; with ``growth_rate == 0`` the
    manoeuvre stops after ``stop_after`` seconds and the vehicle returns to
    hover.
    """
    p = params or YawLocParams()
    rng = np.random.default_rng(seed)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    t_m = p.hover_before
    loc = p.growth_rate > 0
    hover = Segment(p.hover_before, "position", (0.0, 0.0, -1.5))
    stop = None
    if loc:
        onset = t_m + p.onset_delay
        program = ReferenceProgram((hover, Segment(p.max_duration, "yaw_rate",
                                                   (0.0, 0.0, -1.5), 0.0, sign * p.yaw_rate)))
        duration = p.max_duration
        amp = p.crash_moment * np.exp(-p.growth_rate * (p.crash_offset - p.onset_delay))
        dist = OscillatingDisturbance(onset, p.growth_rate, amp, p.disturbance_frequency,
                                      max_amplitude=10 * p.crash_moment)
        stop = _tumble_stop(p.max_duration, p.tumble_time)
    else:
        onset = None
        program = ReferenceProgram((hover,
                                    Segment(p.stop_after, "yaw_rate", (0.0, 0.0, -1.5), 0.0,
                                            sign * p.yaw_rate),
                                    Segment(p.hover_after, "yaw_rate", (0.0, 0.0, -1.5))))
        duration = program.duration
        dist = None
    if duration > p.max_duration:
        raise GenerationError(f"requested flight of {duration:.2f} s exceeds max_duration")
    sc = Scenario(name="synthetic-yaw", dt=p.dt, duration=duration, program=program,
                  sigma_rates=p.sigma_rates, sigma_rotor=p.sigma_rotor, disturbance=dist,
                  seed=seed, initial_position=(0.0, 0.0, -1.5))
    try:
        run = simulate(sc, stop=stop)
    except DivergenceError as exc:
        raise GenerationError(f"synthetic flight diverged at t={exc.t:.3f} s") from exc
    crash = None
    if loc:
        over = np.flatnonzero(np.max(np.abs(run.euler[:, :2]), axis=1) > np.pi / 2)
        if not len(over):
            raise GenerationError(f"no crash within max_duration={p.max_duration} s")
        crash = float(run.time[over[0]])
    meta = {"label": "yaw-maneuver" if loc else "non-LOC", "source": "synthetic",
            "maneuver_start": t_m, "onset": onset, "crash_time": crash,
            "generator": asdict(p)}
    flight = record_sim(run, meta["label"], meta)
    flight.metadata["source"] = "synthetic"
    return SyntheticFlight(flight, t_m, onset, crash, p)


@dataclass
class DatasetEntry:
    log: FlightLog
    label: str
    maneuver_start: float | None = None
    onset: float | None = None
    name: str = ""


def maneuver_start_from_log(flight: FlightLog, threshold: float = 10.0) -> float | None:
    """First sample where |r_ref| (or |r| if no reference) exceeds ``threshold`` rad/s."""
    sig = flight.yaw_rate_ref if flight.yaw_rate_ref is not None else flight.rates[:, 2]
    idx = np.flatnonzero(np.abs(sig) > threshold)
    return float(flight.time[idx[0]]) if len(idx) else None


def synthetic_dataset(n_loc: int = 30, n_nominal: int = 12, seed: int = 0,
                      base: YawLocParams | None = None) -> list[DatasetEntry]:
    """A labelled mix of yaw-LOC and stopped-manoeuvre flights with varied timing."""
    base = base or YawLocParams()
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_loc):
        p = replace(base,
                    crash_offset=float(rng.uniform(1.3, 3.5)),
                    onset_delay=float(rng.uniform(0.2, 0.8)),
                    growth_rate=float(rng.uniform(2.0, 4.5)),
                    disturbance_frequency=float(rng.uniform(3.0, 6.0)))
        f = generate_synthetic_yaw_loc(int(rng.integers(2**31)), p)
        entries.append(DatasetEntry(f.log, f.log.metadata["label"], f.maneuver_start, f.onset,
                                    f"loc-{i:03d}"))
    for i in range(n_nominal):
        p = replace(base, growth_rate=0.0, stop_after=float(rng.uniform(0.5, 1.1)))
        f = generate_synthetic_yaw_loc(int(rng.integers(2**31)), p)
        entries.append(DatasetEntry(f.log, f.log.metadata["label"], f.maneuver_start, None,
                                    f"nom-{i:03d}"))
    return entries
