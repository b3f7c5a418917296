"""Experiments: nominal and rotor-fault simulations, the MVW x CF sweep on a
labelled dataset, and the attitude-threshold baseline detector."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .actuator import FaultEvent
from .controller import ReferenceProgram, Segment
from .dynamics import QuadParams, default_aero_model
from .errors import ConfigError
from .fcm import (DetectionResult, FcmConfig, ScheduledRateModel, config_dict, detect,
                  effectiveness_from_aero)
from .ingest import DatasetEntry, FlightLog, record_sim
from .simulation import Scenario, SimRun, simulate

log = logging.getLogger(__name__)

FAULT_TIME = 5.2
ATTITUDE_LIMIT = np.radians(90.0)
PAPER_MVW = (0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 1.0, 1.2, 1.5)
PAPER_CF = (1.0, 5.0, 10.0, 30.0, 50.0, 100.0)


def tracking_program() -> ReferenceProgram:
    """20 s of position setpoint steps in NED (z negative is up)."""
    return ReferenceProgram((
        Segment(2.0, position=(0.0, 0.0, 0.0)),
        Segment(4.0, position=(2.0, 0.0, -1.0)),
        Segment(4.0, position=(2.0, 2.0, -1.0)),
        Segment(5.0, position=(0.0, 2.0, -2.0)),
        Segment(5.0, position=(0.0, 0.0, -1.0)),
    ))


def nominal_scenario(seed: int = 0, **kw) -> Scenario:
    kw.setdefault("program", tracking_program())
    return Scenario(name="nominal", seed=seed, **kw)


def fault_scenario(seed: int = 0, rotor: int = 3, time: float = FAULT_TIME, **kw) -> Scenario:
    kw.setdefault("program", tracking_program())
    return Scenario(name="fault", seed=seed, faults=(FaultEvent(rotor, 0.0, time),), **kw)


def simulation_config(**kw) -> FcmConfig:
    """Full-mode detector settings for simulated flights (0.2 s windows, no filter)."""
    kw.setdefault("mvw", 0.2)
    kw.setdefault("m_window", 0.2)
    return FcmConfig(**kw)


def detect_run(run: SimRun, config: FcmConfig) -> DetectionResult:
    sc = run.scenario
    flight = record_sim(run, "unknown")
    if config.b_only:
        model = effectiveness_from_aero(sc.quad, sc.aero)
    else:
        model = ScheduledRateModel(sc.quad, sc.aero)
    return detect(flight, model, config, sc.actuator, caps=run.caps)


def run_nominal_experiment(scenario: Scenario | None = None, config: FcmConfig | None = None):
    """Fly the tracking program without faults; returns (run, detection)."""
    sc = scenario or nominal_scenario()
    run = simulate(sc)
    return run, detect_run(run, config or simulation_config())


def run_fault_experiment(scenario: Scenario | None = None, config: FcmConfig | None = None):
    """Fly with a rotor fault the detector is not told about; returns (run, detection)."""
    sc = scenario or fault_scenario()
    if not sc.faults:
        raise ConfigError("fault experiment needs a fault schedule")
    run = simulate(sc)
    return run, detect_run(run, config or simulation_config())


def transitions(trace) -> int:
    """Number of 0<->1 switches in a binary trace."""
    trace = np.asarray(trace)
    return int(np.count_nonzero(np.diff(trace)))


# ---------------------------------------------------------------------------
# attitude baseline


def attitude_loc_detector(flight: FlightLog, start: float | None = None) -> float | None:
    """First time after ``start`` from which |roll| or |pitch| stays above 90 deg to log end."""
    if flight.attitude is None:
        raise ConfigError("attitude channels (phi, theta) are required")
    over = np.max(np.abs(flight.attitude[:, :2]), axis=1) > ATTITUDE_LIMIT
    t = flight.time
    if start is not None:
        over = over & (t >= start)
    if not over[-1]:
        return None
    # start of the final run of samples above the limit
    below = np.flatnonzero(~over)
    first = below[-1] + 1 if len(below) else 0
    return float(t[first])


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SweepGrid:
    mvw: tuple = PAPER_MVW
    cf: tuple = PAPER_CF

    def __post_init__(self):
        for name in ("mvw", "cf"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"sweep grid has no {name} values")
            if any(v <= 0 for v in vals) or list(vals) != sorted(vals):
                raise ConfigError(f"{name} values must be positive and ascending")
            object.__setattr__(self, name, vals)

    def cells(self):
        return [(m, c) for c in self.cf for m in self.mvw]


@dataclass
class FlightOutcome:
    name: str
    label: str
    detection_time: float | None
    maneuver_start: float | None
    onset: float | None
    error: str | None = None

    @property
    def delay(self) -> float | None:
        if self.detection_time is None or self.maneuver_start is None:
            return None
        return self.detection_time - self.maneuver_start


@dataclass
class SweepCell:
    mvw: float
    cf: float
    flights: list = field(default_factory=list)

    def _of(self, loc: bool):
        return [f for f in self.flights if (f.label == "yaw-maneuver") == loc and f.label != "unknown"]

    @property
    def nonloc_total(self) -> int:
        return len(self._of(False))

    @property
    def nonloc_passed(self) -> int:
        return sum(f.detection_time is None and f.error is None for f in self._of(False))

    @property
    def false_positives(self) -> int:
        return self.nonloc_total - self.nonloc_passed

    @property
    def loc_total(self) -> int:
        return len(self._of(True))

    @property
    def loc_detected(self) -> int:
        return sum(f.detection_time is not None for f in self._of(True))

    def delays(self) -> np.ndarray:
        return np.array([f.delay for f in self._of(True) if f.delay is not None])

    def summary(self) -> dict:
        d = self.delays()
        q = np.percentile(d, [25, 50, 75]) if len(d) else [None] * 3
        return {
            "mvw_s": self.mvw,
            "cf_hz": self.cf,
            "nonloc_passed": self.nonloc_passed,
            "nonloc_total": self.nonloc_total,
            "loc_detected": self.loc_detected,
            "loc_total": self.loc_total,
            "pass_rate": self.nonloc_passed / self.nonloc_total if self.nonloc_total else None,
            "detect_rate": self.loc_detected / self.loc_total if self.loc_total else None,
            "delay_median_s": None if q[1] is None else float(q[1]),
            "delay_iqr_s": None if q[0] is None else float(q[2] - q[0]),
            "errors": sum(f.error is not None for f in self.flights),
        }


@dataclass
class SweepReport:
    grid: SweepGrid
    config: dict
    cells: list

    def cell(self, mvw: float, cf: float) -> SweepCell:
        for c in self.cells:
            if np.isclose(c.mvw, mvw) and np.isclose(c.cf, cf):
                return c
        raise KeyError((mvw, cf))

    def optimum(self) -> SweepCell | None:
        """Most LOC detections among cells with no non-LOC false positives.

        Ties go to the shorter window, then the lower cut-off.
        """
        ok = [c for c in self.cells if c.false_positives == 0]
        if not ok:
            return None
        return max(ok, key=lambda c: (c.loc_detected, -c.mvw, -c.cf))

    def to_dict(self) -> dict:
        opt = self.optimum()
        return {
            "config": self.config,
            "grid": {"mvw_s": list(self.grid.mvw), "cf_hz": list(self.grid.cf)},
            "cells": [c.summary() for c in self.cells],
            "optimum": None if opt is None else {"mvw_s": opt.mvw, "cf_hz": opt.cf},
            "flights": {
                f"{c.mvw:g}/{c.cf:g}": [
                    {"name": f.name, "label": f.label, "detection_time_s": f.detection_time,
                     "maneuver_start_s": f.maneuver_start, "error": f.error}
                    for f in c.flights]
                for c in self.cells
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        rows = [c.summary() for c in self.cells]
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        return out


def _model_for(entry: DatasetEntry, quad: QuadParams, aero):
    return effectiveness_from_aero(quad, aero)


def run_sweep(dataset, grid: SweepGrid, config: FcmConfig | None = None,
              quad: QuadParams | None = None, aero=None, actuator=None) -> SweepReport:
    """Run the B-only detector on every flight for every (MVW, CF) cell.

    Per-flight failures are recorded on the outcome and do not stop the sweep.
    """
    from .actuator import ActuatorParams

    base = config or FcmConfig(b_only=True, m_window=0.2)
    base = replace(base, b_only=True)
    quad = quad or QuadParams()
    aero = aero or default_aero_model()
    actuator = actuator or ActuatorParams()
    model = effectiveness_from_aero(quad, aero)
    cells = []
    for mvw, cf in grid.cells():
        cfg = replace(base, mvw=mvw, cf=cf)
        cell = SweepCell(mvw, cf)
        for entry in dataset:
            try:
                res = detect(entry.log, model, cfg, actuator)
                outcome = FlightOutcome(entry.name, entry.label, res.detection_time,
                                        entry.maneuver_start, entry.onset)
            except Exception as exc:  # recorded per flight
                log.warning("flight %s failed at MVW=%g CF=%g: %s", entry.name, mvw, cf, exc)
                outcome = FlightOutcome(entry.name, entry.label, None, entry.maneuver_start,
                                        entry.onset, error=f"{type(exc).__name__}: {exc}")
            cell.flights.append(outcome)
        cells.append(cell)
    return SweepReport(grid, config_dict(base), cells)


def compare_detectors(dataset, config: FcmConfig, quad: QuadParams | None = None,
                      aero=None, actuator=None) -> dict:
    """FCMW vs attitude-threshold detection per flight, with aggregate counts."""
    from .actuator import ActuatorParams

    quad = quad or QuadParams()
    aero = aero or default_aero_model()
    actuator = actuator or ActuatorParams()
    model = effectiveness_from_aero(quad, aero)
    cfg = replace(config, b_only=True)
    rows = []
    for entry in dataset:
        fcm_t = detect(entry.log, model, cfg, actuator).detection_time
        att_t = attitude_loc_detector(entry.log, entry.maneuver_start)
        diff = att_t - fcm_t if (fcm_t is not None and att_t is not None) else None
        rows.append({"name": entry.name, "label": entry.label, "fcmw_time_s": fcm_t,
                     "attitude_time_s": att_t, "difference_s": diff})
    diffs = np.array([r["difference_s"] for r in rows if r["difference_s"] is not None])
    loc = [r for r in rows if r["label"] == "yaw-maneuver"]
    return {
        "config": config_dict(cfg),
        "flights": rows,
        "fcmw_detections": sum(r["fcmw_time_s"] is not None for r in loc),
        "attitude_detections": sum(r["attitude_time_s"] is not None for r in loc),
        "difference_median_s": float(np.median(diffs)) if len(diffs) else None,
        "difference_iqr_s": (float(np.subtract(*np.percentile(diffs, [75, 25])))
                             if len(diffs) else None),
    }


def experiment_summary(run: SimRun, res: DetectionResult, config: FcmConfig) -> dict:
    return {
        "scenario": run.scenario.name,
        "seed": run.scenario.seed,
        "detection_time_s": res.detection_time,
        "first_fcm_zero_s": res.first_fcm_zero,
        "fcm_transitions": transitions(res.fcm[res.warmup_index:]),
        "fcmw_transitions": transitions(res.fcmw[res.warmup_index:]),
        "rank_values": sorted(set(res.rank_trace[res.valid].tolist())),
        "faults": [asdict(f) for f in run.scenario.faults],
        "config": config_dict(config),
    }
