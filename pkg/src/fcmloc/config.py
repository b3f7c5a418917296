"""TOML scenario and dataset-manifest loading.

Scenario file (all SI units)::

    name = "fault"
    seed = 0
    dt = 0.004             # s, simulation and log step
    duration = 20.0        # s

    [quad]
    mass = 0.433           # kg
    inertia = [8.65e-4, 1.07e-3, 1.71e-3]   # kg m^2, principal moments
    gravity = [0.0, 0.0, 9.81]              # m/s^2, NED
    thrust_coefficient = 2.167e-6           # N s^2, thrust = k_T w^2
    drag = [0.05, 0.05, 0.08]               # N s/m per body axis

    [aero]                 # identified moment model used by controller + detector
    input_gain = [2.33e-4, 2.33e-4, 3.0e-5] # N m per rad/s of control moment
    rate_damping = [-2e-4, -2e-4, -3e-4]    # N m per rad/s of body rate
    # or: terms = [[[0, 1, 2.33e-4], [1, 0, -2e-4]], ...]  (rate_exp, input_exp, coef)

    [airframe]             # moments acting on the simulated body
    model = "rotor"        # "rotor" (quadratic rotor model) or "aero" (same as [aero])
    arm = 0.0767           # m
    torque_coefficient = 2.143e-8           # N m s^2

    [actuators]
    time_constant = 0.016667   # s
    omega_min = 100.0          # rad/s
    omega_max = 1300.0         # rad/s
    spin_sign = 1

    [gains]                # ControllerGains fields
    [noise]                # sigma_rates (rad/s), sigma_velocity (m/s), sigma_rotor (rad/s)
    [program]              # segments = [{duration, mode, position, yaw, yaw_rate}, ...]
                           # or csv = "setpoints.csv" (t,x,y,z,yaw[,yaw_rate,mode])
    [[faults]]
    rotor = 3              # 1 front-left, 2 front-right, 3 aft-right, 4 aft-left
    cap = 0.0              # fraction of omega_max
    time_s = 5.2

    [detector]             # FcmConfig fields
"""
from __future__ import annotations

import csv
from dataclasses import fields
from pathlib import Path

import numpy as np
import tomli

from .actuator import ActuatorParams, FaultEvent
from .controller import ControllerGains, ReferenceProgram, Segment
from .dynamics import AeroMomentModel, QuadParams, RotorMomentModel, default_aero_model
from .errors import ConfigError
from .fcm import FcmConfig
from .ingest import DatasetEntry, YawLocParams, generate_synthetic_yaw_loc, load_csv, synthetic_dataset
from .simulation import Scenario


def read_toml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def _build(cls, table: dict, where: str, rename: dict | None = None):
    rename = rename or {}
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, val in table.items():
        key = rename.get(key, key)
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{where}]")
        kw[key] = val
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}]: {exc}") from exc


def aero_from_table(table: dict | None) -> AeroMomentModel:
    if not table:
        return default_aero_model()
    if "terms" in table:
        return AeroMomentModel(tuple(tuple(tuple(t) for t in axis) for axis in table["terms"]))
    try:
        return AeroMomentModel.linear(table["input_gain"], table["rate_damping"])
    except KeyError as exc:
        raise ConfigError(f"[aero] needs 'terms' or both input_gain and rate_damping; missing {exc}")


def airframe_from_table(table: dict | None, quad: QuadParams):
    table = dict(table or {})
    kind = table.pop("model", "rotor")
    if kind == "aero":
        return None
    if kind != "rotor":
        raise ConfigError(f"[airframe] model must be 'rotor' or 'aero', got {kind!r}")
    table.setdefault("thrust_coefficient", quad.thrust_coefficient)
    return _build(RotorMomentModel, table, "airframe")


def program_from_table(table: dict | None, base: Path, duration: float):
    if not table:
        return None
    if "csv" in table:
        path = base / table["csv"]
        if not path.is_file():
            raise ConfigError(f"setpoint file not found: {path}")
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        return ReferenceProgram.from_rows(rows)
    segs = []
    for i, s in enumerate(table.get("segments", [])):
        s = dict(s)
        for key in ("position",):
            if key in s:
                s[key] = tuple(float(v) for v in s[key])
        segs.append(_build(Segment, s, f"program.segments[{i}]"))
    return ReferenceProgram(tuple(segs))


def _is_number(text) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def scenario_from_dict(cfg: dict, base: Path = Path(".")) -> Scenario:
    known = {"name", "seed", "dt", "duration", "initial_position", "quad", "aero", "airframe",
             "actuators", "gains", "noise", "program", "faults", "detector"}
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    quad = _build(QuadParams, cfg.get("quad", {}), "quad")
    aero = aero_from_table(cfg.get("aero"))
    act = _build(ActuatorParams, cfg.get("actuators", {}), "actuators")
    gains = _build(ControllerGains, cfg.get("gains", {}), "gains")
    noise = cfg.get("noise", {})
    bad = set(noise) - {"sigma_rates", "sigma_velocity", "sigma_rotor"}
    if bad:
        raise ConfigError(f"unknown key(s) {sorted(bad)} in [noise]")
    faults = tuple(_build(FaultEvent, f, "faults", {"time_s": "time"})
                   for f in cfg.get("faults", []))
    duration = float(cfg.get("duration", 20.0))
    kw = dict(name=cfg.get("name", "scenario"), dt=float(cfg.get("dt", 1 / 250)),
              duration=duration, quad=quad, aero=aero, actuator=act, gains=gains,
              program=program_from_table(cfg.get("program"), base, duration), faults=faults,
              seed=int(cfg.get("seed", 0)),
              airframe=airframe_from_table(cfg.get("airframe"), quad),
              initial_position=tuple(cfg.get("initial_position", (0.0, 0.0, 0.0))), **noise)
    if kw["program"] is None:
        from .harness import tracking_program
        kw["program"] = tracking_program()
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def detector_from_dict(table: dict | None, **defaults) -> FcmConfig:
    merged = {**defaults, **(table or {})}
    return _build(FcmConfig, merged, "detector")


def load_scenario(path):
    """Returns ``(scenario, detector table, raw dict)``."""
    cfg = read_toml(path)
    return scenario_from_dict(cfg, Path(path).parent), cfg.get("detector", {}), cfg


def load_manifest(path) -> list[DatasetEntry]:
    """Dataset manifest: ``[[flights]]`` entries with ``path`` or ``generator``
    (YawLocParams fields plus ``seed``) and a ``label``; an optional
    ``[synthetic]`` table (n_loc, n_nominal, seed) adds a generated set."""
    cfg = read_toml(path)
    base = Path(path).parent
    entries = []
    syn = cfg.get("synthetic")
    if syn:
        bad = set(syn) - {"n_loc", "n_nominal", "seed"}
        if bad:
            raise ConfigError(f"unknown key(s) {sorted(bad)} in [synthetic]")
        entries.extend(synthetic_dataset(**syn))
    for i, fl in enumerate(cfg.get("flights", [])):
        fl = dict(fl)
        name = fl.pop("name", f"flight-{i:03d}")
        label = fl.pop("label", "unknown")
        if "path" in fl:
            log = load_csv(base / fl.pop("path"), erpm=fl.pop("erpm", False), label=label)
            start = fl.pop("maneuver_start", None)
            if start is None:
                from .ingest import maneuver_start_from_log
                start = maneuver_start_from_log(log)
            entries.append(DatasetEntry(log, label, start, fl.pop("onset", None), name))
        elif "generator" in fl:
            g = dict(fl.pop("generator"))
            seed = int(g.pop("seed", i))
            f = generate_synthetic_yaw_loc(seed, _build(YawLocParams, g, f"flights[{i}].generator"))
            entries.append(DatasetEntry(f.log, f.log.metadata["label"], f.maneuver_start,
                                        f.onset, name))
        else:
            raise ConfigError(f"flights[{i}] needs 'path' or 'generator'")
        if fl:
            raise ConfigError(f"unknown key(s) {sorted(fl)} in flights[{i}]")
    if not entries:
        raise ConfigError(f"manifest {path} lists no flights")
    return entries


def jsonable(obj):
    """Recursively convert numpy values and tuples for JSON output."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
