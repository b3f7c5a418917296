"""Command line: ``fcmloc sim | detect | sweep | compare``.

Exit codes: 0 success, 2 input/config error, 3 simulation divergence.
Log level from ``FCM_LOG_LEVEL`` (error, warn, info, debug).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .actuator import ActuatorParams
from .config import detector_from_dict, jsonable, load_manifest, load_scenario, read_toml
from .dynamics import QuadParams, default_aero_model
from .errors import (AlignmentError, ConfigError, DivergenceError, GenerationError,
                     InvalidInputError, LoadError)
from .fcm import ScheduledRateModel, config_dict, detect, effectiveness_from_aero
from .ingest import load_csv, record_sim, save_csv
from .simulation import simulate

log = logging.getLogger("fcmloc")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3
LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
          "info": logging.INFO, "debug": logging.DEBUG}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _detector_flags(p: argparse.ArgumentParser, sweep: bool = False):
    g = p.add_argument_group("detector")
    mode = g.add_mutually_exclusive_group()
    mode.add_argument("--b-only", dest="b_only", action="store_true", default=None,
                      help="effectiveness-only model (no A)")
    mode.add_argument("--full", dest="b_only", action="store_false",
                      help="scheduled A and B from the configured model")
    filt = g.add_mutually_exclusive_group()
    filt.add_argument("--zero-phase", dest="zero_phase", action="store_true", default=None)
    filt.add_argument("--causal", dest="zero_phase", action="store_false")
    g.add_argument("--disclose-faults", action="store_true", default=None,
                   help="use fault-capped rotor limits in the headroom (simulation only)")
    if sweep:
        g.add_argument("--mvw", type=_floats, help="voting windows, s (comma-separated)")
        g.add_argument("--cf", type=_floats, help="cut-off frequencies, Hz (comma-separated)")
    else:
        g.add_argument("--mvw", type=float, help="majority voting window, s")
        g.add_argument("--cf", type=float, help="low-pass cut-off, Hz (omit for no filter)")
    g.add_argument("--shift-samples", type=int, help="derivative alignment shift, samples")
    g.add_argument("--m-window", type=float, help="effectiveness-scale window, s")
    g.add_argument("--m-update", choices=("cumulative", "scheduled"))
    g.add_argument("--m-method", choices=("correlation", "regression"))


def _overrides(args, skip=()) -> dict:
    out = {}
    for key in ("b_only", "zero_phase", "disclose_faults", "mvw", "cf", "shift_samples",
                "m_window", "m_update", "m_method"):
        if key in skip:
            continue
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fcmloc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", help="simulate a scenario and run the detector on it")
    p.add_argument("--scenario", required=True, help="scenario TOML")
    p.add_argument("--out", help="output directory (default results/<run-id>)")
    p.add_argument("--seed", type=int, help="noise seed (overrides the scenario)")
    p.add_argument("--downsample", type=int, default=1, help="keep every n-th trace sample")
    _detector_flags(p)

    p = sub.add_parser("detect", help="run the detector on a CSV flight log")
    p.add_argument("--log", required=True, help="flight log CSV")
    p.add_argument("--scenario", help="TOML supplying [quad], [aero], [actuators], [detector]")
    p.add_argument("--out", help="JSON output file (default stdout)")
    p.add_argument("--seed", type=int, default=0, help="recorded in the output")
    p.add_argument("--erpm", action="store_true", help="rotor columns are in eRPM")
    p.add_argument("--pole-pairs", type=int, default=7)
    p.add_argument("--downsample", type=int, default=1)
    _detector_flags(p)

    for name, helptext in (("sweep", "MVW x CF sweep over a labelled dataset"),
                           ("compare", "FCMW vs attitude-threshold detection per flight")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--dataset", required=True, help="dataset manifest TOML")
        p.add_argument("--scenario", help="TOML supplying [quad], [aero], [actuators], [detector]")
        p.add_argument("--out", help="output directory (default results/<run-id>)")
        p.add_argument("--seed", type=int, default=0, help="recorded in the output")
        if name == "sweep":
            p.add_argument("--select-optimum", action="store_true",
                           help="print the zero-false-positive, most-sensitive cell")
        _detector_flags(p, sweep=(name == "sweep"))
    return ap


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), sort_keys=True) + "\n")


def _model_parts(scenario_path):
    if scenario_path:
        sc, det, raw = load_scenario(scenario_path)
        return sc.quad, sc.aero, sc.actuator, det, raw
    return QuadParams(), default_aero_model(), ActuatorParams(), {}, {}


def cmd_sim(args) -> int:
    sc, det_table, raw = load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    cfg = detector_from_dict(det_table, mvw=0.2, m_window=0.2)
    cfg = replace(cfg, **_overrides(args))
    run = simulate(sc)
    res = harness.detect_run(run, cfg)
    out = Path(args.out or f"results/sim-{sc.name}-seed{sc.seed}")
    out.mkdir(parents=True, exist_ok=True)
    header = {"scenario": asdict(sc), "seed": sc.seed, "detector": config_dict(cfg)}
    _write_trajectory(out / "trajectory.csv", run, header)
    save_csv(record_sim(run, "unknown"), out / "log.csv", jsonable(header))
    summary = harness.experiment_summary(run, res, cfg)
    extra = {"seed": sc.seed, "scenario": asdict(sc), "summary": summary}
    _write_json(out / "detection.json", res.to_dict(config_dict(cfg), args.downsample, extra))
    print(f"detection_time_s={res.detection_time} rank={summary['rank_values']} out={out}")
    return EXIT_OK


def _write_trajectory(path: Path, run, header: dict) -> None:
    cols = np.column_stack([run.time, run.position, run.velocity, run.quaternion, run.rates,
                            run.rotor_speeds, run.rotor_commands, run.caps])
    names = (["t", "x", "y", "z", "u", "v", "w", "qw", "qx", "qy", "qz", "p", "q", "r"]
             + [f"w{i}" for i in range(1, 5)] + [f"cmd{i}" for i in range(1, 5)]
             + [f"cap{i}" for i in range(1, 5)])
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(jsonable(header), sort_keys=True) + "\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, cols, delimiter=",", fmt="%.12g")


def cmd_detect(args) -> int:
    quad, aero, act, det_table, _ = _model_parts(args.scenario)
    flight = load_csv(args.log, erpm=args.erpm, pole_pairs=args.pole_pairs)
    cfg = detector_from_dict(det_table, b_only=True)
    cfg = replace(cfg, **_overrides(args))
    model = (effectiveness_from_aero(quad, aero) if cfg.b_only
             else ScheduledRateModel(quad, aero))
    res = detect(flight, model, cfg, act)
    extra = {"seed": args.seed, "log": {"path": str(args.log), "metadata": flight.metadata}}
    text = json.dumps(jsonable(res.to_dict(config_dict(cfg), args.downsample, extra)),
                      sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _dataset_parts(args):
    quad, aero, act, det_table, _ = _model_parts(args.scenario)
    read_toml(args.dataset)  # surface parse errors before generating anything
    dataset = load_manifest(args.dataset)
    return quad, aero, act, det_table, dataset


def cmd_sweep(args) -> int:
    quad, aero, act, det_table, dataset = _dataset_parts(args)
    grid = harness.SweepGrid(tuple(args.mvw) if args.mvw is not None else harness.PAPER_MVW,
                             tuple(args.cf) if args.cf is not None else harness.PAPER_CF)
    cfg = detector_from_dict(det_table, b_only=True)
    cfg = replace(cfg, **_overrides(args, skip=("mvw", "cf")))
    report = harness.run_sweep(dataset, grid, cfg, quad, aero, act)
    report.config = {**report.config, "seed": args.seed, "dataset": str(args.dataset)}
    out = report.write(Path(args.out or f"results/sweep-seed{args.seed}"))
    print(f"{'MVW':>6} {'CF':>6} {'passed':>8} {'detected':>9} {'median':>8}")
    for c in report.cells:
        s = c.summary()
        med = "-" if s["delay_median_s"] is None else f"{s['delay_median_s']:.3f}"
        print(f"{c.mvw:6g} {c.cf:6g} {c.nonloc_passed:>3}/{c.nonloc_total:<4} "
              f"{c.loc_detected:>4}/{c.loc_total:<4} {med:>8}")
    if args.select_optimum:
        opt = report.optimum()
        if opt is None:
            print("optimum: none (every cell has false positives)")
        else:
            print(f"optimum: MVW={opt.mvw:g} s CF={opt.cf:g} Hz "
                  f"({opt.loc_detected}/{opt.loc_total} LOC detected, 0 false positives)")
    print(f"report: {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    quad, aero, act, det_table, dataset = _dataset_parts(args)
    cfg = detector_from_dict(det_table, b_only=True, mvw=1.0, cf=30.0)
    cfg = replace(cfg, **_overrides(args))
    table = harness.compare_detectors(dataset, cfg, quad, aero, act)
    table["seed"] = args.seed
    out = Path(args.out or f"results/compare-seed{args.seed}")
    _write_json(out / "comparison.json", table)
    print(f"FCMW detections {table['fcmw_detections']}, attitude detections "
          f"{table['attitude_detections']}, median lead {table['difference_median_s']}")
    return EXIT_OK


COMMANDS = {"sim": cmd_sim, "detect": cmd_detect, "sweep": cmd_sweep, "compare": cmd_compare}


def main(argv=None) -> int:
    level = os.environ.get("FCM_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: simulation diverged at t={exc.t:.3f} s", file=sys.stderr)
        return EXIT_DIVERGED
    except GenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, LoadError, InvalidInputError, AlignmentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
