"""Command-line entry point ``nrloc``.

Subcommands::

    nrloc static --scenario S --method dl_tdoa --mu 3 --runs 500 --seed 42 --out R/
    nrloc track  --scenario builtin:industrial --method dl_tdoa --nlos-rejection --out R/
    nrloc grid-check --config signals.toml
    nrloc solve --scenario S --input sets.jsonl --output fixes.jsonl
    nrloc waveform --mu 3 --n-fft 4096 --output prs.bin

Exit codes: 0 on success, 2 on validation failure (bad arguments, bad
scenario or signal configuration, resource-element collisions), 3 on a
detection or solver hard failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import grid5g, linklevel, simcli
from .errors import ConfigError, DetectionError, GeometryError, GridCollisionError, SolverError
from .estimators import RankDeficiencyWarning, SolverConfig, solve_nls
from .measurements import read_jsonl, write_jsonl
from .scenarios import load_scenario, read_toml

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 2, 3

_SIGNAL_TYPES = {"prs": grid5g.PrsConfig, "srs": grid5g.SrsConfig, "ssb": grid5g.SsbConfig}


def _emit(text: str, stream=None) -> None:
    """Write a line to stdout, tolerating a reader that closed the pipe early."""
    stream = stream or sys.stdout
    try:
        stream.write(text + "\n")
        stream.flush()
    except BrokenPipeError:
        sys.stdout = open(os.devnull, "w")


def _solver(args) -> SolverConfig:
    if args.damped_solver:
        return SolverConfig.damped()
    return SolverConfig(method=args.solver)


def _add_run_args(p: argparse.ArgumentParser, track: bool) -> None:
    p.add_argument("--scenario", required=True, help="TOML scenario path or builtin:<name>")
    p.add_argument("--method", default="dl_tdoa", choices=simcli.METHODS)
    p.add_argument("--level", default="geometric", choices=simcli.LEVELS)
    p.add_argument("--mu", type=int, default=None, help="numerology (default: the scenario's)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for report.json, errors.csv, cdf.csv")
    p.add_argument("--nlos-rejection", action="store_true",
                   help="innovation gating (track) or residual filter (static)")
    p.add_argument("--residual-threshold", type=float, default=simcli.DEFAULT_RESIDUAL_THRESHOLD_DEG)
    p.add_argument("--gate", type=float, default=3.0, help="normalized-innovation gate for tracking")
    if not track:
        p.add_argument("--map-filter", action="store_true", help="drop fixes outside the scenario constraint")
    p.add_argument("--solver", default="gauss-newton", choices=("gauss-newton", "lm"))
    p.add_argument("--damped-solver", action="store_true",
                   help="fixed step 0.01 and 1000 iterations, no line search")
    p.add_argument("--dump-measurements", default=None, help="write every MeasurementSet as JSON lines")


def _run(args, track: bool) -> int:
    spec = simcli.RunSpec(
        scenario=args.scenario,
        method=args.method,
        level=args.level,
        mu=args.mu,
        runs=args.runs,
        seed=args.seed,
        out=args.out,
        nlos_rejection=args.nlos_rejection,
        map_filter=getattr(args, "map_filter", False),
        residual_threshold=args.residual_threshold,
        gate=args.gate,
        solver=_solver(args),
    )
    runner = simcli.run_track if track else simcli.run_static
    report, runs = runner(spec, return_runs=True)
    if args.dump_measurements:
        write_jsonl(args.dump_measurements, [s for r in runs for s in r.sets])
    _emit(report.to_json())
    return EXIT_OK


def _load_signal_config(path) -> tuple[list, dict]:
    data = read_toml(path)
    grid = data.pop("grid", {})
    configs = []
    for key, value in data.items():
        cls = _SIGNAL_TYPES.get(key.lower())
        if cls is None:
            raise ConfigError(f"unknown config section [{key}]; expected prs, srs, ssb or grid")
        for entry in value if isinstance(value, list) else [value]:
            try:
                configs.append(cls(**entry))
            except TypeError as exc:
                raise ConfigError(f"[{key}]: {exc}") from None
    if not configs:
        raise ConfigError("no [prs], [srs] or [ssb] section in the config")
    return configs, grid


def _grid_check(args) -> int:
    try:
        configs, grid = _load_signal_config(args.config)
        slots = int(args.slots if args.slots is not None else grid.get("slots", 1))
        n_sc = args.subcarriers if args.subcarriers is not None else grid.get("n_subcarriers")
        collisions = grid5g.find_collisions(configs, slots, n_sc)
    except ConfigError as exc:
        _emit(json.dumps({"valid": False, "error": str(exc), "collisions": []}, indent=2))
        return EXIT_INVALID
    report = grid5g.collisions_report(collisions)
    _emit(json.dumps({"valid": not report, "n_collisions": len(report), "collisions": report}, indent=2))
    return EXIT_OK if not report else EXIT_INVALID


def _solve(args) -> int:
    sc = load_scenario(args.scenario)
    sets = read_jsonl(args.input)
    dims = int(sc.extras.get("options", {}).get("dims", 3)) if args.z is None else 2
    own = args.output not in (None, "-")
    out = open(args.output, "w", encoding="utf-8") if own else None
    try:
        for s in sets:
            if args.z is not None:
                z = args.z
            elif dims == 2 and s.truth is not None:
                z = float(s.truth[2])
            else:
                z = None
            est = solve_nls(s, sc.poses_by_id, _solver(args), z=z)
            _emit(est.to_json(), out)
    finally:
        if own:
            out.close()
    return EXIT_OK


def _waveform(args) -> int:
    rng = np.random.default_rng(args.seed)
    n_sc = min(args.n_rb * 12, args.n_fft - 1)
    wf = linklevel.prs_symbol_waveform(n_sc, args.mu, args.n_fft, rng, comb=args.comb, oversampling=args.oversampling)
    linklevel.write_waveform(args.output, wf)
    _emit(json.dumps({"path": args.output, "samples": len(wf.samples), "sample_rate": wf.sample_rate}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrloc", description="5G NR positioning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("static", help="Monte-Carlo snapshot positioning of the scenario's UE points")
    _add_run_args(p, track=False)
    p = sub.add_parser("track", help="EKF tracking along the scenario trajectory")
    _add_run_args(p, track=True)

    p = sub.add_parser("grid-check", help="validate [prs]/[srs]/[ssb] configs and list RE collisions")
    p.add_argument("--config", required=True)
    p.add_argument("--slots", type=int, default=None, help="slots to map (default [grid].slots or 1)")
    p.add_argument("--subcarriers", type=int, default=None)

    p = sub.add_parser("solve", help="replay MeasurementSet JSON lines into PositionEstimate JSON lines")
    p.add_argument("--scenario", required=True, help="scenario providing the BS poses")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None, help="output path (default stdout)")
    p.add_argument("--z", type=float, default=None, help="known UE height (2D solve)")
    p.add_argument("--solver", default="gauss-newton", choices=("gauss-newton", "lm"))
    p.add_argument("--damped-solver", action="store_true")

    p = sub.add_parser("waveform", help="dump one PRS OFDM symbol as a raw waveform file")
    p.add_argument("--mu", type=int, default=3)
    p.add_argument("--n-fft", type=int, default=4096)
    p.add_argument("--n-rb", type=int, default=264)
    p.add_argument("--comb", type=int, default=1)
    p.add_argument("--oversampling", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RankDeficiencyWarning)
    handlers = {
        "static": lambda: _run(args, track=False),
        "track": lambda: _run(args, track=True),
        "grid-check": lambda: _grid_check(args),
        "solve": lambda: _solve(args),
        "waveform": lambda: _waveform(args),
    }
    try:
        return handlers[args.command]()
    except (ConfigError, GeometryError, GridCollisionError, FileNotFoundError) as exc:
        print(f"nrloc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DetectionError, SolverError) as exc:
        print(f"nrloc: failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
