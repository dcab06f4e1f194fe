"""Command-line entry point: ``vtfdtd step-a|step-b|step-c|simulate|analyze``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    FormantExtractionError,
    FormantReport,
    Normalization,
    SpectrumError,
    extract_formants,
    positional_error,
    transfer_function,
)
from .excitation import make_band_passed_pulse, write_signal
from .experiments import (
    ExperimentPlan,
    check_reports,
    export_audio,
    format_formant_table,
    format_runtime_table,
    load_references,
    reports_to_json,
    resolution_ds,
    run_step_a,
    run_step_b,
    run_step_c,
)
from .geometry import GeometryError, compute_domain_size, load_area_function
from .solver import PhysicalConstants, SimulationConfig, SimulationError, read_trace, run_simulation, write_trace

DEFAULTS = {
    "vowel": None,
    "area_file": None,
    "area_dir": None,
    "resolution": None,
    "solver": None,
    "mode": None,
    "duration_ms": 50.0,
    "baffle_diameter_m": 0.20,
    "pml_layers": 6,
    "mu": 0.005,
    "rho": 1.14,
    "c": 350.0,
    "out": None,
    "check": False,
    "workers": 1,
    "references": None,
    "audio_rate": None,
    "snapshot_every": 0,
    "trace": None,
    "normalization": "raw",
    "excitation_file": None,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    # every default is None so that config-file values are only overridden by explicit flags
    p.add_argument("--config", type=Path, help="JSON file with any of the flags below (underscored keys)")
    p.add_argument("--vowel", action="append", help="vowel label; repeatable")
    p.add_argument("--area-file", action="append",
                   help="area-function CSV; PATH for simulate, VOWEL=PATH for experiment steps")
    p.add_argument("--area-dir", help="directory holding <vowel>.csv files")
    p.add_argument("--resolution", action="append", help="low | mid | high | <ds in mm>; repeatable")
    p.add_argument("--solver", action="append", choices=["2d", "2.5d"], help="repeatable")
    p.add_argument("--mode", choices=["open", "radiation"])
    p.add_argument("--duration-ms", type=float)
    p.add_argument("--baffle-diameter-m", type=float)
    p.add_argument("--pml-layers", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--check", action="store_true", default=None, help="compare formants with the published tables")
    p.add_argument("--workers", type=int)
    p.add_argument("--references", type=Path, help="reference formant JSON (default: bundled back-computed values)")
    p.add_argument("--audio-rate", type=int, help="also write a WAV at this rate")
    p.add_argument("--snapshot-every", type=int, help="dump the pressure field every k steps")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtfdtd", description="2D / 2.5D FDTD vocal tract simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("step-a", "open-end formants, 2D and 2.5D, per resolution"),
        ("step-b", "domain size and run time per resolution"),
        ("step-c", "radiation-mode formants"),
        ("simulate", "single run: trace, spectrum and formants"),
    ):
        _add_common(sub.add_parser(name, help=help_))
    an = sub.add_parser("analyze", help="spectrum and formants from a trace file")
    _add_common(an)
    an.add_argument("--trace", type=Path, required=False, help="two-column trace file")
    an.add_argument("--normalization", choices=[n.value for n in Normalization])
    an.add_argument("--excitation-file", type=Path, help="signal dump used for excitation normalization")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        opts.update(cfg)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    for key in ("vowel", "resolution", "solver", "area_file"):
        if isinstance(opts[key], str):
            opts[key] = [opts[key]]
    return opts


def _constants(opts: dict) -> PhysicalConstants:
    return PhysicalConstants(rho=opts["rho"], c=opts["c"], mu=opts["mu"])


def _plan(opts: dict, mode: str, default_vowels: list[str], default_solvers: list[str], default_res: list[str]) -> ExperimentPlan:
    area_files = {}
    for item in opts["area_file"] or []:
        vowel, sep, path = item.partition("=")
        if not sep:
            raise SystemExit(f"--area-file for experiment steps must be VOWEL=PATH, got {item!r}")
        area_files[vowel] = Path(path)
    vowels = opts["vowel"] if opts["vowel"] is not None else default_vowels
    return ExperimentPlan(
        vowels=list(vowels),
        resolutions=list(opts["resolution"] or default_res),
        solver_kinds=list(opts["solver"] or default_solvers),
        mode=mode,
        duration=opts["duration_ms"] * 1e-3,
        output_dir=Path(opts["out"]) if opts["out"] else None,
        area_dir=Path(opts["area_dir"]) if opts["area_dir"] else None,
        area_files=area_files,
        constants=_constants(opts),
        baffle_diameter=opts["baffle_diameter_m"],
        pml_layers=opts["pml_layers"],
        references=load_references(opts["references"]),
        workers=opts["workers"],
        audio_rate=opts["audio_rate"],
        snapshot_every=opts["snapshot_every"],
    )


def _finish(reports, opts: dict, table: str) -> int:
    print(table)
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "reports.json").write_text(reports_to_json(reports) + "\n", encoding="utf-8")
        (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    status = 0
    failed = [r for r in reports if not r.ok]
    for r in failed:
        print(f"error: {r.vowel}/{r.resolution}/{r.solver}: {r.failure}", file=sys.stderr)
        status = 1
    if opts["check"]:
        problems = check_reports(reports)
        for msg in problems:
            print(f"check: {msg}", file=sys.stderr)
        if problems:
            status = 1
        else:
            print("check: all formants within tolerance")
    return status


def cmd_step_a(opts: dict) -> int:
    plan = _plan(opts, "open", ["a", "i", "u"], ["2d", "2.5d"], ["low", "mid", "high"])
    reports = run_step_a(plan)
    return _finish(reports, opts, format_formant_table(reports))


def cmd_step_b(opts: dict) -> int:
    plan = _plan(opts, "open", ["u"], ["2d", "2.5d"], ["low", "mid", "high"])
    reports = run_step_b(plan)
    return _finish(reports, opts, format_runtime_table(reports))


def cmd_step_c(opts: dict) -> int:
    plan = _plan(opts, "radiation", ["a", "e", "i", "o", "u"], ["2.5d"], ["low"])
    reports = run_step_c(plan)
    return _finish(reports, opts, format_formant_table(reports))


def cmd_simulate(opts: dict) -> int:
    files = opts["area_file"] or []
    if len(files) != 1:
        raise SystemExit("simulate needs exactly one --area-file")
    path = Path(files[0])
    vowel = (opts["vowel"] or [path.stem])[0]
    af = load_area_function(path, name=vowel)
    constants = _constants(opts)
    mode = opts["mode"] or "open"
    resolution = (opts["resolution"] or ["low"])[0]
    solver = (opts["solver"] or ["2.5d"])[0]
    out = Path(opts["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimulationConfig(
        ds=resolution_ds(resolution, constants.c),
        constants=constants,
        duration=opts["duration_ms"] * 1e-3,
        mode=mode,
        solver_kind=solver,
        baffle_diameter=opts["baffle_diameter_m"],
        pml_layers=opts["pml_layers"],
        snapshot_every=opts["snapshot_every"],
        snapshot_path=out / "snapshots.bin" if opts["snapshot_every"] else None,
    )
    size = compute_domain_size(af, cfg.ds, mode, baffle_diameter=cfg.baffle_diameter, pml_layers=cfg.pml_layers)
    exc = make_band_passed_pulse(cfg.sample_rate, cfg.n_steps)
    write_signal(exc, out / "excitation.txt")
    trace = run_simulation(af, cfg, exc)
    write_trace(trace, out / "trace.txt")
    tf = transfer_function(trace)
    tf.write(out / "spectrum.txt")
    if opts["audio_rate"]:
        export_audio(trace, opts["audio_rate"], out / "audio.wav")
    formants = extract_formants(tf)
    refs = load_references(opts["references"]).get(mode, {}).get(vowel)
    errs = [None] * 3
    if refs:
        errs = [positional_error(f, r) for f, r in zip(formants.frequencies, refs)]
    report = FormantReport(vowel, mode, resolution, solver, *formants.frequencies, *errs)
    (out / "formants.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"domain {size[0]}x{size[1]}, {cfg.n_steps} steps at {cfg.sample_rate:.1f} Hz")
    print(report.to_json())
    return 0


def cmd_analyze(opts: dict) -> int:
    if not opts["trace"]:
        raise SystemExit("analyze needs --trace")
    trace = read_trace(opts["trace"])
    excitation = None
    if opts["normalization"] == Normalization.EXCITATION.value:
        if not opts["excitation_file"]:
            raise SystemExit("excitation normalization needs --excitation-file")
        excitation = np.loadtxt(opts["excitation_file"], delimiter=",", ndmin=2)[:, 1]
    tf = transfer_function(trace, excitation, opts["normalization"])
    formants = extract_formants(tf)
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        tf.write(out / "spectrum.txt")
    print(json.dumps({"f1": formants.f1, "f2": formants.f2, "f3": formants.f3, "bin_width": tf.bin_width}))
    return 0


COMMANDS = {
    "step-a": cmd_step_a,
    "step-b": cmd_step_b,
    "step-c": cmd_step_c,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    opts = resolve_options(args)
    try:
        return COMMANDS[args.command](opts)
    except (GeometryError, SimulationError, SpectrumError, FormantExtractionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
