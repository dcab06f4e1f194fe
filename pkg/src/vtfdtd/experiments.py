"""Batch experiments: open-end formants, run-time scaling, radiation formants."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample

from .analysis import FormantExtractionError, FormantReport, FormantSet, positional_error, extract_formants, transfer_function
from .excitation import make_band_passed_pulse
from .geometry import AreaFunction, GeometryError, Termination, compute_domain_size, load_area_function
from .solver import PhysicalConstants, PressureTrace, SimulationConfig, SimulationError, SolverKind, run_simulation, write_trace

log = logging.getLogger(__name__)

BASE_RATE = 44_100
# Simulation rates (multiples of 44.1 kHz); the grid spacing follows from the CFL limit.
RESOLUTION_RATES = {"low": 15 * BASE_RATE, "mid": 40 * BASE_RATE, "high": 60 * BASE_RATE}
CHECK_TOLERANCE_HZ = 40.0
AREA_DIR_ENV = "VTFDTD_AREA_DIR"


class AudioExportError(ValueError):
    pass


def resolution_ds(resolution: str, c: float = 350.0) -> float:
    """Grid spacing for ``low``/``mid``/``high`` or a custom value in millimeters."""
    if resolution in RESOLUTION_RATES:
        return math.sqrt(2.0) * c / RESOLUTION_RATES[resolution]
    try:
        mm = float(resolution)
    except ValueError:
        raise ValueError(f"unknown resolution {resolution!r}") from None
    if not mm > 0:
        raise ValueError("resolution must be positive")
    return mm * 1e-3


def _data_file(name: str) -> Path:
    return Path(str(resources.files("vtfdtd") / "data" / name))


def default_area_dir() -> Path:
    env = os.environ.get(AREA_DIR_ENV)
    return Path(env) if env else _data_file("area_functions")


def load_references(path: str | os.PathLike | None = None) -> dict:
    with open(path or _data_file("references.json"), encoding="utf-8") as fh:
        return json.load(fh)


def load_published() -> dict:
    with open(_data_file("published.json"), encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class ExperimentPlan:
    vowels: list[str]
    resolutions: list[str] = field(default_factory=lambda: ["low"])
    solver_kinds: list[str] = field(default_factory=lambda: ["2d", "2.5d"])
    mode: Termination = Termination.OPEN_END
    duration: float = 0.05
    output_dir: Path | None = None
    area_dir: Path | None = None
    area_files: dict[str, Path] = field(default_factory=dict)
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    baffle_diameter: float = 0.20
    pml_layers: int = 6
    references: dict | None = None
    workers: int = 1
    audio_rate: int | None = None
    snapshot_every: int = 0

    def __post_init__(self) -> None:
        self.mode = Termination(self.mode)
        for r in self.resolutions:
            resolution_ds(r)

    def area_path(self, vowel: str) -> Path:
        if vowel in self.area_files:
            return Path(self.area_files[vowel])
        return Path(self.area_dir or default_area_dir()) / f"{vowel}.csv"


@dataclass
class RunReport:
    vowel: str
    resolution: str
    ds: float
    solver: str
    mode: str
    domain_size: tuple[int, int] | None = None
    wall_clock: float | None = None
    formants: tuple[float, float, float] | None = None
    errors: tuple[float, float, float] | None = None
    failure: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class _Task:
    vowel: str
    resolution: str
    solver: str
    plan: ExperimentPlan


def export_audio(trace: PressureTrace, target_rate: int, path=None) -> np.ndarray:
    """Band-limit and resample a trace to ``target_rate``; write 16-bit mono WAV.

    The FFT resampler removes everything above the target Nyquist. Output is
    peak-normalized to -1 dBFS unless the trace peaks below -120 dBFS, in
    which case it is written unscaled (effectively silent).
    """
    if target_rate > trace.sample_rate:
        raise AudioExportError(f"target rate {target_rate} Hz exceeds simulation rate {trace.sample_rate} Hz")
    n_out = int(round(len(trace.samples) * target_rate / trace.sample_rate))
    y = resample(trace.samples, n_out) if n_out != len(trace.samples) else trace.samples.copy()
    peak = float(np.max(np.abs(y))) if len(y) else 0.0
    if peak > 1e-6:
        y = y * (10 ** (-1 / 20) / peak)
    pcm = np.clip(np.round(y * 32767), -32768, 32767).astype(np.int16)
    if path is not None:
        wavfile.write(path, int(target_rate), pcm)
    return pcm


def _config_for(task: _Task) -> SimulationConfig:
    plan = task.plan
    return SimulationConfig(
        ds=resolution_ds(task.resolution, plan.constants.c),
        constants=plan.constants,
        duration=plan.duration,
        mode=plan.mode,
        solver_kind=SolverKind(task.solver),
        baffle_diameter=plan.baffle_diameter,
        pml_layers=plan.pml_layers,
        snapshot_every=plan.snapshot_every,
    )


def _run_task(task: _Task) -> RunReport:
    plan = task.plan
    cfg = _config_for(task)
    report = RunReport(task.vowel, task.resolution, cfg.ds, task.solver, plan.mode.value)
    path = plan.area_path(task.vowel)
    if not path.is_file():
        report.failure = f"missing area file {path}"
        return report
    try:
        af = load_area_function(Path(path), name=task.vowel)
        report.domain_size = compute_domain_size(
            af, cfg.ds, plan.mode, baffle_diameter=plan.baffle_diameter, pml_layers=plan.pml_layers
        )
        run_dir = None
        if plan.output_dir is not None:
            run_dir = Path(plan.output_dir) / f"{task.vowel}_{plan.mode.value}_{task.resolution}_{task.solver}"
            run_dir.mkdir(parents=True, exist_ok=True)
            if plan.snapshot_every:
                cfg = replace(cfg, snapshot_path=run_dir / "snapshots.bin")
        exc = make_band_passed_pulse(cfg.sample_rate, cfg.n_steps)
        t0 = time.perf_counter()
        trace = run_simulation(af, cfg, exc)
        report.wall_clock = time.perf_counter() - t0
        tf = transfer_function(trace)
        formants = extract_formants(tf)
        report.formants = formants.frequencies
        refs = (plan.references or {}).get(plan.mode.value, {}).get(task.vowel)
        if refs:
            report.errors = tuple(positional_error(f, r) for f, r in zip(formants.frequencies, refs))
        if run_dir is not None:
            _write_outputs(run_dir, report, trace, tf, plan)
    except (GeometryError, SimulationError, FormantExtractionError, ValueError) as exc_:
        report.failure = f"{type(exc_).__name__}: {exc_}"
    return report


def _write_outputs(run_dir: Path, report: RunReport, trace, tf, plan: ExperimentPlan) -> None:
    write_trace(trace, run_dir / "trace.txt")
    tf.write(run_dir / "spectrum.txt")
    errs = report.errors or (None, None, None)
    fr = FormantReport(report.vowel, report.mode, report.resolution, report.solver, *report.formants, *errs)
    (run_dir / "formants.json").write_text(fr.to_json() + "\n", encoding="utf-8")
    report.outputs = {
        "trace": str(run_dir / "trace.txt"),
        "spectrum": str(run_dir / "spectrum.txt"),
        "formants": str(run_dir / "formants.json"),
    }
    if plan.audio_rate:
        export_audio(trace, plan.audio_rate, run_dir / "audio.wav")
        report.outputs["audio"] = str(run_dir / "audio.wav")


def run_plan(plan: ExperimentPlan) -> list[RunReport]:
    """All (vowel, resolution, solver) runs, reported in plan order."""
    if plan.references is None:
        plan.references = load_references()
    tasks = [
        _Task(v, r, s, plan)
        for v in plan.vowels
        for r in plan.resolutions
        for s in plan.solver_kinds
    ]
    if plan.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            return list(pool.map(_run_task, tasks))
    reports = []
    for task in tasks:
        log.info("running %s %s %s %s", task.vowel, plan.mode.value, task.resolution, task.solver)
        reports.append(_run_task(task))
    return reports


def run_step_a(plan: ExperimentPlan) -> list[RunReport]:
    """Open-end transfer functions, 2D and 2.5D, against the 3D reference."""
    if plan.mode is not Termination.OPEN_END:
        raise ValueError("step A uses the open-end termination")
    return run_plan(plan)


def run_step_b(plan: ExperimentPlan) -> list[RunReport]:
    """Domain size and wall-clock time per resolution."""
    if plan.mode is not Termination.OPEN_END:
        raise ValueError("step B uses the open-end termination")
    return run_plan(plan)


def run_step_c(plan: ExperimentPlan) -> list[RunReport]:
    """Radiation-mode transfer functions against the 1D reference."""
    if plan.mode is not Termination.RADIATION:
        raise ValueError("step C uses the radiation termination")
    return run_plan(plan)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def _fmt_formant(f: float, err: float | None) -> str:
    return f"{f:.0f}" if err is None else f"{f:.0f}({err:+.2f})"


def format_formant_table(reports: list[RunReport]) -> str:
    lines = [f"{'vowel':<6}{'mode':<10}{'res':<6}{'solver':<7}{'F1':>14}{'F2':>14}{'F3':>14}"]
    for r in reports:
        if not r.ok:
            lines.append(f"{r.vowel:<6}{r.mode:<10}{r.resolution:<6}{r.solver:<7}  FAILED: {r.failure}")
            continue
        errs = r.errors or (None, None, None)
        cells = "".join(f"{_fmt_formant(f, e):>14}" for f, e in zip(r.formants, errs))
        lines.append(f"{r.vowel:<6}{r.mode:<10}{r.resolution:<6}{r.solver:<7}{cells}")
    return "\n".join(lines)


def format_runtime_table(reports: list[RunReport]) -> str:
    lines = [f"{'vowel':<6}{'res':<6}{'ds_mm':>8}{'solver':>8}{'domain (WxH)':>15}{'seconds':>10}"]
    for r in reports:
        size = f"{r.domain_size[0]}x{r.domain_size[1]}" if r.domain_size else "-"
        secs = f"{r.wall_clock:.2f}" if r.wall_clock is not None else "-"
        lines.append(f"{r.vowel:<6}{r.resolution:<6}{r.ds * 1e3:>8.4f}{r.solver:>8}{size:>15}{secs:>10}")
    return "\n".join(lines)


def check_reports(reports: list[RunReport], tolerance: float = CHECK_TOLERANCE_HZ) -> list[str]:
    """Mismatches against published formants; runs with no published row are skipped."""
    published = load_published()
    problems = []
    for r in reports:
        if not r.ok:
            problems.append(f"{r.vowel}/{r.mode}/{r.resolution}/{r.solver}: {r.failure}")
            continue
        expected = published.get(r.mode, {}).get(r.vowel, {}).get(r.resolution, {}).get(r.solver)
        if expected is None:
            continue
        for k, (got, want) in enumerate(zip(r.formants, expected), start=1):
            if abs(got - want) > tolerance:
                problems.append(f"{r.vowel}/{r.mode}/{r.resolution}/{r.solver}: F{k}={got:.0f} Hz, published {want} Hz")
    return problems


def reports_to_json(reports: list[RunReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2)


def formants_from_trace_file(path) -> FormantSet:
    """Re-derive formants from an emitted trace file alone."""
    from .solver import read_trace

    return extract_formants(transfer_function(read_trace(path)))


__all__ = [
    "AudioExportError",
    "ExperimentPlan",
    "RESOLUTION_RATES",
    "RunReport",
    "check_reports",
    "export_audio",
    "format_formant_table",
    "format_runtime_table",
    "formants_from_trace_file",
    "load_references",
    "resolution_ds",
    "run_plan",
    "run_step_a",
    "run_step_b",
    "run_step_c",
]
