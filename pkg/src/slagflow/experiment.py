"""Experiment configuration, artifact writers and the run / verify / sweep commands.

Artifacts written by a run (paths relative to the output directory):

* ``<series>`` (default ``series.csv``): monitor rows, fixed column order, floats
  as shortest round-trip decimals, so identical runs give identical bytes;
* ``residuals.csv``: scheduled evolution-equation residuals, when enabled;
* ``certificate.json``: stability certificate of the completed run;
* ``snapshots/snapshot_<k>.json``: potential on every chart, when scheduled, plus
  ``final.json`` (or ``abort_diagnostic.json`` when the solver gives up).
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .flow import (SERIES_COLUMNS, FlowConfig, MonitorSeries, PreconditionError, SolverAbort, run,
                   stability_certificate)
from .initial import InitialCondition
from .manifold import MetricAtlas
from .oracles import dumps17

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_PRECONDITION, EXIT_ABORT = 0, 1, 2, 3
SWEEP_PARAMS = ("epsilon", "amplitude", "resolution", "kappa")
PASSING_STATUS = ("PASS", "INCONCLUSIVE")

# section -> key -> accepted python types
SCHEMA: dict[str, dict[str, tuple[type, ...]]] = {
    "base": {"kind": (str,), "n": (int,), "resolution": (int,), "kappa": (int, float)},
    "initial": {"kind": (str,), "amplitude": (int, float), "mode": (list,), "seed": (int,),
                "bandlimit": (int,), "target_max_chi": (int, float)},
    "flow": {"t_end": (int, float), "cfl": (int, float), "dt_max": (int, float),
             "epsilon": (int, float), "p_exponent": (int, float), "monitor_every": (int,),
             "residual_check_every": (int,), "stability": (bool,)},
    "output": {"directory": (str,), "snapshot_every": (int,), "series": (str,)},
}


@dataclass
class OutputConfig:
    directory: str = "."
    snapshot_every: int = 0
    series: str = "series.csv"


@dataclass
class ExperimentConfig:
    flow: FlowConfig
    output: OutputConfig = field(default_factory=OutputConfig)
    raw: dict = field(default_factory=dict)

    def with_param(self, name: str, value: float) -> ExperimentConfig:
        """Copy with one sweep parameter replaced."""
        if name not in SWEEP_PARAMS:
            raise PreconditionError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {name!r}")
        raw = copy.deepcopy(self.raw)
        section = {"epsilon": "flow", "amplitude": "initial", "resolution": "base", "kappa": "base"}[name]
        raw.setdefault(section, {})[name] = int(value) if name == "resolution" else float(value)
        return config_from_dict(raw)


def _check_schema(raw: dict) -> None:
    for section, body in raw.items():
        if section not in SCHEMA:
            raise PreconditionError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise PreconditionError(f"[{section}] must be a table of key = value pairs")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise PreconditionError(f"unknown key {key!r} in [{section}]")
            types = SCHEMA[section][key]
            if isinstance(value, bool) and bool not in types or not isinstance(value, types):
                raise PreconditionError(
                    f"[{section}] {key} has type {type(value).__name__}, expected "
                    + " or ".join(t.__name__ for t in types)
                )


def config_from_dict(raw: dict) -> ExperimentConfig:
    _check_schema(raw)
    base, ini, flow, out = (raw.get(s, {}) for s in ("base", "initial", "flow", "output"))
    kind = base.get("kind", "sphere")
    default_mode = (1, 0) if kind == "sphere" else (1,) + (0,) * (base.get("n", 2) - 1)
    mode = tuple(int(v) for v in ini.get("mode", default_mode))
    initial = InitialCondition(
        kind=ini.get("kind", "zero"),
        amplitude=float(ini.get("amplitude", 1e-3)),
        mode=mode,
        bandlimit=int(ini.get("bandlimit", 3)),
        target_max_chi=None if "target_max_chi" not in ini else float(ini["target_max_chi"]),
    )
    cfg = FlowConfig(
        base=kind,
        n=int(base.get("n", 2)),
        resolution=int(base.get("resolution", 64)),
        kappa=float(base.get("kappa", 1.0)),
        initial=initial,
        t_end=float(flow.get("t_end", 1.0)),
        cfl=float(flow.get("cfl", 0.2)),
        dt_max=float(flow.get("dt_max", math.inf)),
        epsilon=float(flow.get("epsilon", 0.1)),
        p_exponent=float(flow.get("p_exponent", 1.0)),
        monitor_every=int(flow.get("monitor_every", 50)),
        residual_check_every=int(flow.get("residual_check_every", 0)),
        seed=int(ini.get("seed", 0)),
        stability=bool(flow.get("stability", initial.target_max_chi is not None)),
    )
    output = OutputConfig(
        directory=out.get("directory", "."),
        snapshot_every=int(out.get("snapshot_every", 0)),
        series=out.get("series", "series.csv"),
    )
    if output.snapshot_every < 0:
        raise PreconditionError("output.snapshot_every must be >= 0")
    cfg.validate()
    if cfg.initial.kind == "mode" and cfg.base == "sphere" and (len(mode) != 2 or not 0 <= mode[0] <= 2
                                                                 or abs(mode[1]) > mode[0]):
        raise PreconditionError(f"sphere mode must be (ell, m) with 0 <= ell <= 2, |m| <= ell, got {mode}")
    if cfg.initial.kind == "mode" and cfg.base == "torus" and len(mode) != cfg.n:
        raise PreconditionError(f"torus mode needs {cfg.n} wave numbers, got {mode}")
    return ExperimentConfig(cfg, output, raw)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise PreconditionError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise PreconditionError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(raw)


# -- writers ---------------------------------------------------------------------

def format_float(x: float) -> str:
    return repr(float(x))


def series_csv(rows, columns=SERIES_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(row[c]) for c in columns])
    return buf.getvalue()


def read_series(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in rec.items()} for rec in csv.DictReader(fh)]


def snapshot_document(raw_config: dict, atlas: MetricAtlas, t: float, u: np.ndarray) -> str:
    charts = []
    for c, grid in enumerate(atlas.charts):
        charts.append({
            "chart": grid.chart_id,
            "extent": [list(e) for e in grid.extent],
            "resolution": grid.resolution,
            "periodic": grid.periodic,
            "halo_width": grid.halo_width,
        })
    header = {"config": raw_config, "t": float(t), "kind": atlas.kind, "charts": charts}
    body = {str(c): u[c] for c in range(atlas.nchart)}
    return '{"header": ' + json.dumps(header) + ', "u": ' + dumps17(body) + "}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- commands --------------------------------------------------------------------

@dataclass
class RunOutcome:
    exit_code: int
    status: str
    certificate: dict | None = None
    directory: Path | None = None
    last_row: dict | None = None


def execute(exp: ExperimentConfig, out_dir: Path) -> RunOutcome:
    """Run one experiment and write all artifacts into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = exp.flow
    atlas = cfg.build_atlas()
    snap_dir = out_dir / "snapshots"
    counter = iter(range(10**9))

    def on_snapshot(t, u, tag=None):
        snap_dir.mkdir(exist_ok=True)
        name = tag or f"snapshot_{next(counter):05d}"
        (snap_dir / f"{name}.json").write_text(snapshot_document(exp.raw, atlas, t, u))

    t0 = time.perf_counter()
    try:
        series, u = run(cfg, on_snapshot=on_snapshot, snapshot_every=exp.output.snapshot_every)
    except SolverAbort as exc:
        _write_series(out_dir, exp, exc.series)
        on_snapshot(exc.series.step_t[-1] if exc.series.step_t else 0.0, exc.u, "abort_diagnostic")
        print(f"solver abort: {exc}", file=sys.stderr)
        return RunOutcome(EXIT_ABORT, "ABORTED", directory=out_dir)
    elapsed = time.perf_counter() - t0
    _write_series(out_dir, exp, series)
    cert = _jsonable(stability_certificate(series, cfg))
    cert["n_steps"] = series.n_steps
    (out_dir / "certificate.json").write_text(json.dumps(cert, indent=2) + "\n")
    if exp.output.snapshot_every:
        on_snapshot(series.rows[-1]["t"], u, "final")
    print(f"{out_dir}: {series.n_steps} steps, t = {series.rows[-1]['t']:.6g}, "
          f"certificate {cert['status']}, {elapsed:.1f} s", file=sys.stderr)
    return RunOutcome(EXIT_OK, cert["status"], cert, out_dir, series.rows[-1])


def _write_series(out_dir: Path, exp: ExperimentConfig, series: MonitorSeries) -> None:
    (out_dir / exp.output.series).write_text(series_csv(series.rows))
    if series.residuals:
        cols = ("t",) + tuple(k for k in series.residuals[0] if k != "t")
        (out_dir / "residuals.csv").write_text(series_csv(series.residuals, cols))


def cmd_run(config_path, out: str | os.PathLike = ".") -> int:
    try:
        exp = load_config(config_path)
        return execute(exp, Path(out) / exp.output.directory).exit_code
    except PreconditionError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


def cmd_verify(suite: str, out: str | os.PathLike = ".") -> int:
    from .verify import SUITES

    if suite not in SUITES:
        print(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_PRECONDITION
    kwargs = {}
    if suite == "oracle_cases":
        Path(out).mkdir(parents=True, exist_ok=True)
        kwargs["out_dir"] = out
    checks = SUITES[suite](**kwargs)
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    if failed:
        print(f"verify {suite}: FAIL at {failed[0].name}", file=sys.stderr)
        return EXIT_FAILED
    print(f"verify {suite}: PASS ({len(checks)} checks)")
    return EXIT_OK


def worker_limit() -> int:
    """Worker processes allowed by ``SLAGFLOW_THREADS`` (default: CPU count)."""
    env = os.environ.get("SLAGFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer SLAGFLOW_THREADS=%r", env)
    return os.cpu_count() or 1


def _sweep_one(exp: ExperimentConfig, out_dir: Path) -> RunOutcome:
    try:
        return execute(exp, out_dir)
    except PreconditionError as exc:
        print(f"{out_dir}: precondition failed: {exc}", file=sys.stderr)
        return RunOutcome(EXIT_PRECONDITION, "PRECONDITION_FAILED", directory=out_dir)
    except Exception as exc:  # keep sweeping past one broken run
        print(f"{out_dir}: run failed: {exc!r}", file=sys.stderr)
        return RunOutcome(EXIT_ABORT, "ERROR", directory=out_dir)


def cmd_sweep(config_path, param: str, values: list[str], out: str | os.PathLike = ".") -> int:
    out = Path(out)
    try:
        base = load_config(config_path)
        if param not in SWEEP_PARAMS:
            raise PreconditionError(f"--param must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}")
        nums = [float(v) for v in values]
    except ValueError as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    root = out / base.output.directory
    jobs = []
    for raw_value, value in zip(values, nums):
        sub = root / f"{param}_{raw_value.strip()}"
        try:
            jobs.append((value, base.with_param(param, value), sub))
        except PreconditionError as exc:
            print(f"{sub}: precondition failed: {exc}", file=sys.stderr)
            jobs.append((value, None, sub))

    runnable = [(exp, sub) for _, exp, sub in jobs if exp is not None]
    workers = min(worker_limit(), max(1, len(runnable)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_sweep_one, *zip(*runnable)))
    else:
        done = [_sweep_one(exp, sub) for exp, sub in runnable]
    outcomes = iter(done)
    results = []
    for value, exp, sub in jobs:
        res = next(outcomes) if exp is not None else RunOutcome(EXIT_PRECONDITION, "PRECONDITION_FAILED")
        results.append((value, res))

    cols = (param, "exit_code", "status") + SERIES_COLUMNS
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for value, res in results:
        last = res.last_row or {}
        writer.writerow([format_float(value), res.exit_code, res.status]
                        + [format_float(last[c]) if c in last else "" for c in SERIES_COLUMNS])
    root.mkdir(parents=True, exist_ok=True)
    (root / f"sweep_{param}.csv").write_text(buf.getvalue())
    ok = all(r.exit_code == EXIT_OK and r.status in PASSING_STATUS for _, r in results)
    for value, res in results:
        print(f"{param} = {value:g}: exit {res.exit_code}, {res.status}")
    return EXIT_OK if ok else EXIT_FAILED
