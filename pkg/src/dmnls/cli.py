"""Batch front-end: ``dmnls <command> --config <file> [--out <dir>]``.

Exit status: 0 all gates pass, 1 a gate failed (see verdict.csv), 2 invalid
configuration, 3 numerical abort.  Failures print one ``key=value`` line on
stderr.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from . import dispersion as dsp
from . import experiments as ex
from . import solver
from .spacetime_norms import partition_by_l4, s_norm, write_partition_csv
from .spectral import spectrum_shells, write_snapshot

COMMANDS = (
    "gamma-check",
    "propagator-study",
    "averaging-study",
    "homog-study",
    "cov-check",
    "strichartz-probe",
    "simulate",
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, message: str, key: str = "", line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class RunOptions:
    """Command-specific knobs that are not part of the study itself."""

    eps: float = 0.1
    equation: str = "fast_managed"
    t0_count: int = 10
    deviation_samples: int = 1001
    deviation_horizon: float = 10.0
    snapshots: int = 5
    step_halving: bool = True


@dataclass(frozen=True)
class RunConfig:
    command: str
    study: ex.StudyConfig
    output_dir: Path = Path("dmnls-out")
    seed: int = 0
    options: RunOptions = field(default_factory=RunOptions)


# section -> key -> (type, default); a default of ... marks a required key
_SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "run": {"command": (str, None), "output_dir": (str, "dmnls-out"), "seed": (int, 0)},
    "gamma": {"gamma": (list, ...)},
    "grid": {"n": (int, 128), "L": (float, 32.0)},
    "data": {
        "kind": (str, "gaussian"),
        "amplitude": (float, 1.0),
        "width": (float, 1.0),
        "mode": (list, [1, 0]),
    },
    "study": {
        "eps_list": (list, [0.2, 0.1, 0.05, 0.025]),
        "horizon": (float, 1.0),
        "steps_per_unit_time": (int, 2000),
        "samples_per_unit_time": (int, 200),
        "theta": (float, 1.0),
        "eta": (float, 0.5),
        "cutoff_N": (float, 4.0),
        "eps": (float, 0.1),
        "equation": (str, "fast_managed"),
        "t0_count": (int, 10),
        "deviation_samples": (int, 1001),
        "deviation_horizon": (float, 10.0),
        "snapshots": (int, 5),
        "step_halving": (bool, True),
    },
}


def _coerce(section: str, key: str, value: Any, kind: type) -> Any:
    name = f"{section}.{key}"
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean", name)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer", name)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number", name)
        return float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{name} must be a {kind.__name__}", name)
    return value


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and fully validate a TOML study document (unknown keys are fatal)."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}", "", getattr(exc, "lineno", None)) from exc

    values: dict[str, dict[str, Any]] = {}
    for section in doc:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", section)
        if not isinstance(doc[section], dict):
            raise ConfigError(f"{section} must be a table", section)
    for section, keys in _SCHEMA.items():
        given = doc.get(section, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")
        values[section] = {}
        for key, (kind, default) in keys.items():
            if key in given:
                values[section][key] = _coerce(section, key, given[key], kind)
            elif default is ...:
                raise ConfigError(f"missing required key {section}.{key}", f"{section}.{key}")
            else:
                values[section][key] = default

    run = values["run"]
    cmd = run["command"]
    if command is not None:
        if cmd is not None and cmd != command:
            raise ConfigError(f"command mismatch: config says {cmd!r}, CLI says {command!r}", "run.command")
        cmd = command
    if cmd is None:
        raise ConfigError("no command given", "run.command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unrecognized command {cmd!r}", "run.command")

    try:
        gamma = dsp.from_literal(values["gamma"]["gamma"])
    except (dsp.AdmissibilityError, TypeError, ValueError) as exc:
        raise ConfigError(f"gamma.gamma: {exc}", "gamma.gamma") from exc

    study = values["study"]
    for key in ("eps_list",):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in study[key]):
            raise ConfigError(f"study.{key} must be a list of numbers", f"study.{key}")
    data = values["data"]
    if len(data["mode"]) != 2 or not all(isinstance(m, int) for m in data["mode"]):
        raise ConfigError("data.mode must be a pair of integers", "data.mode")

    def build(section: str, fn, **kwargs):
        try:
            return fn(**kwargs)
        except ValueError as exc:
            key = _guess_key(section, str(exc), kwargs)
            raise ConfigError(str(exc), key) from exc

    data_spec = build("data", ex.DataSpec, kind=data["kind"], amplitude=data["amplitude"],
                      width=data["width"], mode=tuple(data["mode"]))
    grid = values["grid"]
    study_cfg = build(
        "study",
        ex.StudyConfig,
        gamma=gamma,
        eps_list=tuple(float(e) for e in study["eps_list"]),
        horizon=study["horizon"],
        n=grid["n"],
        L=grid["L"],
        data=data_spec,
        steps_per_unit_time=study["steps_per_unit_time"],
        samples_per_unit_time=study["samples_per_unit_time"],
        theta=study["theta"],
        eta=study["eta"],
        cutoff_N=study["cutoff_N"],
    )
    try:
        study_cfg.grid
    except ValueError as exc:
        raise ConfigError(str(exc), "grid.n" if "power" in str(exc) else "grid.L") from exc
    if data_spec.kind == "gaussian":
        build("data", data_spec.build, grid=study_cfg.grid)

    options = RunOptions(
        eps=study["eps"],
        equation=study["equation"],
        t0_count=study["t0_count"],
        deviation_samples=study["deviation_samples"],
        deviation_horizon=study["deviation_horizon"],
        snapshots=study["snapshots"],
        step_halving=study["step_halving"],
    )
    if not options.eps > 0:
        raise ConfigError("study.eps must be positive", "study.eps")
    if options.equation not in {k.value for k in solver.Kind}:
        raise ConfigError(f"unknown equation kind {options.equation!r}", "study.equation")
    if not options.deviation_horizon > 0:
        raise ConfigError("study.deviation_horizon must be positive", "study.deviation_horizon")
    if options.t0_count < 1 or options.deviation_samples < 2 or options.snapshots < 2:
        raise ConfigError("study.t0_count >= 1, deviation_samples >= 2 and snapshots >= 2 required", "study")
    return RunConfig(cmd, study_cfg, Path(run["output_dir"]), run["seed"], options)


def _guess_key(section: str, message: str, kwargs: dict) -> str:
    for key in sorted(kwargs, key=len, reverse=True):
        if key in message:
            return f"{section}.{key}"
    return section


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def to_toml(cfg: RunConfig) -> str:
    """Resolved config (defaults filled in) as a document :func:`parse_config` accepts."""
    s, o = cfg.study, cfg.options
    sections = {
        "run": {"command": cfg.command, "output_dir": str(cfg.output_dir), "seed": cfg.seed},
        "gamma": {"gamma": s.gamma.to_literal()},
        "grid": {"n": s.n, "L": float(s.L)},
        "data": {"kind": s.data.kind, "amplitude": float(s.data.amplitude),
                 "width": float(s.data.width), "mode": list(s.data.mode)},
        "study": {
            "eps_list": list(s.eps_list), "horizon": float(s.horizon),
            "steps_per_unit_time": s.steps_per_unit_time,
            "samples_per_unit_time": s.samples_per_unit_time,
            "theta": float(s.theta), "eta": float(s.eta), "cutoff_N": float(s.cutoff_N),
            "eps": float(o.eps), "equation": o.equation, "t0_count": o.t0_count,
            "deviation_samples": o.deviation_samples,
            "deviation_horizon": float(o.deviation_horizon), "snapshots": o.snapshots,
            "step_halving": o.step_halving,
        },
    }
    out = []
    for name, items in sections.items():
        out.append(f"[{name}]")
        out += [f"{k} = {_fmt(v)}" for k, v in items.items()]
        out.append("")
    return "\n".join(out)


def config_from_echo(text: str) -> RunConfig:
    """Recover the :class:`RunConfig` echoed into the comment header of an output file."""
    lines = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        lines.append(line[2:] if line.startswith("# ") else line[1:])
    return parse_config("\n".join(lines))


def _echo(cfg: RunConfig) -> list[str]:
    return [f"# {line}" if line else "#" for line in to_toml(cfg).rstrip("\n").splitlines()]


def _atomic_via(path: Path, write) -> None:
    """Run ``write(tmp_path)`` then rename onto ``path``."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_atomic(path: Path, lines: list[str]) -> None:
    _atomic_via(path, lambda tmp: Path(tmp).write_text("\n".join(lines) + "\n"))


def _num(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.17g}"


def _bool(x: bool) -> str:
    return "true" if x else "false"


def read_verdict(path: str | Path) -> tuple[RunConfig, list[dict[str, str]]]:
    text = Path(path).read_text()
    cfg = config_from_echo(text)
    body = [line for line in text.splitlines() if line and not line.startswith("#")]
    header = body[0].split(",")
    return cfg, [dict(zip(header, line.split(",", len(header) - 1))) for line in body[1:]]


def _write_verdict(cfg: RunConfig, out: Path, study: str, gates: list[ex.Gate]) -> bool:
    passed = all(g.passed for g in gates)
    lines = _echo(cfg) + ["study,pass,threshold,observed"]
    lines += [f"{study}/{g.name},{_bool(g.passed)},{g.threshold.replace(',', ';')},{_num(g.observed)}" for g in gates]
    lines.append(f"{study},{_bool(passed)},all gates,{sum(not g.passed for g in gates)}")
    _write_atomic(out / "verdict.csv", lines)
    return passed


def _write_report(cfg: RunConfig, out: Path, report: ex.ConvergenceReport) -> bool:
    lines = _echo(cfg) + ["epsilon,error,slope_running"]
    for (eps, err), slope in zip(report.rows, report.running_slopes()):
        lines.append(f"{_num(eps)},{_num(err)},{_num(slope)}")
    lines += ["# summary: slope,intercept,residual,pass",
              f"# {_num(report.slope)},{_num(report.intercept)},{_num(report.residual)},{_bool(report.passed)}"]
    lines += [f"# note: {n}" for n in report.notes]
    _write_atomic(out / f"{report.study}.csv", lines)
    return _write_verdict(cfg, out, report.study, list(report.gates))


def _gamma_check(cfg: RunConfig, out: Path) -> bool:
    gamma, opts = cfg.study.gamma, cfg.options
    rng = np.random.default_rng(cfg.seed)
    horizon = opts.deviation_horizon
    lines = _echo(cfg) + ["epsilon,t0,sup_deviation,bound,pass"]
    gates = []
    violations = 0
    for eps in cfg.study.eps_list:
        for t0 in rng.uniform(-10.0, 10.0, opts.t0_count):
            rep = dsp.deviation_sup(gamma, eps, float(t0), horizon, opts.deviation_samples)
            violations += not rep.passed
            lines.append(f"{_num(eps)},{_num(float(t0))},{_num(rep.sup_deviation)},{_num(rep.bound)},{_bool(rep.passed)}")
    _write_atomic(out / "deviation.csv", lines)
    gates.append(ex.Gate("phase deviation bound", violations == 0, "0 violations", float(violations)))
    if gamma.is_positive:
        lines = _echo(cfg) + ["epsilon,sup_deviation,bound,pass"]
        c_viol = 0
        for eps in cfg.study.eps_list:
            rep = dsp.c_deviation_sup(gamma, eps, horizon, opts.deviation_samples)
            c_viol += not rep.passed
            lines.append(f"{_num(eps)},{_num(rep.sup_deviation)},{_num(rep.bound)},{_bool(rep.passed)}")
        _write_atomic(out / "c_deviation.csv", lines)
        gates.append(ex.Gate("time-change deviation bound", c_viol == 0, "0 violations", float(c_viol)))
    return _write_verdict(cfg, out, "gamma-check", gates)


def _cov_check(cfg: RunConfig, out: Path) -> bool:
    rep = ex.change_of_variables_check(cfg.study, cfg.options.eps)
    steps = max(1, round(cfg.study.steps_per_unit_time * cfg.study.horizon))
    lines = _echo(cfg) + ["steps,tau_horizon,max_l2_deviation"]
    lines.append(f"{steps},{_num(rep.tau_horizon)},{_num(rep.deviation)}")
    lines.append(f"{2 * steps},{_num(rep.tau_horizon)},{_num(rep.deviation_halved)}")
    _write_atomic(out / "cov.csv", lines)
    return _write_verdict(cfg, out, "cov-check", list(rep.gates))


def _strichartz(cfg: RunConfig, out: Path) -> bool:
    s = cfg.study
    probe = ex.uniform_strichartz_probe(s.gamma, s.eps_list, s.initial(), s.horizon, s.samples_per_unit_time)
    lines = _echo(cfg) + ["epsilon,l4_tx"] + [f"{_num(e)},{_num(v)}" for e, v in probe.rows]
    _write_atomic(out / "strichartz.csv", lines)
    gate = ex.Gate("uniform bound ratio", probe.passed, f"<= {ex.STRICHARTZ_MAX_RATIO}", probe.ratio)
    return _write_verdict(cfg, out, "strichartz-probe", [gate])


def _simulate(cfg: RunConfig, out: Path) -> bool:
    s, o = cfg.study, cfg.options
    kind = solver.Kind(o.equation)
    eq = solver.EquationSpec(kind, s.gamma, o.eps if kind in (solver.Kind.FAST_MANAGED, solver.Kind.RESCALED_EPS) else None)
    times = s.time_grid()
    picks = np.unique(np.linspace(0, len(times) - 1, o.snapshots).round().astype(int))
    traj = solver.evolve(eq, s.initial(), times, [float(times[i]) for i in picks])
    echo = to_toml(cfg).rstrip("\n")
    _atomic_via(out / "trajectory.csv", lambda tmp: traj.to_csv(tmp, echo))
    lines = _echo(cfg) + ["index,t,snapshot_file,spectrum_file"]
    for j, t in enumerate(traj.sample_times()):
        snap_name, spec_name = f"snapshot_{j:03d}.bin", f"spectrum_{j:03d}.csv"
        field_ = traj.snapshot(t)
        _atomic_via(out / snap_name, lambda tmp: write_snapshot(tmp, field_))
        k0 = field_.grid.k0
        _write_atomic(out / spec_name, _echo(cfg) + ["shell_k,energy"]
                      + [f"{_num(i * k0)},{_num(e)}" for i, e in spectrum_shells(field_)])
        lines.append(f"{j},{_num(t)},{snap_name},{spec_name}")
    _write_atomic(out / "snapshots.csv", lines)
    gates = [ex.Gate("mass drift", traj.mass_drift <= solver.MASS_TOLERANCE, f"<= {solver.MASS_TOLERANCE}", traj.mass_drift)]
    gates.append(ex.Gate("spectral tail", not traj.warnings, "no resolution warnings", float(len(traj.warnings))))
    tail = ex.high_frequency_tail(traj, s.cutoff_N)
    gates.append(ex.Gate("high-frequency tail (L2 proxy)", True, "reported only", tail))
    try:
        intervals = partition_by_l4(traj, s.eta)
    except ValueError:
        intervals = None
    if intervals is not None:
        _atomic_via(out / "partition.csv", lambda tmp: write_partition_csv(tmp, traj, intervals, echo))
    gates.append(ex.Gate("L4 partition", intervals is not None, f"eta = {s.eta}",
                         float(len(intervals)) if intervals else math.nan))
    gates.append(ex.Gate("S norm", True, "reported only", s_norm(traj).s_norm))
    return _write_verdict(cfg, out, "simulate", gates)


def run(cfg: RunConfig) -> int:
    """Execute a validated config; returns the exit status."""
    out = cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = tempfile.NamedTemporaryFile(dir=out, delete=True)
        probe.close()
    except OSError as exc:
        _fail(EXIT_CONFIG, "config", "run.output_dir", f"output_dir not writable: {exc}")
        return EXIT_CONFIG
    s = cfg.study
    try:
        if cfg.command == "gamma-check":
            passed = _gamma_check(cfg, out)
        elif cfg.command == "propagator-study":
            passed = _write_report(cfg, out, ex.propagator_study(s))
        elif cfg.command == "averaging-study":
            passed = _write_report(cfg, out, ex.averaging_study(s, cfg.options.step_halving))
        elif cfg.command == "homog-study":
            passed = _write_report(cfg, out, ex.homogenization_study(s))
        elif cfg.command == "cov-check":
            passed = _cov_check(cfg, out)
        elif cfg.command == "strichartz-probe":
            passed = _strichartz(cfg, out)
        else:
            passed = _simulate(cfg, out)
    except solver.NumericalAbort as exc:
        _fail(EXIT_ABORT, "abort", "t", str(exc))
        return EXIT_ABORT
    except dsp.AdmissibilityError as exc:
        _fail(EXIT_CONFIG, "config", "gamma.gamma", str(exc))
        return EXIT_CONFIG
    if not passed:
        _, rows = read_verdict(out / "verdict.csv")
        failing = [r["study"] for r in rows if r["pass"] == "false" and "/" in r["study"]]
        _fail(EXIT_FAIL, "gate", "verdict", "failed: " + "; ".join(failing))
        return EXIT_FAIL
    return EXIT_OK


def _fail(status: int, reason: str, key: str, message: str) -> None:
    msg = message.replace('"', "'").replace("\n", " ")
    print(f'dmnls: status={status} reason={reason} key={key} message="{msg}"', file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dmnls", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=None, help="output directory (overrides run.output_dir)")
    args = parser.parse_args(argv)
    try:
        text = args.config.read_text()
    except OSError as exc:
        _fail(EXIT_CONFIG, "config", "--config", str(exc))
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.command)
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        _fail(EXIT_CONFIG, "config", exc.key or "-", f"{exc}{where}")
        return EXIT_CONFIG
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
