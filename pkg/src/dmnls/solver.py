"""Strang split-step integration of the four evolution laws.

Every law has the form ``i u_t + a(t) Lap u = b(t) |u|^2 u``.  Over a step both
substeps are solved exactly given the step integrals of ``a`` and ``b``:

* linear: ``u_hat <- exp(-i |xi|^2 int a) u_hat``
* nonlinear: ``u <- exp(-i (int b) |u|^2) u`` (``|u|`` is frozen by this flow)

so the only error is the splitting of the two.  Ordering is N/2, L, N/2.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import dispersion as dsp
from .spectral import Field, Grid, dispersion_multiplier, forward, inverse, spectral_tail_fraction

MASS_TOLERANCE = 1e-10
TAIL_TOLERANCE = 1e-10


class Kind(str, enum.Enum):
    FAST_MANAGED = "fast_managed"
    AVERAGED = "averaged"
    RESCALED_EPS = "rescaled_eps"
    RESCALED_LIMIT = "rescaled_limit"


class NumericalAbort(RuntimeError):
    """Non-finite values appeared during a run."""

    def __init__(self, time: float, message: str = "non-finite field"):
        super().__init__(f"{message} at t={time!r}")
        self.time = time


class ResolutionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EquationSpec:
    kind: Kind
    gamma: dsp.DispersionMap
    eps: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        dsp.validate_admissible(self.gamma)
        if self.kind in (Kind.FAST_MANAGED, Kind.RESCALED_EPS):
            if self.eps is None or not self.eps > 0:
                raise ValueError(f"{self.kind.value} needs a positive eps, got {self.eps}")
        if self.kind in (Kind.RESCALED_EPS, Kind.RESCALED_LIMIT) and not self.gamma.is_positive:
            raise dsp.AdmissibilityError(f"{self.kind.value} requires a strictly positive map")
        if self.kind is Kind.AVERAGED and dsp.average(self.gamma) == 0:
            raise dsp.AdmissibilityError("averaged equation needs a nonzero average")

    def dispersion_integral(self, t0: float, t1: float) -> float:
        """Integral over ``[t0, t1]`` of the coefficient of the Laplacian."""
        if self.kind is Kind.FAST_MANAGED:
            return dsp.gamma_integral(self.gamma, self.eps, t0, t1)
        if self.kind is Kind.AVERAGED:
            return dsp.average(self.gamma) * (t1 - t0)
        return t1 - t0

    def nonlinear_integral(self, t0: float, t1: float) -> float:
        """Integral over ``[t0, t1]`` of the coefficient of ``|u|^2 u``."""
        if self.kind is Kind.RESCALED_EPS:
            # c_eps' jumps at kinks; the exact increment avoids order loss there
            return dsp.inverse_gamma(self.gamma, self.eps, t1) - dsp.inverse_gamma(self.gamma, self.eps, t0)
        if self.kind is Kind.RESCALED_LIMIT:
            return (t1 - t0) / dsp.average(self.gamma)
        return t1 - t0


def fast_managed(gamma: dsp.DispersionMap, eps: float) -> EquationSpec:
    return EquationSpec(Kind.FAST_MANAGED, gamma, eps)


def averaged(gamma: dsp.DispersionMap) -> EquationSpec:
    return EquationSpec(Kind.AVERAGED, gamma)


def rescaled_eps(gamma: dsp.DispersionMap, eps: float) -> EquationSpec:
    return EquationSpec(Kind.RESCALED_EPS, gamma, eps)


def rescaled_limit(gamma: dsp.DispersionMap) -> EquationSpec:
    return EquationSpec(Kind.RESCALED_LIMIT, gamma)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Result of a run.

    ``time_grid`` holds the stamps used for norms and comparisons.  For runs
    on an image grid ``solver_times`` holds the physical times actually
    integrated to; otherwise the two coincide.  ``per_step_norms`` has columns
    ``(t, L2 norm, L4 norm)``, one row per grid node.
    """

    equation: EquationSpec | None
    time_grid: np.ndarray
    snapshots: dict[float, Field]
    per_step_norms: np.ndarray
    solver_times: np.ndarray | None = None
    warnings: tuple[str, ...] = dc_field(default_factory=tuple)

    @property
    def grid(self) -> Grid:
        return next(iter(self.snapshots.values())).grid

    @property
    def max_step(self) -> float:
        times = self.time_grid if self.solver_times is None else self.solver_times
        return float(np.max(np.diff(times))) if len(times) > 1 else 0.0

    @property
    def mass_drift(self) -> float:
        l2 = self.per_step_norms[:, 1]
        if l2[0] == 0:
            return float(np.max(l2))
        return float(np.max(np.abs(l2 / l2[0] - 1.0)))

    def snapshot(self, t: float) -> Field:
        return self.snapshots[float(t)]

    def sample_times(self) -> list[float]:
        return sorted(self.snapshots)

    def scaled(self, factor: complex) -> "Trajectory":
        norms = self.per_step_norms.copy()
        norms[:, 1:] *= abs(factor)
        return Trajectory(
            self.equation,
            self.time_grid,
            {t: f * factor for t, f in self.snapshots.items()},
            norms,
            self.solver_times,
            self.warnings,
        )

    def to_csv(self, path: str | Path, header_comment: str = "") -> None:
        write_norms_csv(path, self.per_step_norms, header_comment)


def write_norms_csv(path: str | Path, norms: np.ndarray, header_comment: str = "") -> None:
    lines = [f"# {line}" for line in header_comment.splitlines()]
    lines.append("t,mass,l4norm")
    lines += [f"{t:.17g},{l2 * l2:.17g},{l4:.17g}" for t, l2, l4 in norms]
    Path(path).write_text("\n".join(lines) + "\n")


def nonlinear_phase_step(field: Field, phase_integral: float) -> Field:
    """Exact flow of ``i u_t = mu |u|^2 u`` given ``int mu`` over the step."""
    return Field(field.grid, _nonlinear(field.values, phase_integral))


def _nonlinear(values: np.ndarray, phase_integral: float) -> np.ndarray:
    if phase_integral == 0.0:
        return values
    with np.errstate(over="ignore", invalid="ignore"):  # overflow turns into NaN, caught by the recorder
        return values * np.exp(-1j * phase_integral * (values.real**2 + values.imag**2))


def _strang(grid: Grid, values: np.ndarray, equation: EquationSpec, t: float, t_next: float) -> np.ndarray:
    mid = 0.5 * (t + t_next)
    values = _nonlinear(values, equation.nonlinear_integral(t, mid))
    phase = equation.dispersion_integral(t, t_next)
    values = inverse(grid, forward(grid, values) * dispersion_multiplier(grid, phase))
    return _nonlinear(values, equation.nonlinear_integral(mid, t_next))


def strang_step(field: Field, equation: EquationSpec, t: float, h: float) -> Field:
    """One N/2-L-N/2 step from ``t`` to ``t + h``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    return Field(field.grid, _strang(field.grid, field.values, equation, t, t + h))


def _norms(grid: Grid, values: np.ndarray) -> tuple[float, float]:
    with np.errstate(over="ignore", invalid="ignore"):  # overflow surfaces as a NumericalAbort
        dens = values.real**2 + values.imag**2
        return float(np.sqrt(dens.sum() * grid.cell_area)), float((np.sum(dens * dens) * grid.cell_area) ** 0.25)


def _check_grid(times: np.ndarray) -> None:
    if times.ndim != 1 or len(times) < 1:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    steps = np.diff(times)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0))
        raise ValueError(f"step size <= 0 at t={times[bad]!r}")


def march(equation: EquationSpec, initial: Field, solver_times: np.ndarray) -> Iterator[np.ndarray]:
    """Yield the state (raw array) at every node of ``solver_times``, starting with the initial data."""
    solver_times = np.asarray(solver_times, dtype=float)
    _check_grid(solver_times)
    grid = initial.grid
    values = np.array(initial.values)
    yield values
    for t, t_next in zip(solver_times[:-1], solver_times[1:]):
        values = _strang(grid, values, equation, float(t), float(t_next))
        yield values


class _Recorder:
    """Accumulates norms, snapshots and diagnostics while streaming a run."""

    def __init__(self, grid: Grid, stamps: np.ndarray, sample_times: Sequence[float], label: str):
        self.grid = grid
        self.stamps = stamps
        self.wanted = {float(s) for s in sample_times}
        missing = self.wanted - {float(s) for s in stamps}
        if missing:
            raise ValueError(f"sample times not on the time grid: {sorted(missing)[:3]}")
        self.norms = np.empty((len(stamps), 3))
        self.snapshots: dict[float, Field] = {}
        self.notes: list[str] = []
        self.label = label

    def record(self, i: int, values: np.ndarray, resolved: dict[str, np.ndarray] | None = None) -> None:
        """Store norms for node ``i``; ``resolved`` lists the runs whose spectra get tail-checked."""
        t = float(self.stamps[i])
        l2, l4 = _norms(self.grid, values)
        if not (np.isfinite(l2) and np.isfinite(l4)):
            raise NumericalAbort(t, f"non-finite field in {self.label}")
        self.norms[i] = (t, l2, l4)
        if t in self.wanted:
            snap = Field(self.grid, values)
            for label, v in (resolved if resolved is not None else {self.label: values}).items():
                tail = spectral_tail_fraction(snap if v is values else Field(self.grid, v))
                if tail >= TAIL_TOLERANCE:
                    msg = f"{label}: spectral tail {tail:.3e} beyond 2/3 Nyquist at t={t:.6g}; refine the grid"
                    self.notes.append(msg)
                    warnings.warn(msg, ResolutionWarning, stacklevel=3)
            self.snapshots[t] = snap

    def finish(self, equation: EquationSpec | None, solver_times: np.ndarray | None) -> Trajectory:
        traj = Trajectory(equation, self.stamps, self.snapshots, self.norms, solver_times, tuple(self.notes))
        drift = traj.mass_drift
        if drift > MASS_TOLERANCE and equation is not None:
            self.notes.append(f"{self.label}: mass drift {drift:.3e} exceeds {MASS_TOLERANCE:g}")
            traj = Trajectory(equation, self.stamps, self.snapshots, self.norms, solver_times, tuple(self.notes))
        return traj


def _default_samples(times: np.ndarray, sample_times) -> list[float]:
    if sample_times is None:
        return [float(times[0]), float(times[-1])]
    return [float(s) for s in sample_times]


def evolve(
    equation: EquationSpec,
    initial: Field,
    time_grid: Sequence[float],
    sample_times: Sequence[float] | None = None,
) -> Trajectory:
    """Integrate on ``time_grid`` (must start at 0), storing snapshots at ``sample_times``.

    Default sample times are the first and last grid nodes.
    """
    times = np.asarray(time_grid, dtype=float)
    _check_grid(times)
    if times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    rec = _Recorder(initial.grid, times, _default_samples(times, sample_times), equation.kind.value)
    for i, values in enumerate(march(equation, initial, times)):
        rec.record(i, values)
    return rec.finish(equation, None)


def image_grid(gamma: dsp.DispersionMap, eps: float, tau_grid: Sequence[float]) -> np.ndarray:
    return np.asarray(dsp.inverse_gamma(gamma, eps, np.asarray(tau_grid, dtype=float)))


def evolve_on_image_grid(
    equation: EquationSpec,
    initial: Field,
    tau_grid: Sequence[float],
    sample_times: Sequence[float] | None = None,
) -> Trajectory:
    """Run the fast-managed law on ``{c_eps(tau_j)}`` and stamp the states by ``tau_j``."""
    if equation.kind is not Kind.FAST_MANAGED:
        raise ValueError("evolve_on_image_grid needs a fast_managed equation")
    taus = np.asarray(tau_grid, dtype=float)
    _check_grid(taus)
    if taus[0] != 0.0:
        raise ValueError("tau grid must start at 0")
    times = image_grid(equation.gamma, equation.eps, taus)
    rec = _Recorder(initial.grid, taus, _default_samples(taus, sample_times), "fast_managed(image grid)")
    for i, values in enumerate(march(equation, initial, times)):
        rec.record(i, values)
    return rec.finish(equation, times)


def evolve_difference(
    eq_a: EquationSpec,
    eq_b: EquationSpec,
    initial: Field,
    time_grid: Sequence[float],
    sample_times: Sequence[float] | None = None,
    solver_times_a: Sequence[float] | None = None,
    solver_times_b: Sequence[float] | None = None,
    initial_b: Field | None = None,
) -> Trajectory:
    """Run two laws in lockstep and record the trajectory of ``u_a - u_b``.

    Memory stays at two fields regardless of step count.  ``time_grid`` gives
    the shared stamps; ``solver_times_*`` override the times each run is
    integrated on (needed when one side lives on an image grid).
    """
    stamps = np.asarray(time_grid, dtype=float)
    _check_grid(stamps)
    ta = stamps if solver_times_a is None else np.asarray(solver_times_a, dtype=float)
    tb = stamps if solver_times_b is None else np.asarray(solver_times_b, dtype=float)
    if not len(ta) == len(tb) == len(stamps):
        raise ValueError("difference undefined: trajectories not on a shared grid")
    init_b = initial if initial_b is None else initial_b
    if init_b.grid != initial.grid:
        raise ValueError("difference undefined: trajectories not on a shared grid")
    rec = _Recorder(initial.grid, stamps, _default_samples(stamps, sample_times), "difference")
    for i, (va, vb) in enumerate(zip(march(eq_a, initial, ta), march(eq_b, init_b, tb))):
        for v, eq in ((va, eq_a), (vb, eq_b)):
            if not np.all(np.isfinite(v)):
                raise NumericalAbort(float(stamps[i]), f"non-finite field in {eq.kind.value}")
        rec.record(i, va - vb, {eq_a.kind.value: va, eq_b.kind.value + " (b)": vb})
    return rec.finish(None, None)
