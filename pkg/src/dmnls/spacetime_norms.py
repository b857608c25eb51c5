"""Space-time norms of trajectories and the L4 interval partition."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .solver import Trajectory


@dataclass(frozen=True)
class SpaceTimeNorms:
    linf_l2: float
    l4_tx: float
    interval: tuple[float, float]

    @property
    def s_norm(self) -> float:
        return self.linf_l2 + self.l4_tx


def _window(traj: Trajectory, interval: tuple[float, float] | None) -> slice:
    t = traj.per_step_norms[:, 0]
    if interval is None:
        return slice(0, len(t))
    start, end = interval
    tol = 1e-12 * max(1.0, abs(t[-1] - t[0]))  # endpoints within roundoff of a node count as that node
    if start > end or start < t[0] - tol or end > t[-1] + tol:
        raise ValueError(f"interval {interval} outside trajectory span [{t[0]}, {t[-1]}]")
    lo = int(np.searchsorted(t, start - tol, side="left"))
    hi = int(np.searchsorted(t, end + tol, side="right"))
    return slice(lo, hi)


def quartic_increments(traj: Trajectory) -> np.ndarray:
    """Trapezoid pieces of ``int ||u(t)||_4^4 dt`` between consecutive grid nodes."""
    t, _, l4 = traj.per_step_norms.T
    q = l4**4
    return 0.5 * np.diff(t) * (q[:-1] + q[1:])


def s_norm(traj: Trajectory, interval: tuple[float, float] | None = None) -> SpaceTimeNorms:
    """``sup_t ||u||_2`` over the step grid plus ``(int ||u||_4^4 dt)^(1/4)`` by trapezoid."""
    sl = _window(traj, interval)
    rows = traj.per_step_norms[sl]
    if len(rows) == 0:
        raise ValueError(f"interval {interval} contains no grid node")
    t, l2, l4 = rows.T
    quartic = float(np.sum(0.5 * np.diff(t) * (l4[:-1] ** 4 + l4[1:] ** 4)))
    span = (float(t[0]), float(t[-1])) if interval is None else (float(interval[0]), float(interval[1]))
    return SpaceTimeNorms(float(l2.max()), quartic**0.25, span)


def trajectory_difference(a: Trajectory, b: Trajectory) -> Trajectory:
    """Pointwise-in-time ``a - b``; both must carry a snapshot at every grid node."""
    if len(a.time_grid) != len(b.time_grid) or not np.array_equal(a.time_grid, b.time_grid):
        raise ValueError("difference undefined: trajectories not on a shared grid")
    if a.grid != b.grid:
        raise ValueError("difference undefined: trajectories not on a shared grid")
    stamps = [float(t) for t in a.time_grid]
    if any(t not in a.snapshots or t not in b.snapshots for t in stamps):
        raise ValueError(
            "step-wise difference needs snapshots at every grid node; use solver.evolve_difference for long runs"
        )
    snaps = {t: a.snapshots[t] - b.snapshots[t] for t in stamps}
    norms = np.empty_like(a.per_step_norms)
    for i, t in enumerate(stamps):
        d = snaps[t].values
        dens = d.real**2 + d.imag**2
        area = a.grid.cell_area
        norms[i] = (t, np.sqrt(dens.sum() * area), (np.sum(dens**2) * area) ** 0.25)
    return Trajectory(None, a.time_grid, snaps, norms)


def partition_by_l4(traj: Trajectory, eta: float) -> list[tuple[float, float]]:
    """Greedy left-to-right split into intervals with ``||u||_{L^4_{t,x}(I_j)} < eta``.

    Each interval is extended as far as the step grid allows.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    t = traj.per_step_norms[:, 0]
    pieces = quartic_increments(traj)
    budget = eta**4
    if len(pieces) and pieces.max() >= budget:
        raise ValueError("eta below grid resolution: a single step already carries L4 norm >= eta")
    intervals = []
    start, acc = 0, 0.0
    for i, q in enumerate(pieces):
        if acc + q >= budget:
            intervals.append((float(t[start]), float(t[i])))
            start, acc = i, 0.0
        acc += q
    intervals.append((float(t[start]), float(t[-1])))
    return intervals


def write_partition_csv(path: str | Path, traj: Trajectory, intervals, header_comment: str = "") -> None:
    lines = [f"# {line}" for line in header_comment.splitlines()]
    lines.append("interval_index,t_start,t_end,linf_l2,l4_tx,s_norm")
    for j, iv in enumerate(intervals):
        nrm = s_norm(traj, iv)
        lines.append(f"{j},{iv[0]:.17g},{iv[1]:.17g},{nrm.linf_l2:.17g},{nrm.l4_tx:.17g},{nrm.s_norm:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
