"""Exact calculus for 1-periodic piecewise-constant dispersion maps.

A map is stored as the segment endpoints ``0 = b_0 < b_1 < ... < b_m = 1`` and
one nonzero value per segment.  Everything here is closed-form: the running
integral of ``gamma(t / eps)``, its inverse for positive maps, and the sup of
the deviation from the averaged phase (which is piecewise linear, so sampling
at the kinks is exact).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np


class AdmissibilityError(ValueError):
    """Raised when a dispersion map violates one of the admissibility rules."""


@dataclass(frozen=True)
class DispersionMap:
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def constant(cls, value: float) -> "DispersionMap":
        return piecewise([0.0, 1.0], [value])

    @property
    def segment_count(self) -> int:
        return len(self.values)

    @property
    def sup_norm(self) -> float:
        return max(abs(v) for v in self.values)

    @property
    def is_positive(self) -> bool:
        return all(v > 0 for v in self.values)

    @property
    def is_constant(self) -> bool:
        return len(set(self.values)) == 1

    def to_literal(self) -> list[list[float]]:
        """Inverse of :func:`from_literal`: ``[[start, value], ...]``."""
        return [[b, v] for b, v in zip(self.breakpoints[:-1], self.values)]


@dataclass(frozen=True)
class Admissibility:
    sup_gamma: float
    sup_inverse_gamma: float
    segment_count: int


@dataclass(frozen=True)
class DeviationReport:
    epsilon: float
    sup_deviation: float
    bound: float
    sample_count: int

    @property
    def passed(self) -> bool:
        return self.sup_deviation <= self.bound


def piecewise(breakpoints: Sequence[float], values: Sequence[float]) -> DispersionMap:
    """Build a map and check it is admissible."""
    gamma = DispersionMap(tuple(breakpoints), tuple(values))
    validate_admissible(gamma)
    return gamma


def from_literal(literal: Sequence[Sequence[float]]) -> DispersionMap:
    """Parse ``[[0.0, 3.0], [0.5, -1.0]]`` (segment start, value); endpoint 1 is implicit."""
    if len(literal) == 0:
        raise AdmissibilityError("map literal is empty")
    starts, values = [], []
    for entry in literal:
        if len(entry) != 2:
            raise AdmissibilityError(f"map literal entry {list(entry)!r} is not a [start, value] pair")
        starts.append(float(entry[0]))
        values.append(float(entry[1]))
    return piecewise(starts + [1.0], values)


def validate_admissible(gamma: DispersionMap) -> Admissibility:
    """Check the admissibility rules, raising on the first violation."""
    b, v = gamma.breakpoints, gamma.values
    if len(b) < 2:
        raise AdmissibilityError("need at least one segment")
    if len(v) != len(b) - 1:
        raise AdmissibilityError(
            f"segment count mismatch: {len(b) - 1} segments but {len(v)} values"
        )
    if not all(np.isfinite(b)) or b[0] != 0.0 or b[-1] != 1.0:
        raise AdmissibilityError(f"breakpoints must start at 0 and end at 1, got {b[0]}..{b[-1]}")
    for left, right in zip(b[:-1], b[1:]):
        if not right > left:
            raise AdmissibilityError(f"breakpoints not strictly increasing at {left} -> {right}")
    for i, value in enumerate(v):
        if not np.isfinite(value):
            raise AdmissibilityError(f"gamma unbounded on segment {i}")
        if value == 0.0:
            raise AdmissibilityError(f"1/gamma unbounded: zero value on segment {i}")
    return Admissibility(
        sup_gamma=max(abs(x) for x in v),
        sup_inverse_gamma=max(1.0 / abs(x) for x in v),
        segment_count=len(v),
    )


@lru_cache(maxsize=256)
def _tables(gamma: DispersionMap) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    validate_admissible(gamma)
    b = np.asarray(gamma.breakpoints)
    v = np.asarray(gamma.values)
    cum = np.concatenate([[0.0], np.cumsum(v * np.diff(b))])
    return b, v, cum, float(cum[-1])


def average(gamma: DispersionMap) -> float:
    """Mean of the map over one period."""
    return _tables(gamma)[3]


def evaluate(gamma: DispersionMap, t):
    """Value at ``t mod 1``, right-continuous at breakpoints."""
    b, v, _, _ = _tables(gamma)
    frac = np.mod(np.asarray(t, dtype=float), 1.0)
    idx = np.clip(np.searchsorted(b, frac, side="right") - 1, 0, len(v) - 1)
    out = v[idx]
    return float(out) if np.ndim(out) == 0 else out


def _periodic_part(gamma: DispersionMap, s):
    # P(s) = int_0^s gamma - <gamma> s, which is 1-periodic
    b, v, cum, mean = _tables(gamma)
    frac = np.mod(s, 1.0)
    idx = np.clip(np.searchsorted(b, frac, side="right") - 1, 0, len(v) - 1)
    return cum[idx] + v[idx] * (frac - b[idx]) - mean * frac


def phase_deviation(gamma: DispersionMap, eps: float, t0, t):
    """``Gamma_eps(t, t0) - <gamma> (t - t0)``, evaluated without cancellation."""
    _check_eps(eps)
    t0 = np.asarray(t0, dtype=float)
    t = np.asarray(t, dtype=float)
    out = eps * (_periodic_part(gamma, t / eps) - _periodic_part(gamma, t0 / eps))
    return float(out) if np.ndim(out) == 0 else out


def gamma_integral(gamma: DispersionMap, eps: float, t0, t):
    """Closed-form ``int_{t0}^{t} gamma(tau / eps) dtau``."""
    mean = average(gamma)
    t0 = np.asarray(t0, dtype=float)
    t = np.asarray(t, dtype=float)
    out = mean * (t - t0) + phase_deviation(gamma, eps, t0, t)
    return float(out) if np.ndim(out) == 0 else out


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def _require_positive(gamma: DispersionMap) -> None:
    validate_admissible(gamma)
    if not gamma.is_positive:
        raise AdmissibilityError("inverse undefined: Gamma_eps not monotone (map has a nonpositive segment)")


def inverse_gamma(gamma: DispersionMap, eps: float, tau):
    """The time change ``c_eps``: solves ``Gamma_eps(c, 0) = tau`` segment by segment."""
    _check_eps(eps)
    _require_positive(gamma)
    b, v, cum, mean = _tables(gamma)
    sigma = np.asarray(tau, dtype=float) / eps
    periods = np.floor(sigma / mean)
    rem = sigma - periods * mean
    idx = np.clip(np.searchsorted(cum, rem, side="right") - 1, 0, len(v) - 1)
    out = eps * (periods + b[idx] + (rem - cum[idx]) / v[idx])
    return float(out) if np.ndim(out) == 0 else out


def breakpoint_images(gamma: DispersionMap, eps: float, start: float, stop: float) -> np.ndarray:
    """All times ``eps (k + b_j)`` inside ``[start, stop]``."""
    _check_eps(eps)
    b = np.asarray(gamma.breakpoints[:-1])
    k = np.arange(np.floor(start / eps) - 1, np.ceil(stop / eps) + 1)
    pts = (eps * (k[:, None] + b[None, :])).ravel()
    return np.sort(pts[(pts >= start) & (pts <= stop)])


def kink_images(gamma: DispersionMap, eps: float, stop: float) -> np.ndarray:
    """Kinks of ``c_eps`` on ``[0, stop]``: the values ``Gamma_eps`` takes at breakpoint images."""
    _require_positive(gamma)
    t_stop = inverse_gamma(gamma, eps, stop)
    return gamma_integral(gamma, eps, 0.0, breakpoint_images(gamma, eps, 0.0, t_stop))


def deviation_bound(gamma: DispersionMap, eps: float) -> float:
    """``4 eps (sup|gamma| + |<gamma>|)``: the uniform bound on the phase deviation."""
    return 4.0 * eps * (gamma.sup_norm + abs(average(gamma)))


def _sample_grid(start: float, stop: float, samples: int, extra: np.ndarray) -> np.ndarray:
    if samples < 2:
        raise ValueError("samples must be >= 2")
    return np.unique(np.concatenate([np.linspace(start, stop, samples), extra]))


def deviation_sup(
    gamma: DispersionMap, eps: float, t0: float, horizon: float, samples: int = 1001
) -> DeviationReport:
    """Exact sup of ``|Gamma_eps(t, t0) - <gamma>(t - t0)|`` over ``[t0, t0 + horizon]``."""
    ts = _sample_grid(t0, t0 + horizon, samples, breakpoint_images(gamma, eps, t0, t0 + horizon))
    dev = np.abs(phase_deviation(gamma, eps, t0, ts))
    return DeviationReport(eps, float(dev.max()), deviation_bound(gamma, eps), len(ts))


def c_deviation_sup(
    gamma: DispersionMap, eps: float, horizon: float, samples: int = 1001
) -> DeviationReport:
    """Exact sup of ``|c_eps(tau) - tau / <gamma>|`` over ``[0, horizon]``."""
    _require_positive(gamma)
    mean = average(gamma)
    taus = _sample_grid(0.0, horizon, samples, kink_images(gamma, eps, horizon))
    dev = np.abs(inverse_gamma(gamma, eps, taus) - taus / mean)
    return DeviationReport(eps, float(dev.max()), deviation_bound(gamma, eps) / mean, len(taus))
