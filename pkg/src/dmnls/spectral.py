"""Periodic square grid, unitary Fourier transform and Fourier multipliers.

Transform convention: the coefficient at wavenumber ``xi`` is
``u_hat(xi) = (L / n**2) * sum_x u(x) exp(-i xi.x)``, which makes Plancherel
hold with constant one: ``sum |u|^2 dA == sum |u_hat|^2``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft


def fft_workers() -> int:
    """Worker count for the FFT backend; ``DMNLS_THREADS=0`` (or unset) means auto."""
    raw = os.environ.get("DMNLS_THREADS", "0")
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    return requested if requested > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True)
class Grid:
    n: int
    L: float

    def __post_init__(self) -> None:
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"points_per_side must be a power of two, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"side_length must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell_area(self) -> float:
        return self.dx**2

    @property
    def nyquist(self) -> float:
        return np.pi * self.n / self.L

    @property
    def k0(self) -> float:
        """Fundamental wavenumber ``2 pi / L``."""
        return 2.0 * np.pi / self.L

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return self.k0 * scipy.fft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def xi_squared(self) -> np.ndarray:
        k = self.wavenumbers
        return k[:, None] ** 2 + k[None, :] ** 2

    @cached_property
    def xi_abs(self) -> np.ndarray:
        return np.sqrt(self.xi_squared)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.dx * np.arange(self.n)
        return np.meshgrid(x, x, indexing="ij")


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=complex)
        if values.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"field shape {values.shape} does not match grid {self.grid.n}x{self.grid.n}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def coefficients(self) -> np.ndarray:
        return forward(self.grid, self.values)

    @classmethod
    def from_coefficients(cls, grid: Grid, coeffs: np.ndarray) -> "Field":
        return cls(grid, inverse(grid, coeffs))

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: complex) -> "Field":
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__


def _same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def forward(grid: Grid, values: np.ndarray) -> np.ndarray:
    return scipy.fft.fft2(values, norm="ortho", workers=fft_workers()) * grid.dx


def inverse(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return scipy.fft.ifft2(coeffs, norm="ortho", workers=fft_workers()) / grid.dx


def dispersion_multiplier(grid: Grid, phase: float) -> np.ndarray:
    """``exp(-i phase |xi|^2)``, built as an outer product of the per-axis factors."""
    axis = np.exp(-1j * phase * grid.wavenumbers**2)
    return np.multiply.outer(axis, axis)


def apply_dispersion_phase(field: Field, phase: float) -> Field:
    """Free evolution ``exp(i phase Laplacian)`` applied to ``field``."""
    if phase == 0.0:
        return field
    coeffs = field.coefficients() * dispersion_multiplier(field.grid, phase)
    return Field.from_coefficients(field.grid, coeffs)


def project_low(field: Field, cutoff: float) -> Field:
    """Sharp Fourier cutoff keeping ``|xi| <= cutoff``."""
    mask = field.grid.xi_abs <= cutoff
    return Field.from_coefficients(field.grid, field.coefficients() * mask)


def project_high(field: Field, cutoff: float) -> Field:
    """Complement of :func:`project_low`: keeps ``|xi| > cutoff``."""
    mask = field.grid.xi_abs > cutoff
    return Field.from_coefficients(field.grid, field.coefficients() * mask)


def sobolev_norm(field: Field, s: float, homogeneous: bool = False) -> float:
    """``H^s`` norm with weight ``(1 + |xi|^2)^(s/2)``, or ``|xi|^s`` when homogeneous."""
    coeffs = field.coefficients()
    if homogeneous:
        xi = field.grid.xi_abs
        weight = np.where(xi > 0, xi, 0.0) ** s if s != 0 else np.ones_like(xi)
    else:
        weight = (1.0 + field.grid.xi_squared) ** (s / 2)
    return float(np.sqrt(np.sum(np.abs(weight * coeffs) ** 2)))


def lp_norm(field: Field, p: float) -> float:
    mod = np.abs(field.values)
    if np.isinf(p):
        return float(mod.max())
    return float((np.sum(mod**p) * field.grid.cell_area) ** (1.0 / p))


def mass(field: Field) -> float:
    return lp_norm(field, 2) ** 2


def make_gaussian(grid: Grid, amplitude: float, width: float) -> Field:
    """``A exp(-|x - x_c|^2 / (2 sigma^2))`` centred on the torus."""
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    if width > grid.L / 8:
        raise ValueError(f"domain truncation unsafe: width {width} > L/8 = {grid.L / 8}")
    x, y = grid.coords
    c = grid.L / 2
    r2 = (x - c) ** 2 + (y - c) ** 2
    return Field(grid, amplitude * np.exp(-r2 / (2 * width**2)))


def make_plane_wave(grid: Grid, amplitude: float, mode: tuple[int, int]) -> Field:
    """``A exp(i k.x)`` with ``k = mode * 2 pi / L``."""
    x, y = grid.coords
    kx, ky = grid.k0 * mode[0], grid.k0 * mode[1]
    return Field(grid, amplitude * np.exp(1j * (kx * x + ky * y)))


def random_field(grid: Grid, rng: np.random.Generator, band: float | None = None) -> Field:
    """Complex Gaussian noise, optionally band-limited to ``|xi| <= band``."""
    values = rng.standard_normal((grid.n, grid.n)) + 1j * rng.standard_normal((grid.n, grid.n))
    field = Field(grid, values)
    return project_low(field, band) if band is not None else field


def spectral_tail_fraction(field: Field, fraction: float = 2.0 / 3.0) -> float:
    """Share of ``sum |u_hat|^2`` sitting beyond ``fraction * Nyquist``."""
    energy = np.abs(field.coefficients()) ** 2
    total = energy.sum()
    if total == 0:
        return 0.0
    return float(energy[field.grid.xi_abs > fraction * field.grid.nyquist].sum() / total)


def spectrum_shells(field: Field) -> list[tuple[int, float]]:
    """Energy summed over integer shells of ``|xi| / (2 pi / L)``."""
    energy = np.abs(field.coefficients()) ** 2
    shell = np.rint(field.grid.xi_abs / field.grid.k0).astype(int)
    totals = np.bincount(shell.ravel(), weights=energy.ravel())
    return [(int(i), float(e)) for i, e in enumerate(totals)]


def write_snapshot(path: str | Path, field: Field) -> None:
    """Binary dump: ``n, L`` then ``n*n`` (re, im) pairs, row-major, little-endian f64."""
    header = np.array([field.grid.n, field.grid.L], dtype="<f8")
    body = np.empty((field.grid.n, field.grid.n, 2), dtype="<f8")
    body[..., 0] = field.values.real
    body[..., 1] = field.values.imag
    Path(path).write_bytes(header.tobytes() + body.tobytes())


def read_snapshot(path: str | Path) -> Field:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    n, L = int(raw[0]), float(raw[1])
    pairs = raw[2:].reshape(n, n, 2)
    return Field(Grid(n, L), pairs[..., 0] + 1j * pairs[..., 1])


def write_spectrum_csv(path: str | Path, field: Field) -> None:
    lines = ["shell_k,energy"]
    k0 = field.grid.k0
    lines += [f"{i * k0:.17g},{e:.17g}" for i, e in spectrum_shells(field)]
    Path(path).write_text("\n".join(lines) + "\n")
