import numpy as np
import pytest

from dmnls import dispersion as dsp
from dmnls import solver as sv
from dmnls import spectral as sp

GRID = sp.Grid(64, 16.0)
TWO_SEG = dsp.piecewise([0.0, 0.5, 1.0], [3.0, -1.0])
POS = dsp.piecewise([0.0, 0.5, 1.0], [2.0, 1.0])
ONE = dsp.DispersionMap.constant(1.0)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _plane_wave_exact(A, mode, D, B):
    """``A e^{i(k.x - theta)}`` with ``theta = D |k|^2 + A^2 B``."""
    k2 = GRID.k0**2 * (mode[0] ** 2 + mode[1] ** 2)
    return sp.make_plane_wave(GRID, A, mode).values * np.exp(-1j * (D * k2 + A**2 * B))


# (equation, dispersion integral over [0, T], nonlinear integral over [0, T])
def _kinds(T):
    return [
        (sv.fast_managed(TWO_SEG, 0.07), dsp.gamma_integral(TWO_SEG, 0.07, 0.0, T), T),
        (sv.averaged(TWO_SEG), T, T),
        (sv.rescaled_eps(POS, 0.07), T, dsp.inverse_gamma(POS, 0.07, T)),
        (sv.rescaled_limit(POS), T, T / 1.5),
    ]


def test_equation_spec_integrals():
    fm, av, re, rl = (eq for eq, _, _ in _kinds(1.0))
    assert fm.dispersion_integral(0.1, 0.4) == dsp.gamma_integral(TWO_SEG, 0.07, 0.1, 0.4)
    assert fm.nonlinear_integral(0.1, 0.4) == pytest.approx(0.3)
    assert av.dispersion_integral(0.1, 0.4) == pytest.approx(0.3)
    assert re.dispersion_integral(0.1, 0.4) == pytest.approx(0.3)
    assert re.nonlinear_integral(0.1, 0.4) == pytest.approx(
        dsp.inverse_gamma(POS, 0.07, 0.4) - dsp.inverse_gamma(POS, 0.07, 0.1)
    )
    assert rl.nonlinear_integral(0.1, 0.4) == pytest.approx(0.2)


def test_equation_spec_validation():
    with pytest.raises(ValueError):
        sv.EquationSpec(sv.Kind.FAST_MANAGED, TWO_SEG)
    with pytest.raises(ValueError):
        sv.rescaled_eps(TWO_SEG, 0.1)
    with pytest.raises(ValueError):
        sv.rescaled_limit(TWO_SEG)
    with pytest.raises(ValueError):
        sv.averaged(dsp.piecewise([0.0, 0.5, 1.0], [1.0, -1.0]))


def test_nonlinear_step_constant_field():
    A, h = 1.4, 0.3
    f = sp.Field(GRID, np.full((64, 64), A))
    out = sv.nonlinear_phase_step(f, h)
    assert np.allclose(out.values, A * np.exp(-1j * h * A**2), rtol=0, atol=1e-15)
    assert np.array_equal(sv.nonlinear_phase_step(f, 0.0).values, f.values)


def test_nonlinear_step_preserves_modulus():
    f = sp.random_field(GRID, np.random.default_rng(0))
    out = sv.nonlinear_phase_step(f, 0.77)
    assert np.max(np.abs(np.abs(out.values) - np.abs(f.values))) <= 1e-15 * np.max(np.abs(f.values)) * 4


def test_strang_step_plane_wave_fast_managed():
    A, mode, t, h = 0.9, (1, 2), 0.13, 0.05
    f = sp.make_plane_wave(GRID, A, mode)
    eq = sv.fast_managed(TWO_SEG, 0.03)
    out = sv.strang_step(f, eq, t, h)
    k2 = 5 * GRID.k0**2
    phase = dsp.gamma_integral(TWO_SEG, 0.03, t, t + h) * k2 + A**2 * h
    assert _rel(out.values, f.values * np.exp(-1j * phase)) <= 1e-12


def test_strang_step_constant_field_averaged():
    A, h = 1.2, 0.01
    f = sp.Field(GRID, np.full((64, 64), A))
    out = sv.strang_step(f, sv.averaged(TWO_SEG), 0.0, h)
    assert np.max(np.abs(out.values - A * np.exp(-1j * A**2 * h))) <= 1e-14


def test_strang_step_zero_and_bad_step():
    zero = sp.Field(GRID, np.zeros((64, 64)))
    assert np.all(sv.strang_step(zero, sv.averaged(ONE), 0.0, 0.1).values == 0)
    with pytest.raises(ValueError):
        sv.strang_step(zero, sv.averaged(ONE), 0.0, 0.0)


@pytest.mark.parametrize("index", range(4))
def test_evolve_plane_wave_all_kinds(index):
    T, A, mode = 1.0, 0.8, (1, 0)
    eq, D, B = _kinds(T)[index]
    times = np.linspace(0.0, T, 1001)
    traj = sv.evolve(eq, sp.make_plane_wave(GRID, A, mode), times)
    assert _rel(traj.snapshot(T).values, _plane_wave_exact(A, mode, D, B)) <= 1e-10
    assert traj.mass_drift <= 1e-10


def test_evolve_zero_data():
    zero = sp.Field(GRID, np.zeros((64, 64)))
    traj = sv.evolve(sv.fast_managed(TWO_SEG, 0.1), zero, np.linspace(0, 1, 51))
    assert np.all(traj.per_step_norms[:, 1:] == 0)
    assert np.all(traj.snapshot(1.0).values == 0)


def _gauss():
    return sp.make_gaussian(GRID, 1.0, 1.0)


def test_strang_self_convergence():
    eq = sv.averaged(TWO_SEG)
    finals = [sv.evolve(eq, _gauss(), np.linspace(0, 1, m + 1)).snapshot(1.0).values for m in (25, 50, 100)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert 3.6 <= ratio <= 4.4
    assert 1.8 <= np.log2(ratio) <= 2.2


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.013])
def test_constant_map_fast_managed_equals_averaged(eps):
    g = dsp.DispersionMap.constant(1.5)
    times = np.linspace(0, 1, 201)
    a = sv.evolve(sv.fast_managed(g, eps), _gauss(), times).snapshot(1.0).values
    b = sv.evolve(sv.averaged(g), _gauss(), times).snapshot(1.0).values
    assert np.max(np.abs(a - b)) <= 1e-12


def test_mass_conservation_gaussian():
    traj = sv.evolve(sv.fast_managed(TWO_SEG, 0.05), _gauss(), np.linspace(0, 1, 401))
    l2 = traj.per_step_norms[:, 1]
    assert np.all(np.abs(l2 / l2[0] - 1) <= 1e-10)
    assert not traj.warnings


def test_non_uniform_grid():
    times = np.sort(np.concatenate([[0.0, 1.0], np.random.default_rng(3).uniform(0, 1, 300)]))
    traj = sv.evolve(sv.fast_managed(TWO_SEG, 0.05), sp.make_plane_wave(GRID, 0.8, (0, 1)), times)
    D = dsp.gamma_integral(TWO_SEG, 0.05, 0.0, 1.0)
    assert _rel(traj.snapshot(1.0).values, _plane_wave_exact(0.8, (0, 1), D, 1.0)) <= 1e-10


def test_sample_times_and_snapshots():
    times = np.linspace(0, 1, 11)
    traj = sv.evolve(sv.averaged(ONE), _gauss(), times, sample_times=times[::5])
    assert traj.sample_times() == [0.0, 0.5, 1.0]
    assert set(traj.sample_times()) <= set(times.tolist())
    with pytest.raises(ValueError, match="not on the time grid"):
        sv.evolve(sv.averaged(ONE), _gauss(), times, sample_times=[0.55])


def test_bad_time_grids():
    with pytest.raises(ValueError, match="step size <= 0"):
        sv.evolve(sv.averaged(ONE), _gauss(), [0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError, match="start at 0"):
        sv.evolve(sv.averaged(ONE), _gauss(), [0.1, 0.5])


def test_nan_aborts_with_time():
    huge = sp.Field(GRID, np.full((64, 64), 1e170))
    with pytest.raises(sv.NumericalAbort) as info:
        sv.evolve(sv.averaged(ONE), huge, np.linspace(0, 1, 11))
    # |u|^4 already overflows, so the run stops at the first node
    assert info.value.time == 0.0
    assert "t=0.0" in str(info.value)


def test_resolution_warning():
    rough = sp.random_field(GRID, np.random.default_rng(1))
    with pytest.warns(sv.ResolutionWarning):
        traj = sv.evolve(sv.averaged(ONE), rough * 0.01, np.linspace(0, 0.1, 3))
    assert any("spectral tail" in w for w in traj.warnings)


def test_image_grid_identity_map():
    taus = np.linspace(0, 1, 101)
    eq = sv.fast_managed(ONE, 0.1)
    a = sv.evolve_on_image_grid(eq, _gauss(), taus)
    b = sv.evolve(eq, _gauss(), taus)
    assert np.array_equal(a.time_grid, b.time_grid)
    assert np.max(np.abs(a.snapshot(1.0).values - b.snapshot(1.0).values)) <= 1e-14


def test_image_grid_stamps():
    eq = sv.fast_managed(POS, 1.0)
    traj = sv.evolve_on_image_grid(eq, _gauss(), [0.0, 0.5, 1.0])
    assert traj.solver_times[-1] == pytest.approx(0.5, abs=1e-15)
    assert traj.time_grid[-1] == 1.0


def test_image_grid_plane_wave():
    A, mode, eps = 0.7, (2, 0), 0.1
    taus = np.linspace(0, 1.5, 1501)
    traj = sv.evolve_on_image_grid(sv.fast_managed(POS, eps), sp.make_plane_wave(GRID, A, mode), taus,
                                   sample_times=taus[::300])
    for tau in taus[::300]:
        c = dsp.inverse_gamma(POS, eps, tau)
        D = dsp.gamma_integral(POS, eps, 0.0, c)
        assert _rel(traj.snapshot(tau).values, _plane_wave_exact(A, mode, D, c)) <= 1e-10


def test_evolve_difference_matches_two_runs():
    times = np.linspace(0, 1, 101)
    eq_a, eq_b = sv.fast_managed(TWO_SEG, 0.1), sv.averaged(TWO_SEG)
    diff = sv.evolve_difference(eq_a, eq_b, _gauss(), times)
    a = sv.evolve(eq_a, _gauss(), times).snapshot(1.0).values
    b = sv.evolve(eq_b, _gauss(), times).snapshot(1.0).values
    assert np.max(np.abs(diff.snapshot(1.0).values - (a - b))) <= 1e-14
    assert diff.per_step_norms[-1, 1] == pytest.approx(np.sqrt(np.sum(np.abs(a - b) ** 2) * GRID.cell_area))
    assert not diff.warnings


def test_trajectory_csv(tmp_path):
    traj = sv.evolve(sv.averaged(ONE), _gauss(), np.linspace(0, 1, 5))
    path = tmp_path / "traj.csv"
    traj.to_csv(path, "config line")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config line"
    assert lines[1] == "t,mass,l4norm"
    assert len(lines) == 7
    t, m, _ = map(float, lines[-1].split(","))
    assert t == 1.0
    assert m == pytest.approx(np.pi, rel=1e-9)
