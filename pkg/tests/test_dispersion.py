import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmnls import dispersion as dsp

TWO_SEG = dsp.piecewise([0.0, 0.5, 1.0], [3.0, -1.0])
POS = dsp.piecewise([0.0, 0.5, 1.0], [2.0, 1.0])
FOUR_SEG = dsp.piecewise([0.0, 0.2, 0.45, 0.7, 1.0], [4.0, -2.0, 0.5, 3.0])
FOUR_POS = dsp.piecewise([0.0, 0.1, 0.4, 0.8, 1.0], [0.5, 3.0, 1.0, 2.5])
ONE = dsp.DispersionMap.constant(1.0)


# ---- independent oracles (no use of the package's closed forms) ----

def _gamma_oracle(bps, vals, s):
    s = np.mod(s, 1.0)
    idx = np.searchsorted(np.asarray(bps), s, side="right") - 1
    return np.asarray(vals)[idx]


def _midpoint(bps, vals, eps, t0, t, n=10**6):
    """Composite midpoint rule with 10^6 cells, split at the jumps of gamma(./eps)."""
    jumps = [eps * (k + b) for k in range(int(np.floor(t0 / eps)) - 1, int(np.ceil(t / eps)) + 1) for b in bps]
    edges = np.unique([t0, t] + [j for j in jumps if t0 < j < t])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        m = max(1, int(round(n * (b - a) / (t - t0))))
        h = (b - a) / m
        mids = a + h * (np.arange(m) + 0.5)
        total += float(np.sum(_gamma_oracle(bps, vals, mids / eps)) * h)
    return total


def _bisect(f, target, lo, hi, tol=1e-13):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---- validation ----

def test_constant_map_accepted():
    info = dsp.validate_admissible(ONE)
    assert info.sup_gamma == 1.0
    assert info.segment_count == 1


def test_two_segment_map_accepted():
    info = dsp.validate_admissible(TWO_SEG)
    assert info.sup_gamma == 3.0
    assert info.sup_inverse_gamma == 1.0
    assert info.segment_count == 2


def test_zero_segment_rejected():
    with pytest.raises(dsp.AdmissibilityError, match="1/gamma unbounded"):
        dsp.piecewise([0.0, 0.5, 1.0], [3.0, 0.0])


def test_non_monotone_breakpoints_rejected():
    with pytest.raises(dsp.AdmissibilityError, match="not strictly increasing"):
        dsp.piecewise([0.0, 0.6, 0.4, 1.0], [1.0, 2.0, 3.0])


def test_bad_endpoints_rejected():
    with pytest.raises(dsp.AdmissibilityError, match="start at 0 and end at 1"):
        dsp.piecewise([0.1, 0.5, 1.0], [1.0, 2.0])


def test_map_literal():
    g = dsp.from_literal([[0.0, 3.0], [0.5, -1.0]])
    assert g == TWO_SEG
    assert g.to_literal() == [[0.0, 3.0], [0.5, -1.0]]


# ---- average / evaluate ----

@pytest.mark.parametrize("gamma, expected", [(ONE, 1.0), (TWO_SEG, 1.0), (POS, 1.5)])
def test_average(gamma, expected):
    assert dsp.average(gamma) == pytest.approx(expected, abs=1e-15)


def test_evaluate_examples():
    assert dsp.evaluate(TWO_SEG, 1.25) == 3.0
    assert dsp.evaluate(TWO_SEG, 0.5) == -1.0
    assert dsp.evaluate(ONE, 17.3) == 1.0
    assert dsp.evaluate(TWO_SEG, -0.25) == -1.0


@given(st.integers(-50 * 1024, 50 * 1024))
def test_evaluate_periodic(k):
    t = k / 1024  # dyadic, so t + 1 is exact
    assert dsp.evaluate(FOUR_SEG, t + 1.0) == dsp.evaluate(FOUR_SEG, t)


# ---- gamma_integral ----

def test_gamma_integral_constant():
    two = dsp.DispersionMap.constant(2.0)
    for eps in (1.0, 0.3, 0.01):
        assert dsp.gamma_integral(two, eps, 0.0, 3.0) == pytest.approx(6.0, abs=1e-12)


def test_gamma_integral_quadrature_oracle():
    oracle = _midpoint([0.0, 0.5, 1.0], [3.0, -1.0], 1.0, 0.0, 0.75)
    assert oracle == pytest.approx(1.25, abs=1e-9)
    assert dsp.gamma_integral(TWO_SEG, 1.0, 0.0, 0.75) == pytest.approx(oracle, abs=1e-9)


def test_gamma_integral_quadrature_oracle_four_segments():
    oracle = _midpoint(list(FOUR_SEG.breakpoints), list(FOUR_SEG.values), 0.13, -0.41, 1.7)
    assert dsp.gamma_integral(FOUR_SEG, 0.13, -0.41, 1.7) == pytest.approx(oracle, abs=1e-9)


def test_gamma_integral_empty_interval():
    for g in (ONE, TWO_SEG, FOUR_SEG):
        assert dsp.gamma_integral(g, 0.3, 1.234, 1.234) == 0.0


triples = st.tuples(*(st.floats(-20, 20, allow_nan=False) for _ in range(3)))


@settings(max_examples=1000, deadline=None)
@given(triples, st.sampled_from([1.0, 0.3, 0.1, 0.03]))
def test_gamma_integral_additive_and_antisymmetric(tst, eps):
    t0, s, t = tst
    g = FOUR_SEG
    whole = dsp.gamma_integral(g, eps, t0, t)
    assert abs(dsp.gamma_integral(g, eps, s, t) + dsp.gamma_integral(g, eps, t0, s) - whole) <= 1e-12
    assert abs(whole + dsp.gamma_integral(g, eps, t, t0)) <= 1e-12


@given(st.integers(-1000, 1000), st.sampled_from([1.0, 0.3, 0.1, 0.03]))
def test_full_period_integral(k, eps):
    t0 = k * eps
    for g in (TWO_SEG, POS, FOUR_SEG):
        assert dsp.gamma_integral(g, eps, t0, t0 + eps) == pytest.approx(eps * dsp.average(g), abs=1e-12)


# ---- deviation bounds ----

def _dense_sup(gamma, eps, t0, horizon, n=2_000_001):
    t = np.linspace(t0, t0 + horizon, n)
    return float(np.max(np.abs(dsp.gamma_integral(gamma, eps, t0, t) - dsp.average(gamma) * (t - t0))))


def test_deviation_constant_map():
    rep = dsp.deviation_sup(ONE, 0.1, 0.0, 10.0)
    assert rep.sup_deviation == pytest.approx(0.0, abs=1e-12)
    assert rep.bound == pytest.approx(0.8)
    assert rep.passed


def test_deviation_two_segment():
    rep = dsp.deviation_sup(TWO_SEG, 0.1, 0.0, 10.0)
    oracle = _dense_sup(TWO_SEG, 0.1, 0.0, 10.0)
    assert oracle == pytest.approx(0.1, abs=1e-5)
    assert rep.sup_deviation == pytest.approx(0.1, abs=1e-12)
    assert rep.bound == pytest.approx(1.6)
    assert rep.passed


def test_deviation_positive_map():
    rep = dsp.deviation_sup(POS, 0.05, 0.0, 10.0)
    assert _dense_sup(POS, 0.05, 0.0, 10.0) == pytest.approx(0.0125, abs=1e-5)
    assert rep.sup_deviation == pytest.approx(0.0125, abs=1e-12)
    assert rep.bound == pytest.approx(0.7)
    assert rep.passed


def test_deviation_kink_sampling_beats_dense_sampling():
    # sup is attained at breakpoint images, so exact sampling dominates any dense grid
    for t0 in (-3.3, 0.0, 2.71):
        exact = dsp.deviation_sup(FOUR_SEG, 0.03, t0, 10.0).sup_deviation
        dense = _dense_sup(FOUR_SEG, 0.03, t0, 10.0, n=200_001)
        assert dense <= exact + 1e-12
        assert exact - dense < 1e-3


@pytest.mark.parametrize("gamma", [ONE, TWO_SEG, POS, FOUR_SEG])
@pytest.mark.parametrize("eps", [1.0, 0.3, 0.1, 0.03])
def test_deviation_bound_holds(gamma, eps):
    rng = np.random.default_rng(7)
    for t0 in rng.uniform(-10, 10, size=10):
        assert dsp.deviation_sup(gamma, eps, float(t0), 10.0).passed


# ---- inverse_gamma / c deviation ----

def test_inverse_gamma_bisection_oracle():
    oracle = _bisect(lambda c: dsp.gamma_integral(POS, 1.0, 0.0, c), 1.0, 0.0, 2.0)
    assert oracle == pytest.approx(0.5, abs=1e-12)
    assert dsp.inverse_gamma(POS, 1.0, 1.0) == pytest.approx(oracle, abs=1e-12)


def test_inverse_gamma_at_zero():
    for g in (ONE, POS, FOUR_POS):
        assert dsp.inverse_gamma(g, 0.37, 0.0) == 0.0


def test_inverse_gamma_round_trip():
    rng = np.random.default_rng(11)
    for g in (POS, FOUR_POS, ONE):
        for eps in (1.0, 0.1, 0.03):
            tau = rng.uniform(-30, 30, size=1000)
            back = dsp.gamma_integral(g, eps, 0.0, dsp.inverse_gamma(g, eps, tau))
            assert np.max(np.abs(back - tau)) <= 1e-12


def test_inverse_gamma_strictly_increasing():
    tau = np.linspace(-5, 5, 10001)
    assert np.all(np.diff(dsp.inverse_gamma(FOUR_POS, 0.1, tau)) > 0)


def test_inverse_gamma_rejects_sign_changing_map():
    with pytest.raises(ValueError, match="inverse undefined"):
        dsp.inverse_gamma(TWO_SEG, 0.1, 1.0)


def test_c_deviation_constant_map():
    assert dsp.c_deviation_sup(ONE, 0.1, 10.0).sup_deviation == pytest.approx(0.0, abs=1e-12)


def test_c_deviation_oracle():
    rep = dsp.c_deviation_sup(POS, 0.1, 10.0)
    tau = np.linspace(0, 10, 2_000_001)
    dense = np.max(np.abs(dsp.inverse_gamma(POS, 0.1, tau) - tau / 1.5))
    assert dense == pytest.approx(0.1 / 6, abs=1e-5)
    assert rep.sup_deviation == pytest.approx(0.1 / 6, abs=1e-12)
    assert rep.passed


@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05])
def test_c_deviation_halving(eps):
    ratio = dsp.c_deviation_sup(POS, eps, 10.0).sup_deviation / dsp.c_deviation_sup(POS, eps / 2, 10.0).sup_deviation
    assert ratio == pytest.approx(2.0, abs=1e-9)
