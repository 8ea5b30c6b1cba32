import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from photon_atom import (AtomParams, EnvelopeShape, backward_rate,
                         binned_delta_analytic, delta_rate,
                         excited_population_decaying, excited_population_rising,
                         extinction_closed_form, extinction_numeric,
                         forward_rate, make_decaying, make_rising,
                         make_tabulated, peak_excitation_rising,
                         solve_amplitude_ode)
from photon_atom.dynamics import write_series_csv, read_series_csv
from photon_atom.envelopes import analytic_amplitude, default_grid
from photon_atom.errors import DataFormatError, StepSizeError

TAU0 = 26.2
TAU_P = 13.3
LAM = 0.033


# ---------------------------------------------------------------------------
# independent pointwise oracles (closed forms written out separately from
# the production code)
# ---------------------------------------------------------------------------

def oracle_pe_decaying(t, tau0=TAU0, tau_p=TAU_P, lam=LAM):
    a, b = 1 / (2 * tau0), 1 / (2 * tau_p)
    pref = 4 * lam * tau0 * tau_p / (tau0 - tau_p) ** 2
    return pref * (np.exp(-a * t) - np.exp(-b * t)) ** 2 if t >= 0 else 0.0


def oracle_pe_rising(t, tau0=TAU0, tau_p=TAU_P, lam=LAM):
    p0 = 4 * lam * tau0 * tau_p / (tau0 + tau_p) ** 2
    return p0 * (np.exp(t / tau_p) if t < 0 else np.exp(-t / tau0))


def oracle_delta_decaying(t, tau0=TAU0, tau_p=TAU_P, lam=LAM):
    if t < 0:
        return 0.0
    a, b = 1 / (2 * tau0), 1 / (2 * tau_p)
    pref = 4 * lam * tau0 * tau_p / (tau0 - tau_p) ** 2
    g = np.exp(-a * t) - np.exp(-b * t)
    pdot = 2 * pref * g * (-a * np.exp(-a * t) + b * np.exp(-b * t))
    return pdot + (1 - lam) / tau0 * oracle_pe_decaying(t, tau0, tau_p, lam)


def oracle_delta_rising(t, tau0=TAU0, tau_p=TAU_P, lam=LAM):
    p = oracle_pe_rising(t, tau0, tau_p, lam)
    if t < 0:
        return p * (1 / tau_p + (1 - lam) / tau0)
    return -lam * p / tau0


# ---------------------------------------------------------------------------
# closed-form populations
# ---------------------------------------------------------------------------

def test_decaying_peak_matched_full_overlap():
    # overlap 1, tau_p = tau0: maximum 4 e^-2 at t = 2 tau0
    atom = AtomParams(TAU0, 1.0)
    t = np.linspace(0, 10 * TAU0, 20001)
    tr = excited_population_decaying(atom, TAU0, t)
    assert tr.peak == pytest.approx(4 * np.exp(-2), abs=1e-6)
    assert tr.peak_time == pytest.approx(2 * TAU0, abs=0.05)


def test_decaying_peak_reference_params(atom):
    # numerical maximization of the closed form as oracle
    res = minimize_scalar(lambda t: -oracle_pe_decaying(t), bounds=(1, 120),
                          method="bounded", options={"xatol": 1e-10})
    assert -res.fun == pytest.approx(0.016556, abs=2e-6)
    assert res.x == pytest.approx(36.63, abs=0.05)
    t = np.linspace(0, 150, 150001)
    tr = excited_population_decaying(atom, TAU_P, t)
    assert tr.peak == pytest.approx(-res.fun, abs=1e-8)
    assert tr.peak_time == pytest.approx(res.x, abs=0.01)


def test_population_zero_before_arrival(atom):
    t = np.linspace(-50, 50, 1001)
    tr = excited_population_decaying(atom, TAU_P, t)
    assert np.all(tr.p_e[t < 0] == 0)


def test_rising_peak_at_zero(atom):
    grid = default_grid(TAU_P)
    tr = excited_population_rising(atom, TAU_P, grid)
    assert tr.peak_time == 0.0
    expected = 4 * LAM * TAU0 * TAU_P / (TAU_P + TAU0) ** 2
    assert tr.peak == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.0295, abs=5e-5)
    assert peak_excitation_rising(atom, TAU_P) == pytest.approx(expected)


def test_perfect_excitation_limit():
    atom = AtomParams(TAU0, 1.0)
    grid = default_grid(TAU0)
    tr = excited_population_rising(atom, TAU0, grid)
    assert tr.peak == pytest.approx(1.0, abs=1e-9)


def test_peak_ratio_rising_over_decaying(atom):
    t = np.linspace(0, 150, 150001)
    down = excited_population_decaying(atom, TAU_P, t).peak
    up = peak_excitation_rising(atom, TAU_P)
    assert up / down - 1 == pytest.approx(0.78, abs=0.01)


def test_branch_continuity_near_degenerate(atom):
    # the two branches of the decaying solution approach each other
    # linearly in (tau_p - tau0); measured agreement at 1e-4 ns offset is
    # ~3.7e-8 absolute, reaching 1e-8 at 1e-5 ns
    t = np.linspace(0, 200, 20001)
    deg = excited_population_decaying(atom, TAU0, t).p_e
    for eps, tol in [(1e-4, 5e-8), (1e-5, 1e-8)]:
        gen = excited_population_decaying(atom, TAU0 + eps, t).p_e
        assert np.max(np.abs(gen - deg)) < tol


def test_population_bounds_property():
    for lam in (0.01, 0.2, 0.9, 1.0):
        for tau_p in (2.0, 13.3, 26.2, 70.0):
            atom = AtomParams(TAU0, lam)
            t = np.linspace(-100, 400, 5001)
            for tr in (excited_population_decaying(atom, tau_p, t),
                       excited_population_rising(atom, tau_p, t)):
                assert np.all(tr.p_e >= 0) and np.all(tr.p_e <= 1 + 1e-12)


def test_peak_ordering_rising_beats_decaying():
    t = np.linspace(0, 600, 60001)
    for lam in (0.01, 0.1, 0.5, 1.0):
        for tau_p in (3.0, 13.3, 26.2, 60.0):
            atom = AtomParams(TAU0, lam)
            down = excited_population_decaying(atom, tau_p, t).peak
            up = peak_excitation_rising(atom, tau_p)
            assert up > down


def test_invalid_atom_params():
    with pytest.raises(ValueError):
        AtomParams(-1.0, 0.5)
    with pytest.raises(ValueError):
        AtomParams(TAU0, 1.5)
    with pytest.raises(ValueError):
        AtomParams(TAU0, -0.1)


# ---------------------------------------------------------------------------
# amplitude equation of motion
# ---------------------------------------------------------------------------

def test_ode_matches_analytic_decaying(atom, fine_grid):
    env = make_decaying(TAU_P, fine_grid)
    tr = solve_amplitude_ode(atom, env)
    ana = excited_population_decaying(atom, TAU_P, fine_grid)
    assert np.max(np.abs(tr.p_e - ana.p_e)) < 1e-6


def test_ode_matches_analytic_rising(atom, fine_grid):
    env = make_rising(TAU_P, fine_grid)
    tr = solve_amplitude_ode(atom, env)
    ana = excited_population_rising(atom, TAU_P, fine_grid)
    assert np.max(np.abs(tr.p_e - ana.p_e)) < 1e-6


def test_ode_fourth_order_convergence(atom):
    # coarse steps where truncation dominates double-precision noise
    errs = []
    for dt in (0.7, 0.35):
        n = int(round(8 * TAU_P / dt))
        grid = dt * np.arange(-n, n + 1)
        env = make_decaying(TAU_P, grid)
        tr = solve_amplitude_ode(atom, env, check_step=False)
        ana = excited_population_decaying(atom, TAU_P, grid)
        errs.append(np.max(np.abs(tr.p_e - ana.p_e)))
    assert errs[0] / errs[1] >= 8.0


def test_ode_no_coupling():
    atom = AtomParams(TAU0, 0.0)
    env = make_rising(TAU_P)
    tr = solve_amplitude_ode(atom, env)
    assert np.all(tr.p_e == 0)


def test_ode_rejects_coarse_tabulated_grid(atom):
    # a 5 ns step badly underresolves a 13.3 ns envelope
    grid = 5.0 * np.arange(-40, 41)
    samples = analytic_amplitude(EnvelopeShape.EXP_DECAYING, TAU_P, grid)
    env = make_tabulated(samples, grid, tau_p=TAU_P)
    with pytest.raises(StepSizeError):
        solve_amplitude_ode(atom, env)


def test_ode_tabulated_matches_shape_aware(atom):
    # the same envelope fed as raw samples integrates to the same trace
    grid = default_grid(TAU_P, step=0.01)
    env = make_decaying(TAU_P, grid)
    tab = make_tabulated(env.amplitude.copy(), grid, tau_p=TAU_P)
    tr_env = solve_amplitude_ode(atom, env)
    tr_tab = solve_amplitude_ode(atom, tab)
    assert np.max(np.abs(tr_env.p_e - tr_tab.p_e)) < 1e-5


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def test_forward_rate_no_atom_limit():
    atom = AtomParams(TAU0, 0.0)
    env = make_decaying(TAU_P)
    tr = solve_amplitude_ode(atom, env)
    rf = forward_rate(atom, env, tr)
    assert np.allclose(rf, np.abs(env.amplitude) ** 2, atol=1e-15)


def test_forward_rate_full_absorption_reemission():
    # overlap 1, matched rising photon: complete destructive interference
    # while the photon arrives, then full forward re-emission; no net loss
    atom = AtomParams(TAU0, 1.0)
    grid = default_grid(TAU0, step=0.01, span=20.0)
    env = make_rising(TAU0, grid)
    tr = solve_amplitude_ode(atom, env)
    rf = forward_rate(atom, env, tr)
    assert np.all(rf[grid < 0] < 1e-5)
    assert np.sum(rf) * env.dt == pytest.approx(1.0, abs=1e-4)
    assert extinction_closed_form(atom, TAU0) == 0.0


def test_forward_extinction_reference_value(atom):
    grid = default_grid(TAU_P, step=0.01, span=20.0)
    env = make_decaying(TAU_P, grid)
    tr = solve_amplitude_ode(atom, env)
    rf = forward_rate(atom, env, tr)
    assert 1.0 - np.sum(rf) * env.dt == pytest.approx(0.0429, abs=2e-4)


def test_forward_rate_grid_mismatch(atom):
    env = make_decaying(TAU_P)
    tr = excited_population_decaying(atom, TAU_P, env.grid + 1.0)
    with pytest.raises(DataFormatError):
        forward_rate(atom, env, tr)


def test_probability_conservation(atom):
    # integral R_f0 = 1 and integral R_f = 1 - epsilon on long fine grids
    eps_cf = extinction_closed_form(atom, TAU_P)
    for make, shape in ((make_decaying, EnvelopeShape.EXP_DECAYING),
                        (make_rising, EnvelopeShape.EXP_RISING)):
        grid = default_grid(TAU_P, step=0.01, span=20.0)
        env = make(TAU_P, grid)
        tr = solve_amplitude_ode(atom, env)
        rf0 = np.abs(env.amplitude) ** 2
        rf = forward_rate(atom, env, tr)
        assert np.sum(rf0) * env.dt == pytest.approx(1.0, abs=1e-9)
        assert 1.0 - np.sum(rf) * env.dt == pytest.approx(eps_cf, abs=1e-4)


def test_rate_equation_residual(atom, fine_grid):
    # dP/dt computed from the equation of motion satisfies
    # dP/dt = delta - (1-L) P / tau0 identically
    for make, shape in ((make_decaying, EnvelopeShape.EXP_DECAYING),
                        (make_rising, EnvelopeShape.EXP_RISING)):
        env = make(TAU_P, fine_grid)
        tr = solve_amplitude_ode(atom, env)
        e = tr.amplitude
        xi = analytic_amplitude(shape, TAU_P, fine_grid)
        c = np.sqrt(atom.overlap / atom.tau0)
        pdot = 2 * np.real(np.conj(e) * (-e / (2 * atom.tau0) + c * xi))
        rf0 = np.abs(xi) ** 2
        rf = np.abs(xi - c * e) ** 2
        delta = rf0 - rf
        residual = pdot - delta + (1 - atom.overlap) * tr.p_e / atom.tau0
        assert np.max(np.abs(residual)) < 1e-8


def test_delta_rate_trivial(atom):
    r = np.array([1.0, 2.0, 3.0])
    assert np.all(delta_rate(r, r) == 0)
    with pytest.raises(DataFormatError):
        delta_rate(r, r[:2])


def test_delta_shapes_match_measurement_features(atom, fine_grid):
    # rising photon: absorption follows the envelope exp(t/tau_p) for t<0;
    # decaying photon: absorption zero at t=0, maximal near 15 ns
    env = make_rising(TAU_P, fine_grid)
    tr = solve_amplitude_ode(atom, env)
    delta_up = np.abs(env.amplitude) ** 2 - forward_rate(atom, env, tr)
    sel = (fine_grid > -60) & (fine_grid < -5)
    slope = np.polyfit(fine_grid[sel], np.log(delta_up[sel]), 1)[0]
    assert slope == pytest.approx(1.0 / TAU_P, rel=1e-3)

    env = make_decaying(TAU_P, fine_grid)
    tr = solve_amplitude_ode(atom, env)
    delta_dn = np.abs(env.amplitude) ** 2 - forward_rate(atom, env, tr)
    i0 = np.argmin(np.abs(fine_grid))
    assert abs(delta_dn[i0]) < 1e-6
    assert fine_grid[np.argmax(delta_dn)] == pytest.approx(15.07, abs=0.2)


def test_backward_rate(atom):
    grid = default_grid(TAU_P)
    tr = excited_population_rising(atom, TAU_P, grid)
    rb = backward_rate(atom, tr, 0.0126)
    i0 = np.argmin(np.abs(grid))
    # eta_b * P_e(0) / tau0 with P_e(0) = 0.0295
    assert rb[i0] == pytest.approx(0.0126 * 0.0295 / 26.2, rel=2e-3)
    assert rb[i0] == pytest.approx(1.419e-5, rel=2e-3)
    assert np.allclose(backward_rate(atom, tr, 0.0252), 2 * rb)
    zero = excited_population_rising(AtomParams(TAU0, 0.0), TAU_P, grid)
    assert np.all(backward_rate(atom, zero, 0.0126) == 0)


# ---------------------------------------------------------------------------
# extinction
# ---------------------------------------------------------------------------

def test_extinction_closed_form_reference(atom):
    eps = extinction_closed_form(atom, TAU_P)
    assert eps == pytest.approx(0.0429, abs=1e-4)


def test_extinction_closed_form_limits():
    assert extinction_closed_form(AtomParams(TAU0, 1.0), TAU_P) == 0.0
    assert extinction_closed_form(AtomParams(TAU0, 0.5), TAU0) == pytest.approx(0.5)
    # global maximum over overlap at matched tau_p
    best = max(extinction_closed_form(AtomParams(TAU0, l), TAU0)
               for l in np.linspace(0, 1, 101))
    assert best == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(min_value=0.0, max_value=1.0),
       tau_p=st.floats(min_value=0.1, max_value=200.0))
def test_extinction_bounds_property(lam, tau_p):
    eps = extinction_closed_form(AtomParams(TAU0, lam), tau_p)
    assert 0.0 <= eps <= 1.0


def _binned_series(shape, edges, atom):
    starts = edges[:-1]
    dbar = binned_delta_analytic(atom, TAU_P, shape, edges)
    return starts, dbar


def test_extinction_numeric_windows(atom):
    # quadrature oracle: integrate the pointwise delta over the actually
    # summed range (bins whose start falls inside the window)
    eps_cf = extinction_closed_form(atom, TAU_P)
    edges = np.arange(-154.0, 156.0, 2.0)

    starts, dbar = _binned_series(EnvelopeShape.EXP_DECAYING, edges, atom)
    got = extinction_numeric(starts, dbar, (-14.0, 100.0))
    want = quad(oracle_delta_decaying, -14.0, 102.0, limit=200)[0]
    assert got == pytest.approx(want, abs=1e-10)
    assert got == pytest.approx(0.0429, abs=4e-4)
    assert abs(got - eps_cf) / eps_cf < 0.01

    starts, dbar = _binned_series(EnvelopeShape.EXP_RISING, edges, atom)
    got_up = extinction_numeric(starts, dbar, (-100.0, 14.0))
    want_up = (quad(oracle_delta_rising, -100.0, 0.0, limit=200)[0]
               + quad(oracle_delta_rising, 0.0, 16.0, limit=200)[0])
    assert got_up == pytest.approx(want_up, abs=1e-10)
    # the rising window clips the negative re-emission tail: +1.3% bias
    assert abs(got_up - eps_cf) / eps_cf < 0.015


def test_extinction_numeric_empty_window(atom):
    edges = np.arange(-154.0, 156.0, 2.0)
    starts, dbar = _binned_series(EnvelopeShape.EXP_DECAYING, edges, atom)
    assert extinction_numeric(starts, dbar, (500.0, 600.0)) == 0.0


def test_extinction_shape_independence_full_support(atom):
    # over the full support rising and decaying extinctions coincide
    edges = np.arange(-40 * TAU_P, 40 * TAU_P + 2.0, 2.0)
    eps = {}
    for shape in (EnvelopeShape.EXP_DECAYING, EnvelopeShape.EXP_RISING):
        starts, dbar = _binned_series(shape, edges, atom)
        eps[shape] = extinction_numeric(starts, dbar, (edges[0], edges[-1]))
    assert abs(eps[EnvelopeShape.EXP_DECAYING] - eps[EnvelopeShape.EXP_RISING]) < 1e-6
    assert eps[EnvelopeShape.EXP_DECAYING] == pytest.approx(
        extinction_closed_form(atom, TAU_P), abs=1e-6)


def test_binned_delta_matches_quadrature(atom):
    edges = np.array([-30.0, -10.0, -2.0, 0.0, 2.0, 14.0, 60.0])
    for shape, fn in ((EnvelopeShape.EXP_DECAYING, oracle_delta_decaying),
                      (EnvelopeShape.EXP_RISING, oracle_delta_rising)):
        got = binned_delta_analytic(atom, TAU_P, shape, edges)
        for i in range(len(edges) - 1):
            want = quad(fn, edges[i], edges[i + 1], limit=200)[0] / (edges[i + 1] - edges[i])
            assert got[i] == pytest.approx(want, abs=1e-12)


def test_binned_delta_degenerate_branch():
    atom = AtomParams(TAU0, LAM)
    edges = np.linspace(0.0, 120.0, 61)
    exact = binned_delta_analytic(atom, TAU0, EnvelopeShape.EXP_DECAYING, edges)
    near = binned_delta_analytic(atom, TAU0 + 1e-5, EnvelopeShape.EXP_DECAYING, edges)
    assert np.max(np.abs(exact - near)) < 1e-8


# ---------------------------------------------------------------------------
# series CSV
# ---------------------------------------------------------------------------

def test_series_csv_round_trip(tmp_path):
    t = np.arange(0.0, 5.0, 0.5)
    v = np.sin(t)
    s = 0.1 * np.ones_like(t)
    path = tmp_path / "series.csv"
    write_series_csv(path, t, v, s, value_name="p_e", header_comment="x")
    t2, v2, s2 = read_series_csv(path)
    assert np.allclose(t2, t) and np.allclose(v2, v) and np.allclose(s2, s)
