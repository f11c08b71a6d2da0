import math

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from fraccomp.competition import (
    CompetitionState,
    PropertyViolation,
    almgren_E,
    almgren_H,
    blow_down,
    blow_up,
    doubling_check,
    energy_I,
    frequency_N,
    frequency_trace,
    growth_rate_estimate,
    homogeneous_extension,
    interaction,
    pohozaev_residual,
    positivity_margin,
    select_r_beta,
    solve_beta_system,
)
from fraccomp.geometry import GridError, ScalarField, build_half_ball_grid, make_half_ball_grid
from fraccomp.spectral import first_eigenvalue_symmetric, reflect_columns


def _state(u, v, beta=1.0, k=1):
    g = u.grid
    s = CompetitionState(u, v, beta, k, ScalarField(g.sphere, u.values[-1]),
                         ScalarField(g.sphere, v.values[-1]), 0.0)
    from dataclasses import replace
    return replace(s, energy=energy_I(s))


@pytest.fixture(scope="module")
def eig(grid_cache):
    return first_eigenvalue_symmetric(grid_cache(32, 64, 0.5), 1)


@pytest.fixture(scope="module")
def hom(eig):
    """Segregated d-homogeneous pair built from the eigen-data."""
    sph = eig.eigenfunction.grid
    hb = build_half_ball_grid(40, sph, r_min=1e-3)
    g = eig.eigenfunction.values / math.sqrt(2.0)
    u = homogeneous_extension(ScalarField(sph, g), eig.exponent_d, hb)
    v = homogeneous_extension(ScalarField(sph, reflect_columns(g)), eig.exponent_d, hb)
    return _state(u, v, beta=0.0), eig.exponent_d


@pytest.fixture(scope="module")
def solved(eig):
    hb = build_half_ball_grid(32, eig.eigenfunction.grid)
    return solve_beta_system(hb, 1, 1e3, eig)


# ---------------------------------------------------------------- extensions and energy

def test_homogeneous_extension_examples(grid_cache):
    sph = grid_cache(16, 32, 0.5)
    hb = build_half_ball_grid(8, sph)
    one = homogeneous_extension(ScalarField(sph, np.ones(sph.shape)), 0.0, hb)
    assert np.all(one.values == 1.0) and one.center == 1.0
    y = np.sin(sph.theta_nodes)[:, None] * np.ones(sph.n_phi)
    f = homogeneous_extension(ScalarField(sph, y), 1.0, hb)
    ref = (hb.r_nodes[:, None, None] * np.sin(sph.theta_nodes)[None, :, None]) * np.ones(hb.shape)
    assert np.allclose(f.values, ref, rtol=1e-14)
    assert np.array_equal(f.values[-1], y)
    with pytest.raises(ValueError):
        homogeneous_extension(ScalarField(sph, y), -0.1, hb)


def test_energy_of_zero_state(grid_cache):
    hb = build_half_ball_grid(8, grid_cache(16, 32, 0.5))
    z = ScalarField(hb, np.zeros(hb.shape))
    assert energy_I(_state(z, z, beta=5.0)) == 0.0


def test_energy_of_homogeneous_pair(hom):
    state, d = hom
    assert 2 * state.energy == pytest.approx(d, rel=0.01)


def test_energy_against_independent_quadrature(grid_cache):
    s, beta, c = 0.5, 3.0, 1.5
    a = 1 - 2 * s
    sph = grid_cache(48, 96, s)
    hb = build_half_ball_grid(48, sph, r_min=1e-3)
    r = hb.r_nodes[:, None, None]
    th = sph.theta_nodes[None, :, None]
    ph = sph.phi_nodes[None, None, :]
    # u = c + x, v = c + y: both gradients have unit length
    u = ScalarField(hb, (c + r * np.cos(th) * np.cos(ph)) * np.ones(hb.shape), c)
    v = ScalarField(hb, (c + r * np.sin(th)) * np.ones(hb.shape), c)
    vol = (quad(lambda t: t ** (2 + a), 0, 1)[0] * 2 * math.pi
           * quad(lambda t: math.sin(t) ** a * math.cos(t), 0, math.pi / 2)[0])
    flat = dblquad(lambda rr, p: (c + rr * math.cos(p)) ** 2 * c ** 2 * rr, 0, 2 * math.pi, 0, 1)[0]
    exact = vol + 0.5 * beta * flat
    assert energy_I(_state(u, v, beta=beta)) == pytest.approx(exact, rel=0.005)


# ---------------------------------------------------------------- E, H, N

def test_H_of_constant(grid_cache):
    sph = grid_cache(32, 64, 0.5)
    hb = build_half_ball_grid(8, sph)
    u = ScalarField(hb, np.ones(hb.shape), 1.0)
    z = ScalarField(hb, np.zeros(hb.shape))
    st = _state(u, z)
    assert almgren_H(st, 1.0) == pytest.approx(2 * math.pi, rel=1e-12)
    assert almgren_E(st, 0.5) == 0.0
    assert frequency_N(st, 0.5) == 0.0


def test_zero_state_hits_positivity_floor(grid_cache):
    hb = build_half_ball_grid(8, grid_cache(16, 32, 0.5))
    z = ScalarField(hb, np.zeros(hb.shape))
    with pytest.raises(GridError):
        frequency_trace(_state(z, z))
    with pytest.raises(GridError):
        frequency_N(_state(z, z), 0.5)


def test_frequency_of_homogeneous_pair_is_exponent(hom):
    state, d = hom
    radii = np.geomspace(0.1, 1.0, 11)
    tr = frequency_trace(state, radii)
    assert np.all(np.abs(tr.N_vals - d) / d < 0.005)
    assert np.allclose(tr.N_vals, tr.E_vals / tr.H_vals)


def test_frequency_trace_rejects_unsorted(hom):
    with pytest.raises(ValueError):
        frequency_trace(hom[0], [0.5, 0.2])


def test_radius_out_of_range(hom):
    with pytest.raises(GridError):
        almgren_H(hom[0], 1.5)


# ---------------------------------------------------------------- doubling and Pohozaev

def test_doubling_examples(hom):
    state, d = hom
    rep = doubling_check(state, 0.3, 0.3, d)
    assert rep.ratio == pytest.approx(1.0) and rep.holds
    rep = doubling_check(state, 0.05, 0.8, d)
    assert rep.ratio == pytest.approx((0.8 / 0.05) ** (2 * d), rel=1e-6)
    assert rep.ratio < rep.bound
    with pytest.raises(ValueError):
        doubling_check(state, 0.5, 0.2, d)


def test_doubling_precondition(hom):
    state, d = hom
    with pytest.raises(PropertyViolation):
        doubling_check(state, 0.1, 0.5, 0.5 * d)


def test_pohozaev_zero_state(grid_cache):
    hb = build_half_ball_grid(8, grid_cache(16, 32, 0.5))
    z = ScalarField(hb, np.zeros(hb.shape))
    assert pohozaev_residual(_state(z, z), 0.5) == 0.0


def test_pohozaev_homogeneous_pair_small(hom):
    assert pohozaev_residual(hom[0], 0.5) < 0.02


# ---------------------------------------------------------------- scalings

def test_select_r_beta_closed_form(hom):
    state, d = hom
    s = state.params.s
    H1 = almgren_H(state, 1.0)
    from dataclasses import replace
    for beta in (10.0, 1e3, 1e5):
        st = replace(state, beta=beta)
        exact = (beta * H1) ** (-1.0 / (2 * s + 2 * d))
        assert select_r_beta(st) == pytest.approx(exact, rel=1e-10)
    st = replace(state, beta=1.0 / H1)
    assert select_r_beta(st) == 1.0
    with pytest.raises(ValueError):
        select_r_beta(replace(state, beta=0.5 / H1))


def test_r_beta_decreases_with_beta(hom):
    from dataclasses import replace
    rs = [select_r_beta(replace(hom[0], beta=b)) for b in (1e2, 1e3, 1e4)]
    assert rs[0] > rs[1] > rs[2]


def test_blow_up_identity_and_composition(hom):
    from dataclasses import replace
    state = replace(hom[0], beta=1.0)
    same = blow_up(state, 1.0)
    assert np.array_equal(same.u.values, state.u.values)
    st = replace(hom[0], beta=400.0)
    twice = blow_up(blow_up(st, 0.5), 0.4)
    once = blow_up(st, 0.2)
    assert np.allclose(twice.u.values, once.u.values, rtol=1e-13)
    assert np.allclose(twice.grid.r_nodes, once.grid.r_nodes, rtol=1e-13)
    with pytest.raises(ValueError):
        blow_up(st, 1.5)


def test_blow_up_normalises_H(hom):
    from dataclasses import replace
    st = replace(hom[0], beta=1e3)
    bu = blow_up(st, select_r_beta(st))
    assert almgren_H(bu, 1.0) == pytest.approx(1.0, abs=1e-6)
    assert bu.beta == 1.0


def test_blow_up_scaling_exact_on_surrogate(hom):
    from dataclasses import replace
    state, d = hom
    st = replace(state, beta=50.0)
    r_b = 0.25
    bu = blow_up(st, r_b)
    amp2 = 50.0 * r_b ** (2 * st.params.s)
    for rho in (0.5, 1.0, 2.0):
        assert almgren_H(bu, rho) == pytest.approx(amp2 * almgren_H(st, rho * r_b), rel=1e-10)


def test_blow_down_on_surrogate(hom):
    state, d = hom
    a = state.params.a
    for R in (0.3, 0.7, 1.0):
        res = blow_down(state, R, d)
        assert res.kappa == res.normalizer_L ** 2 * R ** (1 - a)
        assert almgren_H(res.rescaled, 1.0) == pytest.approx(1.0, abs=1e-10)
        assert res.homogeneity_deviation < 1e-10
        assert res.normalizer_L ** 2 == pytest.approx(almgren_H(state, 1.0) * R ** (2 * d), rel=1e-10)
    with pytest.raises(GridError):
        blow_down(state, 2.0)


def test_growth_rate_of_homogeneous_states(hom, grid_cache):
    state, d = hom
    assert growth_rate_estimate(state).value == pytest.approx(d, rel=0.005)
    # y^(2s) extension has growth 2s
    for s in (0.25, 0.5):
        sph = grid_cache(48, 96, s)
        hb = build_half_ball_grid(40, sph)
        y = np.sin(sph.theta_nodes)[:, None] ** (2 * s) * np.ones(sph.n_phi)
        u = homogeneous_extension(ScalarField(sph, y), 2 * s, hb)
        z = ScalarField(hb, np.zeros(hb.shape))
        est = growth_rate_estimate(_state(u, z, beta=0.0))
        assert est.value == pytest.approx(2 * s, rel=0.01)
        assert est.log_slope == pytest.approx(2 * s, rel=1e-10)


def test_growth_rate_needs_range(hom):
    state = hom[0]
    hb = make_half_ball_grid(np.linspace(0.5, 1.0, 6), state.grid.sphere)
    z = ScalarField(hb, np.ones(hb.shape))
    with pytest.raises(GridError):
        growth_rate_estimate(_state(z, z))


# ---------------------------------------------------------------- solver

def test_solver_beta_zero(eig):
    hb = build_half_ball_grid(16, eig.eigenfunction.grid)
    st = solve_beta_system(hb, 1, 0.0, eig)
    assert 2 * st.energy <= eig.exponent_d * 1.02
    assert st.converged


def test_solver_k1_bundle(solved, eig):
    st = solved
    d = eig.exponent_d
    assert st.converged
    assert 2 * st.energy <= d * 1.02
    # Dirichlet data and symmetry exact
    assert np.array_equal(st.u.values[-1], st.boundary_u.values)
    assert np.array_equal(st.v.values, reflect_columns(st.u.values))
    assert np.array_equal(st.boundary_v.values, reflect_columns(st.boundary_u.values))
    assert positivity_margin(st) > 0
    tr = frequency_trace(st)
    assert tr.monotone
    assert np.all(tr.N_vals <= 2 * st.params.s * 1.02)
    hist = np.array([h[1] for h in st.history])
    assert np.all(np.diff(hist) <= 0)


def test_solver_equivariance_k2(grid_cache):
    sph = grid_cache(16, 32, 0.5)
    e2 = first_eigenvalue_symmetric(sph, 2)
    st = solve_beta_system(build_half_ball_grid(12, sph), 2, 1e2, e2)
    assert np.array_equal(np.roll(st.u.values, 16, axis=2), st.u.values)


def test_solver_beta_ladder(eig):
    hb = build_half_ball_grid(24, eig.eigenfunction.grid)
    states = [solve_beta_system(hb, 1, b, eig) for b in (1e2, 1e3, 1e4)]
    inter = [interaction(s.u, s.v, s.beta) for s in states]
    energy = [s.energy for s in states]
    assert inter[0] > inter[1] > inter[2]
    assert energy[0] <= energy[1] <= energy[2]


def test_solver_rejects_bad_input(eig, grid_cache):
    hb = build_half_ball_grid(8, eig.eigenfunction.grid)
    with pytest.raises(ValueError):
        solve_beta_system(hb, 1, -1.0, eig)
    with pytest.raises(GridError):
        solve_beta_system(hb, 3, 1.0, eig)
    other = build_half_ball_grid(8, grid_cache(16, 32, 0.5))
    with pytest.raises(GridError):
        solve_beta_system(other, 1, 1.0, eig)
