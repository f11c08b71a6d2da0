import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from fraccomp.geometry import (
    MAX_NODES,
    TWO_PI,
    ArcSet,
    FractionalParams,
    GridError,
    ScalarField,
    build_half_ball_grid,
    build_hemisphere_grid,
    canonical_omega_k,
    default_grading,
    reflection_index,
    rotation_average,
    tangential_energy,
    weighted_dirichlet_energy,
    weighted_l2_inner,
)

from conftest import S_VALUES, random_field


def _field(grid, fn):
    th = grid.theta_nodes[:, None]
    ph = grid.phi_nodes[None, :]
    vals = np.broadcast_to(fn(th, ph), grid.shape).astype(float).copy()
    vals[-1] = vals[-1, 0]
    return ScalarField(grid, vals)


# ---------------------------------------------------------------- params

def test_params_derive_a():
    p = FractionalParams(0.3)
    assert p.a == 1 - 2 * 0.3
    assert p.dim_n == 2


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_params_reject_s(s):
    with pytest.raises(GridError):
        FractionalParams(s)


def test_params_reject_dim():
    with pytest.raises(GridError):
        FractionalParams(0.5, dim_n=1)


# ---------------------------------------------------------------- grids

@pytest.mark.parametrize("s", S_VALUES)
def test_total_measure_closed_form(grid_cache, s):
    grid = grid_cache(64, 128, s)
    a = 1 - 2 * s
    exact = TWO_PI / (a + 1)
    h = (math.pi / 2) / (grid.n_theta - 1)
    assert abs(grid.total_measure - exact) / exact <= 10 * h * h


def test_total_measure_uniform_weight(grid_cache):
    assert grid_cache(64, 128, 0.5).total_measure == pytest.approx(TWO_PI, abs=1e-8)


def test_total_measure_singular_weight(grid_cache):
    assert grid_cache(64, 128, 0.75).total_measure == pytest.approx(4 * math.pi, rel=1e-8)


def test_measure_finite_nonnegative(grid_cache):
    for s in S_VALUES:
        m = grid_cache(32, 64, s).node_measure
        assert np.all(np.isfinite(m)) and np.all(m >= 0)


def test_grading_only_for_strong_weights(grid_cache):
    assert grid_cache(16, 32, 0.5).grading_gamma == 1.0
    assert default_grading(0.4) == 1.0
    g = grid_cache(16, 32, 0.9)
    assert g.grading_gamma > 1
    # nodes cluster toward the equator
    assert g.theta_nodes[1] - g.theta_nodes[0] < g.theta_nodes[-1] - g.theta_nodes[-2]


@pytest.mark.parametrize("n_theta,n_phi", [(7, 16), (16, 7), (16, 31), (MAX_NODES + 2, 16)])
def test_grid_rejects_bad_sizes(n_theta, n_phi):
    with pytest.raises(GridError):
        build_hemisphere_grid(n_theta, n_phi, FractionalParams(0.5))


def test_grid_rejects_odd_phi():
    with pytest.raises(GridError, match="even"):
        build_hemisphere_grid(16, 19, FractionalParams(0.5))


def test_grid_arrays_read_only(grid_cache):
    g = grid_cache(16, 32, 0.5)
    with pytest.raises(ValueError):
        g.node_measure[0, 0] = 1.0


@pytest.mark.parametrize("s", S_VALUES)
def test_half_ball_volume_closed_form(grid_cache, s):
    a = 1 - 2 * s
    hb = build_half_ball_grid(16, grid_cache(32, 64, s))
    exact = TWO_PI / ((a + 1) * (3 + a))
    assert hb.volume_measure.sum() == pytest.approx(exact, rel=1e-10)
    assert hb.r_nodes[0] > 0 and hb.r_max == 1.0
    assert hb.flat_boundary_measure.sum() == pytest.approx(math.pi, rel=1e-10)


def test_half_ball_rejects_small_nr(grid_cache):
    with pytest.raises(GridError):
        build_half_ball_grid(3, grid_cache(16, 32, 0.5))


# ---------------------------------------------------------------- fields and quadrature

def test_field_validation(grid_cache):
    g = grid_cache(16, 32, 0.5)
    with pytest.raises(GridError):
        ScalarField(g, np.zeros((16, 31)))
    bad = np.zeros(g.shape)
    bad[3, 4] = np.nan
    with pytest.raises(GridError):
        ScalarField(g, bad)
    f = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_inner_product_examples(grid_cache):
    g = grid_cache(64, 128, 0.5)
    one = _field(g, lambda t, p: np.ones_like(t + p))
    zero = _field(g, lambda t, p: np.zeros_like(t + p))
    assert weighted_l2_inner(one, one, g) == pytest.approx(TWO_PI, abs=1e-8)
    assert weighted_l2_inner(one, zero, g) == 0.0


def test_inner_product_y_squared_against_quadrature(grid_cache):
    # oracle: 2pi * int_0^{pi/2} sin^2 cos
    exact = TWO_PI * quad(lambda t: math.sin(t) ** 2 * math.cos(t), 0, math.pi / 2)[0]
    assert exact == pytest.approx(TWO_PI / 3)
    errs = []
    for n in (16, 32, 64):
        g = grid_cache(n, 2 * n, 0.5)
        y = _field(g, lambda t, p: np.sin(t) + 0 * p)
        errs.append(abs(weighted_l2_inner(y, y, g) - exact))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / exact < 1e-3


def test_inner_product_rejects_foreign_grid(grid_cache):
    g1, g2 = grid_cache(16, 32, 0.5), grid_cache(16, 32, 0.25)
    f = ScalarField(g1, np.ones(g1.shape))
    with pytest.raises(GridError):
        weighted_l2_inner(f, f, g2)


def test_energy_of_constant_is_zero(grid_cache):
    g = grid_cache(32, 64, 0.25)
    assert weighted_dirichlet_energy(ScalarField(g, np.full(g.shape, 3.0)), g) == 0.0


def test_energy_of_y_converges(grid_cache):
    # f = sin(theta), a = 0: 2pi int cos^3 = 4pi/3
    exact = TWO_PI * quad(lambda t: math.cos(t) ** 3, 0, math.pi / 2)[0]
    errs = []
    for n in (16, 32, 64, 128):
        g = grid_cache(n, 2 * n, 0.5)
        errs.append(abs(weighted_dirichlet_energy(_field(g, lambda t, p: np.sin(t) + 0 * p), g) - exact))
    assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))
    assert errs[-1] / exact < 0.01


@pytest.mark.parametrize("s", S_VALUES)
def test_energy_of_sinphi_costheta_against_quadrature(grid_cache, s):
    a = 1 - 2 * s
    # |grad f|^2 = sin^2(phi) sin^2(theta) + cos^2(phi); both phi integrals equal pi
    exact = math.pi * quad(lambda t: math.sin(t) ** a * (math.sin(t) ** 2 + 1) * math.cos(t),
                           0, math.pi / 2, limit=200)[0]
    g = grid_cache(64, 128, s)
    f = _field(g, lambda t, p: np.sin(p) * np.cos(t))
    assert weighted_dirichlet_energy(f, g) == pytest.approx(exact, rel=0.01)


def test_phi_factor_scales_only_phi_part(grid_cache):
    g = grid_cache(16, 32, 0.5)
    f = random_field(g, np.random.default_rng(1)).values
    t0 = tangential_energy(f, g, 0.0)
    t1 = tangential_energy(f, g, 1.0)
    t4 = tangential_energy(f, g, 4.0)
    assert t4 - t0 == pytest.approx(4 * (t1 - t0), rel=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1), m=st.integers(0, 31))
def test_reflection_preserves_norm_exactly(seed, m):
    g = build_hemisphere_grid(8, 32, FractionalParams(0.5))
    f = random_field(g, np.random.default_rng(seed))
    fr = f.with_values(f.values[:, reflection_index(g.n_phi, m)])
    assert weighted_l2_inner(fr, fr, g) == weighted_l2_inner(f, f, g)


def test_rotation_average_is_invariant(grid_cache):
    g = grid_cache(16, 32, 0.5)
    f = random_field(g, np.random.default_rng(2)).values
    avg = rotation_average(f, 4)
    assert np.array_equal(np.roll(avg, 8, axis=1), avg)
    with pytest.raises(GridError):
        rotation_average(f, 5)


# ---------------------------------------------------------------- arc sets

def test_canonical_omega_examples():
    assert canonical_omega_k(1).isclose(ArcSet(((0.0, math.pi),)))
    assert canonical_omega_k(2).isclose(ArcSet(((0.0, math.pi / 2), (math.pi, 1.5 * math.pi))))
    w4 = canonical_omega_k(4)
    assert len(w4.arcs) == 4
    for i, (lo, hi) in enumerate(w4.arcs):
        assert lo == pytest.approx(i * math.pi / 2)
        assert hi - lo == pytest.approx(math.pi / 4)
    with pytest.raises(GridError):
        canonical_omega_k(0)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 8])
def test_canonical_omega_symmetries(k):
    w = canonical_omega_k(k)
    assert w.length == pytest.approx(math.pi)
    assert w.rotated(TWO_PI / k).isclose(w)
    n = 48
    phi = np.arange(n) * TWO_PI / n
    # phi -> -phi sends the open arcs onto the open complement
    assert np.array_equal(w.interior_mask(-phi), w.complement().interior_mask(phi))


def test_arcset_validation_and_merge():
    with pytest.raises(GridError):
        ArcSet(((1.0, 0.5),))
    with pytest.raises(GridError):
        ArcSet(((0.0, 2.0), (1.0, 3.0)))
    merged = ArcSet(((0.0, 1.0), (1.0, 2.0)))
    assert merged.arcs == ((0.0, 2.0),)


def test_arcset_endpoints_are_dirichlet():
    phi = np.arange(8) * TWO_PI / 8
    mask = canonical_omega_k(1).interior_mask(phi)
    assert mask.tolist() == [False, True, True, True, False, False, False, False]
    assert ArcSet.full().interior_mask(phi).all()
    assert not ArcSet.empty().interior_mask(phi).any()


def test_arcset_wraps_across_seam():
    w = ArcSet(((0.0, 0.5), (TWO_PI - 0.5, TWO_PI)))
    assert w.interior_mask(np.array([0.0]))[0]


def test_arcset_alignment_and_snap():
    w = ArcSet(((0.1, 1.0),))
    assert not w.is_aligned(16)
    s = w.snapped(16)
    assert s.is_aligned(16)
    assert canonical_omega_k(4).is_aligned(16)


_arcs = st.lists(st.floats(0.0, TWO_PI, allow_nan=False), min_size=0, max_size=8, unique=True)


@given(points=_arcs)
def test_arcset_complement_algebra(points):
    pts = sorted(points)
    arcs = tuple((pts[i], pts[i + 1]) for i in range(0, len(pts) - 1, 2) if pts[i + 1] - pts[i] > 1e-9)
    w = ArcSet(arcs)
    c = w.complement()
    assert w.length + c.length == pytest.approx(TWO_PI, abs=1e-9)
    assert c.complement().isclose(w, tol=1e-9)
