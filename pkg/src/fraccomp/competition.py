"""Two-component competition system on the half ball and its frequency diagnostics.

The pair (u, v) is L_a-harmonic in the half ball, takes the eigen-data (g, h) on
the curved boundary and interacts on the flat boundary through
``-d_y^a u = beta u v**2``, ``-d_y^a v = beta v u**2``.  Solutions are computed
as minimisers of

    I(u, v) = 1/2 int y^a (|grad u|^2 + |grad v|^2) + 1/2 int_flat beta u^2 v^2

within pairs obeying ``v = u o sigma`` and invariant under rotation by 2pi/k.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    FractionalParams,
    GridError,
    HalfBallGrid,
    HemisphereGrid,
    ScalarField,
    make_half_ball_grid,
)
from .halfball import FourierSchurOperator, shell_energy_parts
from .spectral import (
    EigenResult,
    first_eigenvalue_symmetric,
    reflect_columns,
)

log = logging.getLogger(__name__)

H_FLOOR = 1e-300
CEILING_TOL = 0.02
MONOTONE_TOL = 1e-6


class PropertyViolation(RuntimeError):
    """A proven inequality failed beyond its tolerance."""


@dataclass(frozen=True, eq=False)
class CompetitionState:
    u: ScalarField
    v: ScalarField
    beta: float
    k: int
    boundary_u: ScalarField
    boundary_v: ScalarField
    energy: float
    converged: bool = True
    iterations: int = 0
    history: tuple = field(default=(), repr=False)

    @property
    def grid(self) -> HalfBallGrid:
        return self.u.grid

    @property
    def params(self) -> FractionalParams:
        return self.grid.params


# ------------------------------------------------------------ construction

def homogeneous_extension(g: ScalarField, d: float, grid: HalfBallGrid) -> ScalarField:
    """``r**d g(theta, phi)`` on every shell, with the outer shell scaled to ``r_max**d``.

    On the unit-radius grid the restriction to r = 1 is exactly ``g``.
    """
    if d < 0:
        raise ValueError(f"d must be nonnegative, got {d}")
    if g.grid.key != grid.sphere.key:
        raise GridError("boundary field does not live on the half-ball's sphere grid")
    vals = grid.r_nodes[:, None, None] ** d * g.values[None]
    if d == 0:
        m = grid.sphere.node_measure
        center = float(np.sum(m * g.values) / np.sum(m))
    else:
        center = 0.0
    return ScalarField(grid, vals, center)


def _flat_weights(grid: HalfBallGrid) -> np.ndarray:
    """Flat-boundary quadrature weight of every equator node, shape (n_r, n_phi)."""
    return np.asarray(grid.flat_boundary_measure)


def interaction(u: ScalarField, v: ScalarField, beta: float) -> float:
    """``int_flat beta u^2 v^2`` over the whole flat disk."""
    w = _flat_weights(u.grid)
    return float(beta * np.sum(w * u.values[:, 0] ** 2 * v.values[:, 0] ** 2))


def energy_I(state: CompetitionState) -> float:
    """Half the Dirichlet energies plus half the flat interaction."""
    from .halfball import dirichlet_energy
    g = state.grid
    e = dirichlet_energy(state.u.values, state.u.center, g) + dirichlet_energy(
        state.v.values, state.v.center, g)
    return 0.5 * e + 0.5 * interaction(state.u, state.v, state.beta)


def _check_k(sphere: HemisphereGrid, k: int) -> None:
    if int(k) != k or k < 1:
        raise GridError(f"k must be a positive integer, got {k!r}")
    if (sphere.n_phi // 2) % k:
        raise GridError(f"k={k} does not divide n_phi/2={sphere.n_phi // 2}")


def boundary_pair(eigen: EigenResult) -> tuple[np.ndarray, np.ndarray]:
    """(g, h) with h = g o sigma and the joint normalisation int y^a (g^2 + h^2) = 1."""
    g = eigen.eigenfunction.values
    grid = eigen.eigenfunction.grid
    norm = float(np.sum(grid.node_measure * g ** 2))
    g = g / math.sqrt(2.0 * norm)
    return g, reflect_columns(g)


def solve_beta_system(grid: HalfBallGrid, k: int, beta: float, eigen_data: EigenResult | None = None,
                      max_iter: int = 300, rtol: float = 1e-10,
                      energy_tol: float = CEILING_TOL) -> CompetitionState:
    """Minimise I over symmetric pairs with the eigen-data on the curved boundary.

    The iteration works on the flat-boundary trace of u.  Each step solves the
    linear problem for u with the reaction ``beta (x o sigma)**2`` frozen, then
    moves toward it with a step halved until ``I(x, x o sigma)`` does not increase,
    so the logged energies are nonincreasing.  Raises ``PropertyViolation`` if the
    final ``2 I`` exceeds the exponent of the data by more than ``energy_tol``.
    """
    sph = grid.sphere
    _check_k(sph, k)
    if not (beta >= 0) or not math.isfinite(beta):
        raise ValueError(f"beta must be a finite nonnegative number, got {beta}")
    if eigen_data is None:
        eigen_data = first_eigenvalue_symmetric(sph, k)
    if eigen_data.eigenfunction.grid.key != sph.key:
        raise GridError("eigen data must live on the half-ball's sphere grid")
    g_full, h_full = boundary_pair(eigen_data)
    d_k = eigen_data.exponent_d

    n_c = sph.n_phi // k
    op = FourierSchurOperator(grid, n_c)
    g = g_full[:, :n_c]
    g_hat = op.data_hat(g)
    f, c = op.load(g_hat)
    fw = _flat_weights(grid)[:-1, :n_c]
    refl = np.mod(-np.arange(n_c), n_c)

    def inter(x):
        return float(beta * np.sum(fw * x ** 2 * x[:, refl] ** 2))

    def I_sym(x):
        # full-disk value: k identical periods; E(x o sigma) = E(x) by symmetry of the data
        return k * (op.energy(x, f, c) + 0.5 * inter(x))

    # start from the trace of the homogeneous extension (segregated, admissible)
    x = grid.r_nodes[:-1, None] ** d_k * g[0][None, :]
    I_cur = I_sym(x)
    history = [(0, I_cur, k * inter(x), float("nan"))]
    converged = beta == 0
    alpha = 1.0
    it = 0
    if beta == 0:
        x = op.solve(np.zeros_like(f), f, x0=x)
        I_cur = I_sym(x)
        history.append((1, I_cur, 0.0, history[0][1] - I_cur))
        it = 1
    while not converged and it < max_iter:
        it += 1
        react = beta * fw * x[:, refl] ** 2
        target = op.solve(react, f, x0=x)
        alpha = min(1.0, 2.0 * alpha)
        while True:
            cand = x + alpha * (target - x)
            I_new = I_sym(cand)
            if I_new <= I_cur or alpha < 1.0 / 1024:
                break
            alpha *= 0.5
        if I_new > I_cur:
            log.warning("no descent step found at iteration %d", it)
            break
        delta = I_cur - I_new
        x, I_cur = cand, I_new
        history.append((it, I_cur, k * inter(x), delta))
        if delta < rtol * abs(I_cur):
            converged = True
    if not converged:
        log.warning("solve_beta_system: not converged after %d iterations", it)

    u_vals, u_center = op.extend(x, g_hat)
    u_vals[-1] = g          # Dirichlet data exactly, not its FFT round trip
    u_vals = np.tile(u_vals, (1, 1, k))
    v_vals = reflect_columns(u_vals)
    u = ScalarField(grid, u_vals, u_center)
    v = ScalarField(grid, v_vals, u_center)
    state = CompetitionState(u, v, float(beta), int(k), ScalarField(sph, g_full),
                             ScalarField(sph, h_full), 0.0, converged, it, tuple(history))
    energy = energy_I(state)
    state = _replace(state, energy=energy)
    if 2 * energy > d_k * (1 + energy_tol):
        raise PropertyViolation(
            f"energy ceiling violated: 2I={2 * energy:.6g} > d={d_k:.6g} (tol {energy_tol:g})")
    return state


def _replace(state: CompetitionState, **kw) -> CompetitionState:
    from dataclasses import replace
    return replace(state, **kw)


# ------------------------------------------------------------ radial profiles

@dataclass(frozen=True, eq=False)
class _Profiles:
    """Shell quantities of a state: cumulative energy D, flat coupling F and H."""

    r: np.ndarray
    D: np.ndarray
    F: np.ndarray
    H: np.ndarray


def _profiles(state: CompetitionState) -> _Profiles:
    g = state.grid
    rw = g.radial
    D = np.zeros(g.n_r)
    for fld in (state.u, state.v):
        radial, origin, tang = shell_energy_parts(fld.values, fld.center, g)
        full = rw.ang * tang
        inner = rw.ang_inner * tang
        # energy inside radius r_i: origin cell, radial edges below i, angular parts up to r_i
        below = np.concatenate([[0.0], np.cumsum(radial)])
        ang_below = np.concatenate([[0.0], np.cumsum(full)[:-1]])
        D += origin + below + ang_below + inner
    dphi = g.sphere.dphi
    uv = state.beta * state.u.values[:, 0] ** 2 * state.v.values[:, 0] ** 2
    row = uv.sum(axis=1) * dphi
    F = np.concatenate([[0.0], np.cumsum((rw.flat_inner + rw.flat_outer) * row)[:-1]]) + rw.flat_inner * row
    m = g.sphere.node_measure
    H = np.einsum("jl,ijl->i", m, state.u.values ** 2 + state.v.values ** 2)
    return _Profiles(np.asarray(g.r_nodes), D, F, H)


def _interp_nodes(vals: np.ndarray, r_nodes: np.ndarray, r: float, center: float) -> np.ndarray:
    """Field values on the sphere of radius r; power law per node between shells."""
    i = int(np.searchsorted(r_nodes, r))
    if i < len(r_nodes) and math.isclose(r_nodes[i], r, rel_tol=1e-13, abs_tol=0.0):
        return vals[i]
    if i == 0:
        t = r / r_nodes[0]
        return center + t * (vals[0] - center)
    r0, r1 = r_nodes[i - 1], r_nodes[i]
    a, b = vals[i - 1], vals[i]
    t = math.log(r / r0) / math.log(r1 / r0)
    with np.errstate(divide="ignore", invalid="ignore"):
        same = (a > 0) & (b > 0)
        power = np.where(same, a * (b / np.where(same, a, 1.0)) ** t, 0.0)
    return np.where(same, power, a + t * (b - a))


def _check_radius(state: CompetitionState, r: float) -> None:
    if not (0 < r <= state.grid.r_max * (1 + 1e-12)):
        raise GridError(f"radius {r} outside (0, {state.grid.r_max}]")


def almgren_H(state: CompetitionState, r: float) -> float:
    """``r^-(N+a) int_{curved boundary of B_r} y^a (u^2 + v^2)``."""
    _check_radius(state, r)
    g = state.grid
    m = g.sphere.node_measure
    uu = _interp_nodes(state.u.values, g.r_nodes, r, state.u.center)
    vv = _interp_nodes(state.v.values, g.r_nodes, r, state.v.center)
    return float(np.sum(m * (uu ** 2 + vv ** 2)))


def _loglog(r_nodes, vals, r):
    i = int(np.searchsorted(r_nodes, r))
    if i < len(r_nodes) and math.isclose(r_nodes[i], r, rel_tol=1e-13, abs_tol=0.0):
        return float(vals[i])
    if i == 0 or i == len(r_nodes):
        raise GridError(f"radius {r} is not resolved by the radial grid")
    r0, r1, a, b = r_nodes[i - 1], r_nodes[i], vals[i - 1], vals[i]
    t = math.log(r / r0) / math.log(r1 / r0)
    if a > 0 and b > 0:
        return float(a * (b / a) ** t)
    return float(a + t * (b - a))


def almgren_E(state: CompetitionState, r: float) -> float:
    """``r^-(N-1+a) [int_{B_r} y^a (|grad u|^2 + |grad v|^2) + int_flat beta u^2 v^2]``."""
    _check_radius(state, r)
    p = _profiles(state)
    a = state.params.a
    total = _loglog(p.r, p.D + p.F, r)
    return total / r ** (1 + a)


def frequency_N(state: CompetitionState, r: float) -> float:
    H = almgren_H(state, r)
    if not H > H_FLOOR:
        raise GridError(f"H({r}) = {H:g} is below the positivity floor; the state is degenerate")
    return almgren_E(state, r) / H


@dataclass(frozen=True)
class FrequencyTrace:
    radii: np.ndarray
    E_vals: np.ndarray
    H_vals: np.ndarray
    N_vals: np.ndarray
    params: FractionalParams
    violations: np.ndarray

    @property
    def monotone(self) -> bool:
        return not bool(self.violations.any())


def frequency_trace(state: CompetitionState, radii=None, tol: float = MONOTONE_TOL) -> FrequencyTrace:
    """E, H and N along ``radii`` (default: all shell radii).

    ``violations[i]`` flags ``N[i] < N[i-1] - tol * max(1, N[i-1])``.
    """
    p = _profiles(state)
    radii = p.r.copy() if radii is None else np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    a = state.params.a
    E = np.array([_loglog(p.r, p.D + p.F, r) / r ** (1 + a) for r in radii])
    H = np.array([almgren_H(state, r) for r in radii])
    if np.any(H <= H_FLOOR):
        bad = radii[np.argmax(H <= H_FLOOR)]
        raise GridError(f"H({bad}) is below the positivity floor; the state is degenerate")
    N = E / H
    viol = np.zeros(len(radii), bool)
    viol[1:] = N[1:] < N[:-1] - tol * np.maximum(1.0, N[:-1])
    return FrequencyTrace(radii, E, H, N, state.params, viol)


@dataclass(frozen=True)
class DoublingReport:
    r1: float
    r2: float
    ratio: float
    bound: float
    holds: bool


def doubling_check(state: CompetitionState, r1: float, r2: float, d: float,
                   tol: float = CEILING_TOL) -> DoublingReport:
    """``H(r2)/H(r1) <= exp(d/(1-a)) (r2/r1)^(2d)``, after verifying N(r_max) <= d."""
    if not (0 < r1 <= r2 <= state.grid.r_max * (1 + 1e-12)):
        raise ValueError("need 0 < r1 <= r2 <= r_max")
    n_max = frequency_N(state, state.grid.r_max)
    if n_max > d * (1 + tol):
        raise PropertyViolation(f"precondition N(r_max)={n_max:.6g} > d={d:.6g}")
    a = state.params.a
    ratio = almgren_H(state, r2) / almgren_H(state, r1)
    bound = math.exp(d / (1 - a)) * (r2 / r1) ** (2 * d)
    return DoublingReport(r1, r2, ratio, bound, ratio <= bound * (1 + 1e-12))


# ------------------------------------------------------------ Pohozaev

def pohozaev_residual(state: CompetitionState, r: float) -> float:
    """Relative mismatch of the Pohozaev identity on the shell nearest to r.

    Volume side ``(N-1+a) int_{B_r} y^a |grad|^2``; boundary side
    ``r int_{curved} y^a (|grad|^2 - 2 u_r^2) + r int_{circle} beta u^2 v^2
    - N int_{flat} beta u^2 v^2`` (both components summed).  Radial derivatives use
    the three-point formula on the nonuniform shell grid.
    """
    g = state.grid
    a = state.params.a
    n_dim = state.params.dim_n
    i = int(np.argmin(np.abs(g.r_nodes - r)))
    i = min(max(i, 1), g.n_r - 2)
    p = _profiles(state)
    lhs = (n_dim - 1 + a) * p.D[i]
    rr = g.r_nodes
    h0, h1 = rr[i] - rr[i - 1], rr[i + 1] - rr[i]
    w_prev = -h1 / (h0 * (h0 + h1))
    w_mid = (h1 - h0) / (h0 * h1)
    w_next = h0 / (h1 * (h0 + h1))
    m = g.sphere.node_measure
    sph = g.sphere
    rad_sq, tang = 0.0, 0.0
    for fld in (state.u, state.v):
        vals = fld.values
        ur = w_prev * vals[i - 1] + w_mid * vals[i] + w_next * vals[i + 1]
        rad_sq += float(np.sum(m * ur ** 2))
        dth = np.diff(vals[i], axis=0)
        dph = np.roll(vals[i, :-1], -1, axis=1) - vals[i, :-1]
        tang += float(np.sum(sph.theta_conductance[:, None] * dth ** 2)
                      + np.sum(sph.phi_conductance[:, None] * dph ** 2))
    ri = rr[i]
    circle = state.beta * sph.dphi * float(np.sum(state.u.values[i, 0] ** 2 * state.v.values[i, 0] ** 2))
    rhs = (ri ** (1 + a) * tang - ri ** (3 + a) * rad_sq
           + ri * ri * circle - n_dim * p.F[i])
    scale = abs(lhs)
    if scale == 0.0:
        return 0.0 if abs(rhs) == 0.0 else float("inf")
    return abs(lhs - rhs) / scale


# ------------------------------------------------------------ scalings

def select_r_beta(state: CompetitionState, tol: float = 1e-12) -> float:
    """Root of ``beta r^(2s) H(r) = 1`` in (0, r_max] by bisection in log r."""
    s = state.params.s
    beta = state.beta
    r_hi = state.grid.r_max
    r_lo = float(state.grid.r_nodes[0])

    def phi(r):
        return beta * r ** (2 * s) * almgren_H(state, r) - 1.0

    f_hi = phi(r_hi)
    if abs(f_hi) <= 1e-14:
        return r_hi
    if f_hi < 0:
        raise ValueError("no root: beta r^(2s) H(r) < 1 on the whole grid (beta too small)")
    if phi(r_lo) > 0:
        raise ValueError("root lies inside the innermost shell; refine the radial grid")
    lo, hi = math.log(r_lo), math.log(r_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if phi(math.exp(mid)) > 0:
            hi = mid
        else:
            lo = mid
    return math.exp(0.5 * (lo + hi))


def _rescaled(state: CompetitionState, radius: float, amplitude: float, beta: float) -> CompetitionState:
    """Fields ``amplitude * (u, v)(radius z)`` on the grid with radii divided by ``radius``.

    Shells beyond ``radius * r_max`` would not exist; shells inside are kept and, if
    ``radius`` falls between shells, an interpolated shell is appended at the cut.
    """
    g = state.grid
    r = np.asarray(g.r_nodes)
    keep = r < radius * (1 - 1e-13)
    new_r = np.concatenate([r[keep], [radius]]) / radius
    u_cut = _interp_nodes(state.u.values, r, radius, state.u.center)
    v_cut = _interp_nodes(state.v.values, r, radius, state.v.center)
    u_vals = amplitude * np.concatenate([state.u.values[keep], u_cut[None]])
    v_vals = amplitude * np.concatenate([state.v.values[keep], v_cut[None]])
    new_grid = make_half_ball_grid(new_r, g.sphere)
    u = ScalarField(new_grid, u_vals, amplitude * state.u.center)
    v = ScalarField(new_grid, v_vals, amplitude * state.v.center)
    out = CompetitionState(u, v, float(beta), state.k, ScalarField(g.sphere, u_vals[-1]),
                           ScalarField(g.sphere, v_vals[-1]), 0.0, state.converged,
                           state.iterations, state.history)
    return _replace(out, energy=energy_I(out))


def blow_up(state: CompetitionState, r_b: float) -> CompetitionState:
    """``beta^(1/2) r_b^s (u, v)(r_b z)`` on the dilated grid; the new coupling is 1."""
    if not (0 < r_b <= 1.0) or r_b > state.grid.r_max * (1 + 1e-12):
        raise ValueError(f"r_b must lie in (0, min(1, r_max)], got {r_b}")
    s = state.params.s
    amp = math.sqrt(state.beta) * r_b ** s
    g = state.grid
    r = np.asarray(g.r_nodes)
    new_grid = make_half_ball_grid(r / r_b, g.sphere)
    u = ScalarField(new_grid, amp * state.u.values, amp * state.u.center)
    v = ScalarField(new_grid, amp * state.v.values, amp * state.v.center)
    out = CompetitionState(u, v, 1.0, state.k, ScalarField(g.sphere, amp * state.boundary_u.values),
                           ScalarField(g.sphere, amp * state.boundary_v.values), 0.0,
                           state.converged, state.iterations, state.history)
    return _replace(out, energy=energy_I(out))


@dataclass(frozen=True, eq=False)
class BlowDownResult:
    scale_R: float
    normalizer_L: float
    kappa: float
    rescaled: CompetitionState
    homogeneity_deviation: float
    exponent: float


def blow_down(state: CompetitionState, R: float, d: float | None = None) -> BlowDownResult:
    """``(u, v)(R z) / L(R)`` with L(R) chosen so that H = 1 at radius 1.

    ``kappa = L^2 R^(1-a)`` multiplies the coupling of the rescaled system.  The
    homogeneity deviation compares the rescaled pair with ``r^d`` times its own
    unit-sphere trace in the weighted volume norm; if ``d`` is omitted it is
    estimated from H at radius 1 and at the shell nearest 0.1.
    """
    g = state.grid
    if not (0 < R <= g.r_max * (1 + 1e-12)):
        raise GridError(f"R={R} exceeds the available domain (r_max={g.r_max})")
    a = state.params.a
    L = math.sqrt(almgren_H(state, R))
    if not L > 0:
        raise GridError("H(R) vanishes; cannot normalise")
    kappa = L * L * R ** (1 - a)
    res = _rescaled(state, R, 1.0 / L, state.beta * kappa)
    rg = res.grid
    if d is None:
        i = int(np.argmin(np.abs(np.log(rg.r_nodes[:-1] / 0.1))))
        r0 = rg.r_nodes[i]
        d = 0.5 * math.log(almgren_H(res, 1.0) / almgren_H(res, r0)) / math.log(1.0 / r0)
    ref_u = rg.r_nodes[:, None, None] ** d * res.u.values[-1][None]
    ref_v = rg.r_nodes[:, None, None] ** d * res.v.values[-1][None]
    w = rg.volume_measure
    num = np.sum(w * ((res.u.values - ref_u) ** 2 + (res.v.values - ref_v) ** 2))
    den = np.sum(w * (res.u.values ** 2 + res.v.values ** 2))
    dev = math.sqrt(num / den) if den > 0 else 0.0
    return BlowDownResult(float(R), L, kappa, res, dev, float(d))


@dataclass(frozen=True)
class GrowthEstimate:
    frequency_tail: float
    log_slope: float
    r_min: float
    r_max: float

    @property
    def value(self) -> float:
        return self.frequency_tail


def growth_rate_estimate(state: CompetitionState) -> GrowthEstimate:
    """Frequency at the largest radius and the slope of log(H)/2 over the outer decade."""
    g = state.grid
    r_max = g.r_max
    r_min = float(g.r_nodes[0])
    if math.log10(r_max / r_min) < 0.5:
        raise GridError("radial range shorter than half a decade")
    r_in = max(r_min, r_max / 10.0)
    tail = frequency_N(state, r_max)
    slope = 0.5 * math.log(almgren_H(state, r_max) / almgren_H(state, r_in)) / math.log(r_max / r_in)
    return GrowthEstimate(tail, slope, r_in, r_max)


def positivity_margin(state: CompetitionState) -> float:
    """Smallest value of u and v over all non-Dirichlet nodes (shells inside r_max)."""
    inner_u = state.u.values[:-1]
    inner_v = state.v.values[:-1]
    return float(min(inner_u.min(), inner_v.min(), state.u.center, state.v.center))
