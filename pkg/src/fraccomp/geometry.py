"""Parameters, grids, arc sets and weighted quadrature on the hemisphere and half ball.

Coordinates on the upper unit hemisphere are ``(theta, phi)`` with ``y = sin(theta)``:
``theta = 0`` is the equator (the circle where boundary conditions act) and
``theta = pi/2`` is the pole.  The surface element is ``cos(theta) dtheta dphi``
and every integral carries the weight ``y**a`` with ``a = 1 - 2s``.

The tangential energy is discretised as a sum over grid edges::

    sum_theta-edges  ct[j] * (f[j+1] - f[j])**2
  + sum_phi-edges    cp[j] * (f[j, l+1] - f[j, l])**2

with ``ct`` the exact harmonic mean of the weight ``sin(theta)**a`` over each
theta cell and ``cp`` the dual-cell measure scaled by the metric factor
``1/cos(theta)**2``.  The pole row is a single degree of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import beta as beta_fn
from scipy.special import betainc

MAX_NODES = 1024
MIN_NODES = 8
TWO_PI = 2.0 * math.pi


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched grids."""


@dataclass(frozen=True)
class FractionalParams:
    """Fractional order ``s`` and ambient dimension ``N``; ``a`` is always derived."""

    s: float
    dim_n: int = 2

    def __post_init__(self):
        if not (0.0 < float(self.s) < 1.0) or not math.isfinite(self.s):
            raise GridError(f"s must lie in (0, 1), got {self.s!r}")
        if int(self.dim_n) != self.dim_n or self.dim_n < 2:
            raise GridError(f"dim_n must be an integer >= 2, got {self.dim_n!r}")

    @property
    def a(self) -> float:
        return 1.0 - 2.0 * self.s


def _int_sin_pow(p: float, t: np.ndarray) -> np.ndarray:
    """Integral of sin(x)**p over [0, t] for t in [0, pi/2] and p > -1."""
    x = np.sin(t) ** 2
    return 0.5 * beta_fn((p + 1) / 2, 0.5) * betainc((p + 1) / 2, 0.5, x)


def default_grading(a: float) -> float:
    return 1.0 + abs(a) if abs(a) > 0.5 else 1.0


@dataclass(frozen=True, eq=False)
class HemisphereGrid:
    theta_nodes: np.ndarray
    phi_nodes: np.ndarray
    params: FractionalParams
    node_measure: np.ndarray
    theta_conductance: np.ndarray
    phi_conductance: np.ndarray
    grading_gamma: float
    equator_index: int = 0

    @property
    def n_theta(self) -> int:
        return len(self.theta_nodes)

    @property
    def n_phi(self) -> int:
        return len(self.phi_nodes)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_theta, self.n_phi)

    @property
    def dphi(self) -> float:
        return TWO_PI / self.n_phi

    @property
    def key(self) -> tuple:
        return ("hemisphere", self.params.s, self.params.dim_n, self.n_theta, self.n_phi,
                self.grading_gamma)

    @property
    def total_measure(self) -> float:
        return math.fsum(self.node_measure.ravel())

    @property
    def n_dof(self) -> int:
        return (self.n_theta - 1) * self.n_phi + 1

    @property
    def equator_length_measure(self) -> np.ndarray:
        """Arc-length weights of the equator nodes (the boundary circle)."""
        return np.full(self.n_phi, self.dphi)

    def to_dofs(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.concatenate([values[:-1].ravel(), [values[-1].mean()]])

    def from_dofs(self, vec: np.ndarray, n_cols: int | None = None) -> np.ndarray:
        n_cols = self.n_phi if n_cols is None else n_cols
        body = np.asarray(vec[:-1]).reshape(self.n_theta - 1, n_cols)
        return np.vstack([body, np.full((1, n_cols), vec[-1])])

    def mass_vector(self, n_cols: int | None = None) -> np.ndarray:
        n_cols = self.n_phi if n_cols is None else n_cols
        m = self.node_measure[:, 0]
        return np.concatenate([np.repeat(m[:-1], n_cols), [m[-1] * n_cols]])

    def stiffness(self, n_cols: int | None = None, phi_factor: float = 1.0) -> sp.csr_matrix:
        """Stiffness matrix in dof space on ``n_cols`` periodic phi columns."""
        n_cols = self.n_phi if n_cols is None else n_cols
        nt = self.n_theta
        n_dof = (nt - 1) * n_cols + 1
        idx = np.arange((nt - 1) * n_cols).reshape(nt - 1, n_cols)
        pole = n_dof - 1
        heads, tails, cond = [], [], []
        for j in range(nt - 1):
            nxt = idx[j + 1] if j + 1 < nt - 1 else np.full(n_cols, pole)
            heads.append(idx[j])
            tails.append(nxt)
            cond.append(np.full(n_cols, self.theta_conductance[j]))
            heads.append(idx[j])
            tails.append(np.roll(idx[j], -1))
            cond.append(np.full(n_cols, phi_factor * self.phi_conductance[j]))
        return edge_laplacian(np.concatenate(heads), np.concatenate(tails),
                              np.concatenate(cond), n_dof)

    @cached_property
    def _stiffness_full(self) -> sp.csr_matrix:
        return self.stiffness()


def edge_laplacian(heads, tails, cond, n) -> sp.csr_matrix:
    rows = np.concatenate([heads, tails, heads, tails])
    cols = np.concatenate([heads, tails, tails, heads])
    vals = np.concatenate([cond, cond, -cond, -cond])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_hemisphere_grid(n_theta: int, n_phi: int, params: FractionalParams,
                          grading_gamma: float | None = None) -> HemisphereGrid:
    """Tensor grid on the closed upper hemisphere, graded toward the equator for |a| > 1/2."""
    if not isinstance(params, FractionalParams):
        raise GridError("params must be a FractionalParams instance")
    for name, n in (("n_theta", n_theta), ("n_phi", n_phi)):
        if int(n) != n or n < MIN_NODES:
            raise GridError(f"{name}={n} is below the minimum resolution {MIN_NODES}")
        if n > MAX_NODES:
            raise GridError(f"{name}={n} exceeds the desk-scale cap {MAX_NODES}")
    if n_phi % 2:
        raise GridError(f"n_phi must be even, got {n_phi}")
    a = params.a
    gamma = default_grading(a) if grading_gamma is None else float(grading_gamma)
    if gamma <= 0:
        raise GridError("grading_gamma must be positive")

    theta = 0.5 * math.pi * (np.arange(n_theta) / (n_theta - 1)) ** gamma
    theta[-1] = 0.5 * math.pi
    phi = np.arange(n_phi) * (TWO_PI / n_phi)
    dphi = TWO_PI / n_phi

    # dual cells in theta; weight sin^a cos integrates to sin^(a+1)/(a+1)
    bounds = np.concatenate([[0.0], 0.5 * (theta[1:] + theta[:-1]), [0.5 * math.pi]])
    primitive = np.sin(bounds) ** (a + 1) / (a + 1)
    row_measure = dphi * np.diff(primitive)

    dtheta = np.diff(theta)
    cos_mean = np.diff(np.sin(theta)) / dtheta
    inv_weight = np.diff(_int_sin_pow(-a, theta))
    theta_cond = dphi * cos_mean / inv_weight
    phi_cond = row_measure[:-1] / np.cos(theta[:-1]) ** 2 / dphi ** 2

    node_measure = np.repeat(row_measure[:, None], n_phi, axis=1)
    for arr in (theta, phi, node_measure, theta_cond, phi_cond):
        arr.setflags(write=False)
    return HemisphereGrid(theta, phi, params, node_measure, theta_cond, phi_cond, gamma)


@dataclass(frozen=True, eq=False)
class HalfBallGrid:
    """Shells ``r_nodes`` (origin excluded, it is a separate node) times a hemisphere grid."""

    r_nodes: np.ndarray
    sphere: HemisphereGrid
    volume_measure: np.ndarray
    flat_boundary_measure: np.ndarray

    @property
    def params(self) -> FractionalParams:
        return self.sphere.params

    @property
    def n_r(self) -> int:
        return len(self.r_nodes)

    @property
    def r_max(self) -> float:
        return float(self.r_nodes[-1])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_r,) + self.sphere.shape

    @property
    def key(self) -> tuple:
        return ("halfball", tuple(np.round(self.r_nodes, 15))) + self.sphere.key

    @cached_property
    def radial(self) -> "RadialWeights":
        return RadialWeights.build(self.r_nodes, self.params.a)

    def scaled(self, factor: float) -> "HalfBallGrid":
        """The same grid with all radii multiplied by ``factor``."""
        return make_half_ball_grid(self.r_nodes * factor, self.sphere)


@dataclass(frozen=True, eq=False)
class RadialWeights:
    """Radial integrals of the weighted energy on the shell grid (origin node included).

    ``inner``/``outer`` split each shell's dual interval at the shell radius so that
    ball integrals up to a shell radius are sums of whole pieces.
    """

    edge_cond: np.ndarray        # int r^(2+a) / dr^2 between consecutive shells
    origin_cond: float           # same from the origin to the first shell
    ang_inner: np.ndarray        # int r^a over [r_{i-1/2}, r_i]
    ang_outer: np.ndarray        # int r^a over [r_i, r_{i+1/2}]
    vol_inner: np.ndarray        # int r^(2+a) over the same halves
    vol_outer: np.ndarray
    flat_inner: np.ndarray       # int r dr over the same halves
    flat_outer: np.ndarray

    @classmethod
    def build(cls, r: np.ndarray, a: float) -> "RadialWeights":
        def prim(p, x):
            return x ** (p + 1) / (p + 1)

        mids = 0.5 * (r[1:] + r[:-1])
        lo = np.concatenate([[0.0], mids])
        hi = np.concatenate([mids, [r[-1]]])
        edge = (prim(2 + a, r[1:]) - prim(2 + a, r[:-1])) / np.diff(r) ** 2
        origin = prim(2 + a, r[0]) / r[0] ** 2
        return cls(
            edge_cond=edge, origin_cond=float(origin),
            ang_inner=prim(a, r) - prim(a, lo), ang_outer=prim(a, hi) - prim(a, r),
            vol_inner=prim(2 + a, r) - prim(2 + a, lo), vol_outer=prim(2 + a, hi) - prim(2 + a, r),
            flat_inner=prim(1, r) - prim(1, lo), flat_outer=prim(1, hi) - prim(1, r),
        )

    @property
    def ang(self) -> np.ndarray:
        return self.ang_inner + self.ang_outer


def make_half_ball_grid(r_nodes, sphere: HemisphereGrid) -> HalfBallGrid:
    r = np.asarray(r_nodes, dtype=float).copy()
    if r.ndim != 1 or len(r) < 2 or r[0] <= 0 or np.any(np.diff(r) <= 0):
        raise GridError("r_nodes must be a strictly increasing positive sequence")
    rw = RadialWeights.build(r, sphere.params.a)
    vol = (rw.vol_inner + rw.vol_outer)[:, None, None] * sphere.node_measure[None]
    flat = (rw.flat_inner + rw.flat_outer)[:, None] * np.full(sphere.n_phi, sphere.dphi)[None]
    for arr in (r, vol, flat):
        arr.setflags(write=False)
    return HalfBallGrid(r, sphere, vol, flat)


def build_half_ball_grid(n_r: int, sphere: HemisphereGrid, r_min: float = 1e-3) -> HalfBallGrid:
    """Log-spaced shells from ``r_min`` to 1 on top of ``sphere``."""
    if int(n_r) != n_r or n_r < 4:
        raise GridError(f"n_r must be an integer >= 4, got {n_r}")
    if n_r > MAX_NODES:
        raise GridError(f"n_r={n_r} exceeds the desk-scale cap {MAX_NODES}")
    if not (0.0 < r_min < 1.0):
        raise GridError("r_min must lie in (0, 1)")
    r = np.geomspace(r_min, 1.0, n_r)
    r[-1] = 1.0
    return make_half_ball_grid(r, sphere)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid.

    On a hemisphere grid ``values`` has shape ``(n_theta, n_phi)`` with a constant
    pole row; on a half-ball grid it has shape ``(n_r, n_theta, n_phi)`` and
    ``center`` holds the value at the origin.
    """

    grid: HemisphereGrid | HalfBallGrid
    values: np.ndarray
    center: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"field shape {vals.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError("field values must be finite")
        if isinstance(self.grid, HalfBallGrid):
            center = 0.0 if self.center is None else float(self.center)
            if not math.isfinite(center):
                raise GridError("center value must be finite")
            object.__setattr__(self, "center", center)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def with_values(self, values, center=None) -> "ScalarField":
        return ScalarField(self.grid, values, center)


def check_same_grid(grid, *fields: ScalarField) -> None:
    for f in fields:
        if f.grid is not grid and f.grid.key != grid.key:
            raise GridError("field does not live on the given grid")


def weighted_l2_inner(f: ScalarField, g: ScalarField, grid: HemisphereGrid) -> float:
    """Quadrature of ``y**a f g`` over the hemisphere (correctly rounded sum)."""
    check_same_grid(grid, f, g)
    return math.fsum((grid.node_measure * f.values * g.values).ravel())


def tangential_energy(values: np.ndarray, grid: HemisphereGrid, phi_factor: float = 1.0) -> float:
    """Edge-sum energy of raw nodal values; ``phi_factor`` scales the phi term."""
    v = np.asarray(values, dtype=float)
    dth = np.diff(v, axis=0)
    dph = np.roll(v[:-1], -1, axis=1) - v[:-1]
    e_t = grid.theta_conductance[:, None] * dth ** 2
    e_p = grid.phi_conductance[:, None] * dph ** 2
    return float(e_t.sum() + phi_factor * e_p.sum())


def weighted_dirichlet_energy(f: ScalarField, grid: HemisphereGrid) -> float:
    """Discrete ``int y^a |grad_S f|^2`` over the hemisphere."""
    check_same_grid(grid, f)
    return tangential_energy(f.values, grid)


# ---------------------------------------------------------------- arc sets

def _norm_angle(x: float) -> float:
    return float(np.mod(x, TWO_PI))


@dataclass(frozen=True)
class ArcSet:
    """Finite union of half-open arcs ``[lo, hi)`` in ``[0, 2pi)``; sorted and disjoint."""

    arcs: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        arcs = []
        for lo, hi in self.arcs:
            lo, hi = float(lo), float(hi)
            if not (0.0 <= lo < hi <= TWO_PI + 1e-12):
                raise GridError(f"invalid arc [{lo}, {hi})")
            arcs.append((lo, min(hi, TWO_PI)))
        arcs.sort()
        merged: list[tuple[float, float]] = []
        for lo, hi in arcs:
            if merged and lo < merged[-1][1] - 1e-12:
                raise GridError("arcs overlap")
            if merged and abs(lo - merged[-1][1]) <= 1e-12:
                merged[-1] = (merged[-1][0], hi)
            else:
                merged.append((lo, hi))
        object.__setattr__(self, "arcs", tuple(merged))

    @classmethod
    def empty(cls) -> "ArcSet":
        return cls(())

    @classmethod
    def full(cls) -> "ArcSet":
        return cls(((0.0, TWO_PI),))

    @property
    def length(self) -> float:
        return math.fsum(hi - lo for lo, hi in self.arcs)

    def complement(self) -> "ArcSet":
        out, cursor = [], 0.0
        for lo, hi in self.arcs:
            if lo > cursor + 1e-12:
                out.append((cursor, lo))
            cursor = hi
        if cursor < TWO_PI - 1e-12:
            out.append((cursor, TWO_PI))
        return ArcSet(tuple(out))

    def rotated(self, angle: float) -> "ArcSet":
        pieces = []
        for lo, hi in self.arcs:
            lo2, hi2 = lo + angle, hi + angle
            shift = math.floor(lo2 / TWO_PI) * TWO_PI
            lo2, hi2 = lo2 - shift, hi2 - shift
            if hi2 > TWO_PI + 1e-12:
                pieces.append((lo2, TWO_PI))
                pieces.append((0.0, hi2 - TWO_PI))
            else:
                pieces.append((lo2, min(hi2, TWO_PI)))
        return ArcSet(tuple(p for p in pieces if p[1] - p[0] > 1e-12))

    def isclose(self, other: "ArcSet", tol: float = 1e-9) -> bool:
        if len(self.arcs) != len(other.arcs):
            return False
        return all(abs(a - c) <= tol and abs(b - d) <= tol
                   for (a, b), (c, d) in zip(self.arcs, other.arcs))

    def _open_intervals(self) -> list[tuple[float, float]]:
        """Open interior as intervals, merging across the 0 = 2pi seam."""
        arcs = list(self.arcs)
        if len(arcs) >= 2 and arcs[0][0] <= 1e-12 and arcs[-1][1] >= TWO_PI - 1e-12:
            first = arcs.pop(0)
            last = arcs.pop()
            arcs.append((last[0], first[1] + TWO_PI))
        return arcs

    def interior_mask(self, phi: np.ndarray) -> np.ndarray:
        """True for angles strictly inside the arc set (endpoints excluded)."""
        phi = np.mod(np.asarray(phi, dtype=float), TWO_PI)
        if self.length >= TWO_PI - 1e-12:
            return np.ones(phi.shape, dtype=bool)
        mask = np.zeros(phi.shape, dtype=bool)
        tol = 1e-9
        for lo, hi in self._open_intervals():
            for shift in (0.0, TWO_PI):
                p = phi + shift
                mask |= (p > lo + tol) & (p < hi - tol)
        return mask

    def is_aligned(self, n_phi: int) -> bool:
        step = TWO_PI / n_phi
        for lo, hi in self.arcs:
            for x in (lo, hi):
                if abs(x / step - round(x / step)) > 1e-9:
                    return False
        return True

    def snapped(self, n_phi: int) -> "ArcSet":
        step = TWO_PI / n_phi
        arcs = []
        for lo, hi in self.arcs:
            lo2, hi2 = round(lo / step) * step, round(hi / step) * step
            if hi2 > lo2:
                arcs.append((lo2, hi2))
        return ArcSet(tuple(arcs))


def canonical_omega_k(k: int) -> ArcSet:
    """The k arcs ``[(i-1) 2pi/k, (i-1/2) 2pi/k)``, i = 1..k."""
    if int(k) != k or k < 1:
        raise GridError(f"k must be a positive integer, got {k!r}")
    period = TWO_PI / k
    return ArcSet(tuple((i * period, (i + 0.5) * period) for i in range(k)))


def reflection_index(n_phi: int, m: int) -> np.ndarray:
    """Column permutation of the reflection across the plane at angle ``m * dphi / 2``."""
    return np.mod(m - np.arange(n_phi), n_phi)


def rotation_average(values: np.ndarray, k: int) -> np.ndarray:
    """Exact projection onto fields invariant under rotation by 2pi/k (last axis is phi)."""
    if k == 1:
        return np.array(values, dtype=float)
    n = values.shape[-1]
    if n % k:
        raise GridError(f"k={k} does not divide n_phi={n}")
    period = n // k
    folded = values.reshape(values.shape[:-1] + (k, period)).mean(axis=-2)
    return np.tile(folded, (1,) * (values.ndim - 1) + (k,))
