"""Polarization and foliated Schwarz symmetrization of hemisphere fields.

Both operations act row by row (one theta level at a time) and only permute values
within a row, so weighted L2 norms are preserved exactly.  The rearrangement is
centred at the equator point phi = pi/2.  To make "nearest to the centre" a strict
order on the nodes, the centre is nudged by a quarter of the phi spacing toward
decreasing phi; this is the tie-break toward the right neighbour and it guarantees
that every aligned half-space containing the centre puts the nearer node of each
mirror pair on its own side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import TWO_PI, GridError, HemisphereGrid, ScalarField


def _center(grid: HemisphereGrid) -> float:
    return 0.5 * math.pi - 0.25 * grid.dphi


def _circ_dist(x, c):
    d = np.mod(np.asarray(x) - c, TWO_PI)
    return np.minimum(d, TWO_PI - d)


@dataclass(frozen=True)
class HalfSpaceThroughAxis:
    """Half space ``{x . n > 0}`` with ``n`` at ``normal_angle``; its boundary plane contains the y-axis."""

    normal_angle: float

    def __post_init__(self):
        object.__setattr__(self, "normal_angle", float(np.mod(self.normal_angle, TWO_PI)))

    def plane_index(self, grid: HemisphereGrid) -> int:
        """m such that the reflection maps node l to (m - l) mod n_phi; error if unaligned."""
        # reflection phi -> 2 alpha - phi with alpha = normal + pi/2
        m = (2 * self.normal_angle + math.pi) / grid.dphi
        if abs(m - round(m)) > 1e-9:
            raise GridError(f"half space at normal angle {self.normal_angle} is not aligned to the grid")
        return int(round(m)) % grid.n_phi

    def side(self, grid: HemisphereGrid) -> np.ndarray:
        """+1 for phi nodes inside H, -1 outside, 0 on the boundary plane."""
        c = np.cos(grid.phi_nodes - self.normal_angle)
        out = np.sign(c)
        out[np.abs(c) < 1e-12] = 0
        return out.astype(int)

    def contains_center(self, grid: HemisphereGrid) -> bool:
        return math.cos(_center(grid) - self.normal_angle) > 0


def aligned_half_spaces(grid: HemisphereGrid) -> list[HalfSpaceThroughAxis]:
    """The n_phi aligned half spaces (planes at multiples of dphi/2) that contain the centre."""
    out = []
    c = _center(grid)
    for m in range(grid.n_phi):
        alpha = 0.5 * m * grid.dphi
        nu = alpha - 0.5 * math.pi
        if math.cos(c - nu) < 0:
            nu += math.pi
        out.append(HalfSpaceThroughAxis(nu))
    return out


def _check_nonneg(f: ScalarField) -> None:
    if np.any(f.values < 0):
        raise ValueError("rearrangements are defined for nonnegative fields")
    if not isinstance(f.grid, HemisphereGrid):
        raise GridError("rearrangements act on hemisphere fields")


def _polarize_values(vals: np.ndarray, m: int, side: np.ndarray) -> np.ndarray:
    n = vals.shape[-1]
    mirror = vals[..., np.mod(m - np.arange(n), n)]
    out = np.where(side > 0, np.maximum(vals, mirror), np.minimum(vals, mirror))
    return np.where(side == 0, vals, out)


def polarize(f: ScalarField, H: HalfSpaceThroughAxis) -> ScalarField:
    """Two-point rearrangement: the larger value of each mirror pair goes to the H side."""
    _check_nonneg(f)
    m = H.plane_index(f.grid)
    return f.with_values(_polarize_values(f.values, m, H.side(f.grid)))


def schwarz_order(n_phi: int) -> np.ndarray:
    """Indices of n_phi equispaced nodes sorted by distance to the (nudged) centre."""
    dphi = TWO_PI / n_phi
    phi = np.arange(n_phi) * dphi
    return np.argsort(_circ_dist(phi, 0.5 * math.pi - 0.25 * dphi), kind="stable")


def arrange_row(values) -> np.ndarray:
    """Symmetric decreasing arrangement about pi/2 of one periodic row of values."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[schwarz_order(len(values))] = -np.sort(-values)
    return out


def foliated_schwarz(f: ScalarField) -> ScalarField:
    """Per-level decreasing rearrangement about phi = pi/2."""
    _check_nonneg(f)
    order = schwarz_order(f.grid.n_phi)
    ranked = -np.sort(-f.values, axis=1)
    out = np.empty_like(ranked)
    out[:, order] = ranked
    return f.with_values(out)


def _weighted_dist(a: np.ndarray, b: np.ndarray, grid: HemisphereGrid) -> np.ndarray:
    """Weighted L2 distance over the last two axes."""
    return np.sqrt(np.sum(grid.node_measure * (a - b) ** 2, axis=(-2, -1)))


@dataclass(frozen=True)
class TraceRow:
    iter: int
    distance: float
    chosen_plane_angle: float


def polarization_sequence(f: ScalarField, max_iter: int = 10_000, tol: float = 1e-8):
    """Greedy polarizations toward ``foliated_schwarz(f)``.

    At every step all aligned half spaces containing the centre are tried and the
    one giving the smallest weighted distance to the symmetrization is applied.
    Returns ``(final_field, trace)``; trace row 0 is the starting distance.
    """
    _check_nonneg(f)
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = f.grid
    target = foliated_schwarz(f).values
    spaces = aligned_half_spaces(grid)
    idx = np.array([h.plane_index(grid) for h in spaces])
    sides = np.array([h.side(grid) for h in spaces])
    n = grid.n_phi
    mirrors = np.mod(idx[:, None] - np.arange(n)[None, :], n)

    vals = f.values.copy()
    dist = float(_weighted_dist(vals, target, grid))
    trace = [TraceRow(0, dist, float("nan"))]
    it = 0
    while dist >= tol and it < max_iter:
        it += 1
        mirror = vals[:, mirrors].transpose(1, 0, 2)          # (planes, rows, cols)
        side = sides[:, None, :]
        cand = np.where(side > 0, np.maximum(vals, mirror), np.minimum(vals, mirror))
        cand = np.where(side == 0, vals[None], cand)
        dists = _weighted_dist(cand, target[None], grid)
        best = int(np.argmin(dists))
        if dists[best] >= dist:
            # no aligned half space improves; stop and report
            break
        vals = cand[best]
        dist = float(dists[best])
        trace.append(TraceRow(it, dist, spaces[best].normal_angle))
    return f.with_values(vals), trace
