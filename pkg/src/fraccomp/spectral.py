"""First eigenvalues of the weighted spherical operator with mixed boundary conditions.

Dirichlet nodes are the equator nodes outside the open arc set; everything else
is free and the Neumann condition on the arcs is the natural one of the weak form.
Three routes are provided: a plain solve for any aligned arc set, a solve on the
fundamental domain of the k-fold rotation group, and the folded solve on the
half circle with the phi part of the energy multiplied by k**2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    ArcSet,
    FractionalParams,
    GridError,
    HemisphereGrid,
    ScalarField,
    canonical_omega_k,
)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    """An eigen- or linear solve failed or did not converge."""


@dataclass(frozen=True, eq=False)
class EigenResult:
    lam: float
    eigenfunction: ScalarField
    exponent_d: float
    omega: ArcSet
    residual: float
    k: int = 1
    phi_factor: float = 1.0
    iterations: int = 0

    @property
    def lambda_(self) -> float:
        return self.lam


# ------------------------------------------------------------ exponent maps

def characteristic_exponent(t: float, params: FractionalParams) -> float:
    """Homogeneity degree d with d(d + N - 1 + a) = t."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    h = (params.dim_n - 2 * params.s) / 2.0
    # h**2 + t under the root; written to avoid cancellation for small t
    return t / (math.sqrt(h * h + t) + h) if t > 0 else 0.0


def exponent_to_eigenvalue(d: float, params: FractionalParams) -> float:
    if d < 0:
        raise ValueError(f"d must be nonnegative, got {d}")
    return d * (d + params.dim_n - 1 + params.a)


def lambda_empty(params: FractionalParams) -> float:
    return exponent_to_eigenvalue(2 * params.s, params)


# ------------------------------------------------------------ linear algebra

def inverse_iteration(K: sp.spmatrix, m: np.ndarray, x0: np.ndarray, shift: float | None = None,
                      tol: float = 1e-10, max_iter: int = 500):
    """Smallest eigenpair of ``K x = lam diag(m) x`` by shifted inverse iteration.

    Starts from ``shift`` (0 by default) and, once the Rayleigh quotient settles,
    refactors once with a shift just below it.  Returns ``(lam, x, residual, iters)``
    with ``x`` M-normalised and of positive mean.
    """
    K = sp.csc_matrix(K)
    M = sp.diags(m)
    sigma = 0.0 if shift is None else float(shift)
    x = np.asarray(x0, dtype=float).copy()
    x /= math.sqrt(x @ (m * x))
    lam_old = np.inf
    refreshed = False
    lu = _factor(K - sigma * M)
    lam, res, res_old = np.nan, np.inf, np.inf
    for it in range(1, max_iter + 1):
        y = lu.solve(m * x)
        x = y / math.sqrt(y @ (m * y))
        Kx = K @ x
        lam = float(x @ Kx)
        r = Kx - lam * (m * x)
        res = float(np.linalg.norm(r) / np.linalg.norm(m * x))
        # stop at tol, or at the roundoff floor once below the acceptance threshold
        if res < tol or (res < RESIDUAL_TOL and res > 0.5 * res_old):
            break
        res_old = res
        if not refreshed and abs(lam - lam_old) < 1e-6 * max(abs(lam), 1e-12) and lam > 0:
            new_sigma = lam * (1 - 1e-3) if lam > 1e-8 else sigma
            if new_sigma > sigma:
                sigma = new_sigma
                lu = _factor(K - sigma * M)
            refreshed = True
        lam_old = lam
    else:
        raise SolverError(f"inverse iteration did not reach residual {tol:g} (got {res:.3e})")
    if x.sum() < 0:
        x = -x
    return lam, x, res, it


def _factor(A):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SolverError(f"singular stiffness after constraint elimination: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
        raise SolverError("singular stiffness after constraint elimination")
    return lu


def _solve_mixed(grid: HemisphereGrid, neumann_cols: np.ndarray, n_cols: int,
                 phi_factor: float) -> tuple[float, np.ndarray, float, int]:
    """Eigenpair on ``n_cols`` periodic columns with Dirichlet on equator columns not in the mask."""
    K = grid.stiffness(n_cols, phi_factor)
    m = grid.mass_vector(n_cols)
    n = K.shape[0]
    free = np.ones(n, dtype=bool)
    free[:n_cols] = neumann_cols
    Kf = K[free][:, free]
    mf = m[free]
    shift = None if not free.all() else -1.0
    lam, xf, res, its = inverse_iteration(Kf, mf, np.ones(free.sum()), shift=shift)
    x = np.zeros(n)
    x[free] = xf
    return max(lam, 0.0), x, res, its


def _result(grid, dofs, n_cols, lam, res, omega, k, phi_factor, its) -> EigenResult:
    vals = grid.from_dofs(dofs, n_cols)
    if n_cols != grid.n_phi:
        vals = np.tile(vals, (1, grid.n_phi // n_cols))
        # renormalise the unfolded copy: the fundamental domain carried 1/k of the mass
        vals = vals / math.sqrt(grid.n_phi // n_cols)
    vals = np.where(np.abs(vals) < 1e-14, 0.0, vals)
    f = ScalarField(grid, vals)
    return EigenResult(lam, f, characteristic_exponent(max(lam, 0.0), grid.params), omega, res,
                       k, phi_factor, its)


# ------------------------------------------------------------ public solvers

def first_eigenvalue(grid: HemisphereGrid, omega: ArcSet) -> EigenResult:
    """lambda_1(omega): Dirichlet off omega, natural condition on omega."""
    if not omega.is_aligned(grid.n_phi):
        raise GridError("arc endpoints must lie on phi nodes; use ArcSet.snapped(n_phi)")
    mask = omega.interior_mask(grid.phi_nodes)
    lam, x, res, its = _solve_mixed(grid, mask, grid.n_phi, 1.0)
    return _result(grid, x, grid.n_phi, lam, res, omega, 1, 1.0, its)


def _check_k(grid: HemisphereGrid, k: int) -> None:
    if int(k) != k or k < 1:
        raise GridError(f"k must be a positive integer, got {k!r}")
    if (grid.n_phi // 2) % k:
        raise GridError(f"k={k} does not divide n_phi/2={grid.n_phi // 2}")


def first_eigenvalue_symmetric(grid: HemisphereGrid, k: int) -> EigenResult:
    """lambda_1(k) over fields invariant under rotation by 2pi/k, Dirichlet off omega_k.

    Solved on one period of ``n_phi/k`` columns with periodic closure and tiled back.
    """
    _check_k(grid, k)
    n_cols = grid.n_phi // k
    omega = canonical_omega_k(k)
    mask = omega.interior_mask(grid.phi_nodes[:n_cols])
    lam, x, res, its = _solve_mixed(grid, mask, n_cols, 1.0)
    return _result(grid, x, n_cols, lam, res, omega, k, 1.0, its)


def first_eigenvalue_folded(grid: HemisphereGrid, k: int) -> EigenResult:
    """lambda_1(k) via the half-circle problem with the phi energy scaled by k**2.

    Works on the full grid, so k need not divide n_phi/2.
    """
    if int(k) != k or k < 1:
        raise GridError(f"k must be a positive integer, got {k!r}")
    omega = canonical_omega_k(1)
    mask = omega.interior_mask(grid.phi_nodes)
    lam, x, res, its = _solve_mixed(grid, mask, grid.n_phi, float(k * k))
    return _result(grid, x, grid.n_phi, lam, res, omega, k, float(k * k), its)


@dataclass(frozen=True)
class SweepRow:
    k: int
    lam: float
    d: float
    residual: float


def sweep_k(grid: HemisphereGrid, k_max: int, method: str = "folded") -> list[SweepRow]:
    """Rows (k, lambda_1(k), d(k)) for k = 1..k_max.

    The folded route is the default because its discrete eigenvalue is monotone in k
    by construction (the energy is monotone in the phi factor).
    """
    if int(k_max) != k_max or k_max < 1:
        raise GridError(f"k_max must be a positive integer, got {k_max!r}")
    if method == "symmetric":
        for k in range(1, k_max + 1):
            _check_k(grid, k)
    solver = {"folded": first_eigenvalue_folded, "symmetric": first_eigenvalue_symmetric}[method]
    rows = []
    for k in range(1, k_max + 1):
        res = solver(grid, k)
        rows.append(SweepRow(k, res.lam, res.exponent_d, res.residual))
        log.info("k=%d lambda=%.8f d=%.8f", k, res.lam, res.exponent_d)
    return rows


# ------------------------------------------------------------ beta-regularised pair

@dataclass(frozen=True, eq=False)
class SphereBetaPair:
    u: ScalarField
    v: ScalarField
    beta: float
    lambda_beta: float
    interaction: float
    J: float
    k: int
    converged: bool
    history: tuple = field(default=(), repr=False)


def reflect_columns(vals: np.ndarray) -> np.ndarray:
    """Composition with phi -> -phi on the last axis (node l -> -l mod n)."""
    n = vals.shape[-1]
    return vals[..., np.mod(-np.arange(n), n)]


def sphere_beta_pair(grid: HemisphereGrid, k: int, beta: float, max_iter: int = 500,
                     rtol: float = 1e-10, start: np.ndarray | None = None) -> SphereBetaPair:
    """Minimise J_beta over normalised pairs (u, u o sigma) invariant under 2pi/k rotations.

    Each step solves the linear ground-state problem for u with boundary reaction
    ``beta w**2`` where ``w = x o sigma`` is the reflected current iterate, then moves
    toward that ground state with a step halved until ``J_beta(x, x o sigma)`` does not
    increase.  The recorded history is therefore nonincreasing.
    """
    _check_k(grid, k)
    if not beta > 0:
        raise ValueError("beta must be positive")
    n_cols = grid.n_phi // k
    K = grid.stiffness(n_cols)
    m = grid.mass_vector(n_cols)
    n = K.shape[0]
    edge_w = grid.dphi

    if start is None:
        start = first_eigenvalue_symmetric(grid, k).eigenfunction.values
    x = grid.to_dofs(start[:, :n_cols]) if start.shape[1] != n_cols else grid.to_dofs(start)
    x = np.maximum(x, 0.0)
    x /= math.sqrt(x @ (m * x))

    def reflect(dofs):
        vals = grid.from_dofs(dofs, n_cols)
        return grid.to_dofs(reflect_columns(vals))

    # x is normalised on one period; the full-hemisphere field is tile(x)/sqrt(k), which
    # has the same energy and 1/k of the period's boundary interaction.
    def energies(xu, xv):
        e_u = float(xu @ (K @ xu))
        e_v = float(xv @ (K @ xv))
        inter = edge_w * beta / k * float(np.sum(xu[:n_cols] ** 2 * xv[:n_cols] ** 2))
        return e_u, e_v, inter

    def J_sym(xu):
        e_u, e_v, inter = energies(xu, reflect(xu))
        return 0.5 * (e_u + e_v) + 0.5 * inter

    J_cur = J_sym(x)
    history = [J_cur]
    converged = False
    alpha = 1.0
    for it in range(1, max_iter + 1):
        w = reflect(x)
        react = np.zeros(n)
        react[:n_cols] = edge_w * beta / k * w[:n_cols] ** 2
        _, target, _, _ = inverse_iteration(K + sp.diags(react), m, x, shift=0.0, tol=1e-11)
        target = np.maximum(target, 0.0)
        # relaxed update with backtracking: the undamped map can lock into a 2-cycle on
        # the nodes fixed by the reflection
        alpha = min(1.0, 2.0 * alpha)
        while True:
            cand = x + alpha * (target - x)
            cand /= math.sqrt(cand @ (m * cand))
            J_new = J_sym(cand)
            if J_new <= J_cur or alpha < 1.0 / 1024:
                break
            alpha *= 0.5
        if J_new > J_cur:
            break
        x = cand
        delta = J_cur - J_new
        J_cur = J_new
        history.append(J_cur)
        if delta < rtol * abs(J_cur):
            converged = True
            break
    if not converged:
        log.warning("sphere_beta_pair: no convergence after %d iterations", it)

    v_dofs = reflect(x)
    e_u, e_v, inter = energies(x, v_dofs)
    scale = 1.0 / math.sqrt(k)
    u_vals = np.tile(grid.from_dofs(x, n_cols), (1, k)) * scale
    v_vals = np.tile(grid.from_dofs(v_dofs, n_cols), (1, k)) * scale
    J_final = 0.5 * (e_u + e_v) + 0.5 * inter
    return SphereBetaPair(ScalarField(grid, u_vals), ScalarField(grid, v_vals), float(beta),
                          float(e_u + inter), float(inter), float(J_final), k, converged,
                          tuple(history))
