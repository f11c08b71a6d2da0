"""Weighted Dirichlet problems on the half-ball grid.

The discrete energy is an edge sum on the shell grid plus an origin node::

    radial edges   m_jl * int r^(2+a) dr / dr^2 * (u[i+1] - u[i])**2
    origin edges   m_jl * int_0^r0 r^(2+a) dr / r0^2 * (u[0] - u_origin)**2
    shell edges    (sphere edge conductance) * int r^a dr * (difference)**2

Every coefficient is independent of phi, so on ``n_c`` periodic phi columns the
operator block-diagonalises under the real FFT.  For each Fourier mode the
unknowns in the (r, theta) plane are reduced to the flat-boundary trace (the
equator row of every free shell) by a Schur complement; the nonlinear coupling
only lives on that trace, so all iterations run on a small vector and the
volume field is rebuilt once at the end.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import HalfBallGrid, edge_laplacian


def shell_energy_parts(values: np.ndarray, center: float, grid: HalfBallGrid):
    """Per-piece energies of a volume field.

    Returns ``(radial, origin, tangential)``: radial[i] is the edge energy between
    shells i and i+1, origin the origin-cell energy, tangential[i] the raw sphere
    edge sum on shell i (to be multiplied by radial weights of r^a).
    """
    sph = grid.sphere
    rw = grid.radial
    m = sph.node_measure
    du = np.diff(values, axis=0)
    radial = rw.edge_cond * np.einsum("jl,ijl->i", m, du ** 2)
    origin = rw.origin_cond * float(np.sum(m * (values[0] - center) ** 2))
    dth = np.diff(values, axis=1)
    dph = np.roll(values[:, :-1], -1, axis=2) - values[:, :-1]
    tang = (np.einsum("j,ijl->i", sph.theta_conductance, dth ** 2)
            + np.einsum("j,ijl->i", sph.phi_conductance, dph ** 2))
    return radial, origin, tang


def dirichlet_energy(values: np.ndarray, center: float, grid: HalfBallGrid) -> float:
    """Discrete ``int_{B_1^+} y^a |grad u|^2`` of a volume field."""
    radial, origin, tang = shell_energy_parts(values, center, grid)
    return float(radial.sum() + origin + np.dot(grid.radial.ang, tang))


class FourierSchurOperator:
    """Schur-complement representation of the volume energy on the flat trace.

    The reduced unknown is ``u_B`` of shape ``(n_r - 1, n_c)``: the equator node
    of every shell except the outermost one, which carries Dirichlet data.
    """

    def __init__(self, grid: HalfBallGrid, n_cols: int):
        self.grid = grid
        self.n_c = n_cols
        sph = grid.sphere
        rw = grid.radial
        n_r, nt = grid.n_r, sph.n_theta
        self.n_r, self.nt = n_r, nt
        nrow = nt - 1
        n_ring = n_r * nrow
        self.n_ring = n_ring
        pole0 = n_ring
        origin = n_ring + n_r
        n_all = origin + 1
        ring = np.arange(n_ring).reshape(n_r, nrow)
        meas = sph.node_measure[:, 0]
        ct, cp = sph.theta_conductance, sph.phi_conductance

        heads, tails, cond = [], [], []

        def add(h, t, c):
            heads.append(np.atleast_1d(h))
            tails.append(np.atleast_1d(t))
            cond.append(np.broadcast_to(np.asarray(c, float), np.atleast_1d(h).shape).copy())

        for i in range(n_r):
            add(ring[i, :-1], ring[i, 1:], ct[:-1] * rw.ang[i])
            add(ring[i, -1], pole0 + i, ct[-1] * rw.ang[i])
        for i in range(n_r - 1):
            add(ring[i], ring[i + 1], meas[:-1] * rw.edge_cond[i])
            add(pole0 + i, pole0 + i + 1, meas[-1] * rw.edge_cond[i])
        add(ring[0], np.full(nrow, origin), meas[:-1] * rw.origin_cond)
        add(pole0, origin, meas[-1] * rw.origin_cond)
        L = edge_laplacian(np.concatenate(heads), np.concatenate(tails),
                           np.concatenate(cond), n_all).tocsr()
        phi_diag = (cp[None, :] * rw.ang[:, None]).ravel()     # ring order

        is_B = np.zeros(n_all, bool)
        is_B[ring[:-1, 0]] = True
        is_D = np.zeros(n_all, bool)
        is_D[ring[-1]] = True
        is_D[pole0 + n_r - 1] = True
        self.B_idx = ring[:-1, 0]
        self.D_ring = ring[-1]

        self.modes = np.arange(n_cols // 2 + 1)
        self.weights = np.where((self.modes == 0) | (2 * self.modes == n_cols), 1.0, 2.0)
        self.S_BB, self.S_BD, self.S_DD = [], [], []
        self.lu, self.A_IB, self.A_ID, self.I_idx = [], [], [], []
        for mode in self.modes:
            lam_m = 2.0 - 2.0 * math.cos(2 * math.pi * mode / n_cols)
            if mode == 0:
                A = L
                nodes = np.arange(n_all)
            else:
                nodes = np.arange(n_ring)
                # pole and origin carry no phi-variation: their edges stay on the diagonal
                A = L[:n_ring][:, :n_ring] + sp.diags(phi_diag * lam_m)
            A = sp.csr_matrix(A)
            b = is_B[nodes]
            d = is_D[nodes]
            i_ = ~(b | d)
            Bn, Dn, In = np.flatnonzero(b), np.flatnonzero(d), np.flatnonzero(i_)
            A_II = sp.csc_matrix(A[In][:, In])
            A_IX = A[In][:, np.concatenate([Bn, Dn])].toarray()
            lu = spla.splu(A_II)
            Z = lu.solve(A_IX)
            A_XX = A[np.concatenate([Bn, Dn])][:, np.concatenate([Bn, Dn])].toarray()
            S = A_XX - A_IX.T @ Z
            nb = len(Bn)
            self.S_BB.append(S[:nb, :nb])
            self.S_BD.append(S[:nb, nb:])
            self.S_DD.append(S[nb:, nb:])
            self.lu.append(lu)
            self.A_IB.append(sp.csr_matrix(A_IX[:, :nb]))
            self.A_ID.append(sp.csr_matrix(A_IX[:, nb:]))
            self.I_idx.append(In)
        self.S_BB = np.array(self.S_BB)
        # physical diagonal block of the circulant S_BB
        self.S_diag = np.einsum("m,mab->ab", self.weights, self.S_BB) / n_cols
        self.nodes_all = n_all

    # ---- data -------------------------------------------------------------
    def data_hat(self, g_shell: np.ndarray) -> list[np.ndarray]:
        """Fourier coefficients of the outer-shell data ``(nt, n_c)`` per mode (pole in mode 0)."""
        ring = np.fft.rfft(g_shell[:-1], axis=1)       # (nt-1, modes)
        out = []
        for mode in self.modes:
            col = ring[:, mode]
            if mode == 0:
                col = np.concatenate([col, [self.n_c * g_shell[-1, 0]]])
            out.append(col)
        return out

    def load(self, g_hat) -> tuple[np.ndarray, float]:
        """Linear term ``f = -S_BD g`` (physical) and constant ``g^T S_DD g``."""
        f_hat = np.array([-(self.S_BD[k] @ g_hat[k]) for k in range(len(self.modes))]).T
        f = np.fft.irfft(f_hat, n=self.n_c, axis=1)
        c = sum(w * float(np.real(np.vdot(gh, S @ gh)))
                for w, gh, S in zip(self.weights, g_hat, self.S_DD)) / self.n_c
        return f, c

    # ---- operator on the flat trace ---------------------------------------
    def apply(self, u_B: np.ndarray) -> np.ndarray:
        uh = np.fft.rfft(u_B, axis=1)                  # (nb, modes)
        vh = np.einsum("mab,bm->am", self.S_BB, uh)
        return np.fft.irfft(vh, n=self.n_c, axis=1)

    def energy(self, u_B, f, c) -> float:
        """Volume energy of the minimal extension with trace ``u_B`` and the outer data."""
        return float(np.sum(u_B * self.apply(u_B)) - 2.0 * np.sum(f * u_B) + c)

    def solve(self, reaction: np.ndarray, f: np.ndarray, x0: np.ndarray | None = None,
              rtol: float = 1e-12, max_iter: int = 2000) -> np.ndarray:
        """Solve ``(S + diag(reaction)) u = f`` by block-Jacobi preconditioned CG."""
        nb, n_c = f.shape
        blocks = np.broadcast_to(self.S_diag, (n_c, nb, nb)).copy()
        idx = np.arange(nb)
        blocks[:, idx, idx] += reaction.T
        inv = np.linalg.inv(blocks)

        def precond(r):
            return np.einsum("lab,bl->al", inv, r)

        x = np.zeros_like(f) if x0 is None else x0.copy()
        r = f - self.apply(x) - reaction * x
        z = precond(r)
        p = z.copy()
        rz = np.sum(r * z)
        fnorm = np.linalg.norm(f)
        if fnorm == 0:
            return np.zeros_like(f)
        for _ in range(max_iter):
            if np.linalg.norm(r) <= rtol * fnorm:
                break
            Ap = self.apply(p) + reaction * p
            alpha = rz / np.sum(p * Ap)
            x += alpha * p
            r -= alpha * Ap
            z = precond(r)
            rz_new = np.sum(r * z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        return x

    # ---- volume reconstruction -------------------------------------------
    def extend(self, u_B: np.ndarray, g_hat) -> tuple[np.ndarray, float]:
        """Volume values ``(n_r, nt, n_c)`` and origin value of the minimal extension."""
        uh = np.fft.rfft(u_B, axis=1)
        n_modes = len(self.modes)
        ring_hat = np.zeros((self.n_ring, n_modes), complex)
        pole_vals = np.zeros(self.n_r)
        origin_val = 0.0
        for k in range(n_modes):
            rhs = np.asarray(self.A_IB[k] @ uh[:, k] + self.A_ID[k] @ g_hat[k])
            xi = -(self.lu[k].solve(rhs.real.copy()) + 1j * self.lu[k].solve(rhs.imag.copy()))
            full = np.zeros(self.nodes_all if k == 0 else self.n_ring, complex)
            full[self.I_idx[k]] = xi
            if k == 0:
                # B and D positions in mode-0 numbering
                full[self.B_idx] = uh[:, 0]
                full[self.D_ring] = g_hat[0][:-1]
                full[self.n_ring + self.n_r - 1] = g_hat[0][-1]
                pole_vals = np.real(full[self.n_ring:self.n_ring + self.n_r]) / self.n_c
                origin_val = float(np.real(full[-1])) / self.n_c
            else:
                full[self.B_idx] = uh[:, k]
                full[self.D_ring] = g_hat[k]
            ring_hat[:, k] = full[:self.n_ring]
        ring = np.fft.irfft(ring_hat, n=self.n_c, axis=1).reshape(self.n_r, self.nt - 1, self.n_c)
        vals = np.concatenate([ring, np.repeat(pole_vals[:, None, None], self.n_c, axis=2)], axis=1)
        return vals, origin_val
