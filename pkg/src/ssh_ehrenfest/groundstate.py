"""Dimerized ground-state geometry, harmonic normal modes and Wigner sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .model import NuclearPhase, SshParams, build_h_e, electronic_force, lattice_energy_and_force


class OptimizationError(RuntimeError):
    pass


class NotAMinimumError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizedGeometry:
    u_star: np.ndarray
    bo_energy: float
    electronic_energy: float
    residual_force_norm: float
    orbital_energies: np.ndarray
    n_electrons: int

    @property
    def gap(self) -> float:
        """HOMO-LUMO single-particle gap (eV)."""
        homo = self.n_electrons // 2 - 1
        return float(self.orbital_energies[homo + 1] - self.orbital_energies[homo])

    @property
    def bond_changes(self) -> np.ndarray:
        return np.diff(self.u_star)


@dataclass(frozen=True)
class NormalModes:
    frequencies: np.ndarray  # rad/fs, ascending
    mode_vectors: np.ndarray  # (n_free, n_modes), columns orthonormal
    hessian: np.ndarray  # symmetrized, eV/A^2
    free_sites: np.ndarray
    asymmetry: float  # max |H - H^T| / max |H| before symmetrization


def _full(params: SshParams, u_free: np.ndarray) -> np.ndarray:
    u = np.zeros(params.n_sites)
    u[params.free_sites] = u_free
    return u


def bo_energy_and_gradient(params: SshParams, u, n_electrons: int | None = None):
    """Closed-shell Born-Oppenheimer energy and its gradient over all sites.

    ``E_BO = 2 sum_occ eps_i(u) + (K/2) sum (u[n+1] - u[n])^2``. The gradient
    uses Hellmann-Feynman for the electronic part.
    """
    n_electrons = params.n_sites if n_electrons is None else n_electrons
    n_occ = n_electrons // 2
    eps, v = np.linalg.eigh(build_h_e(params, u))
    occ = v[:, :n_occ]
    gamma = 2.0 * occ @ occ.T
    e_el = 2.0 * eps[:n_occ].sum()
    spring, _, f_spring = lattice_energy_and_force(params, NuclearPhase.at_rest(u))
    grad = -(electronic_force(params, gamma) + f_spring)
    return e_el + spring, grad, e_el, eps


def optimize_geometry(
    params: SshParams,
    n_electrons: int | None = None,
    tolerance: float = 1e-8,
    max_iter: int = 2000,
    start_amplitude: float = 0.05,
) -> OptimizedGeometry:
    """Minimize the BO energy over the free (unclamped) displacements.

    Both dimerization phases are tried as starting points and the lower-energy
    minimum is returned.
    """
    n_electrons = params.n_sites if n_electrons is None else n_electrons
    if n_electrons != params.n_sites:
        raise ValueError("only neutral chains (n_electrons == n_sites) are supported")
    free = params.free_sites

    def fun(x):
        e, g, _, _ = bo_energy_and_gradient(params, _full(params, x), n_electrons)
        return e, g[free]

    best = None
    pattern = (-1.0) ** np.arange(1, len(free) + 1)
    for sign in (+1.0, -1.0):
        x0 = sign * start_amplitude * pattern
        res = minimize(fun, x0, jac=True, method="BFGS", options={"gtol": tolerance * 0.1, "maxiter": max_iter})
        # Newton polish; BFGS often stalls a little above gtol on line-search precision
        x = res.x
        for _ in range(5):
            e, g = fun(x)
            if np.linalg.norm(g) <= tolerance * 0.1:
                break
            hess = _fd_hessian(lambda y: fun(y)[1], x, 1e-5)
            x = x - np.linalg.solve(0.5 * (hess + hess.T), g)
        e, g = fun(x)
        if best is None or e < best[0]:
            best = (e, x, g)
    e, x, g = best
    gnorm = float(np.linalg.norm(g))
    if gnorm > tolerance:
        raise OptimizationError(f"geometry optimization did not converge: |grad| = {gnorm:.3e}")
    u = _full(params, x)
    e_bo, _, e_el, eps = bo_energy_and_gradient(params, u, n_electrons)
    return OptimizedGeometry(u, float(e_bo), float(e_el), gnorm, eps, n_electrons)


def _fd_hessian(grad, x, step):
    n = len(x)
    h = np.empty((n, n))
    for k in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[k] += step
        xm[k] -= step
        h[:, k] = (grad(xp) - grad(xm)) / (2 * step)
    return h


def hessian_and_modes(params: SshParams, geom: OptimizedGeometry, fd_step: float = 1e-4) -> NormalModes:
    """Harmonic normal modes from central differences of the analytic BO gradient."""
    free = params.free_sites

    def grad(x):
        return bo_energy_and_gradient(params, _full(params, x), geom.n_electrons)[1][free]

    h = _fd_hessian(grad, geom.u_star[free].copy(), fd_step)
    asym = float(np.abs(h - h.T).max() / np.abs(h).max())
    h = 0.5 * (h + h.T)
    lam, vecs = np.linalg.eigh(h)
    if np.any(lam <= 0):
        raise NotAMinimumError(f"Hessian has non-positive eigenvalues {lam[lam <= 0]}; geometry is a saddle")
    omega = np.sqrt(lam / params.mass)
    return NormalModes(omega, vecs, h, free, asym)


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible random stream for trajectory ``index``."""
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(index),)))


def sample_normal_coordinates(modes: NormalModes, params: SshParams, rng: np.random.Generator, size=None):
    """Draw normal coordinates and momenta from the 0 K harmonic Wigner function.

    ``q_k ~ N(0, hbar / (2 M w_k))`` and ``p_k ~ N(0, hbar M w_k / 2)``.
    """
    w = modes.frequencies
    shape = (len(w),) if size is None else (size, len(w))
    sig_q = np.sqrt(params.hbar / (2.0 * params.mass * w))
    sig_p = np.sqrt(params.hbar * params.mass * w / 2.0)
    q = rng.standard_normal(shape) * sig_q
    p = rng.standard_normal(shape) * sig_p
    return q, p


def sample_wigner(modes: NormalModes, params: SshParams, geom: OptimizedGeometry, rng: np.random.Generator) -> NuclearPhase:
    """One phase-space point of the ground-state nuclear Wigner distribution."""
    q, pq = sample_normal_coordinates(modes, params, rng)
    u = geom.u_star.copy()
    p = np.zeros(params.n_sites)
    u[modes.free_sites] += modes.mode_vectors @ q
    p[modes.free_sites] = modes.mode_vectors @ pq
    return NuclearPhase(u, p)


def uniform_chain_frequencies(params: SshParams) -> np.ndarray:
    """Analytic frequencies of the bare fixed-end spring chain (alpha = 0)."""
    n_free = params.n_sites - 2
    k = np.arange(1, n_free + 1)
    return 2.0 * np.sqrt(params.k_spring / params.mass) * np.sin(k * np.pi / (2 * (n_free + 1)))
