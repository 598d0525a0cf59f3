"""SSH Hamiltonian for a clamped, neutral polyacetylene chain.

Units are eV, Angstrom and fs throughout. Site indices are 0-based in code; the
clamped end sites are ``0`` and ``n_sites - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

HBAR = 0.6582119569  # eV fs (CODATA)


@dataclass(frozen=True)
class SshParams:
    """Physical constants of the chain.

    Defaults are the standard SSH parametrization of trans-polyacetylene.
    """

    t0: float = 2.5  # eV
    alpha: float = 4.1  # eV / A
    k_spring: float = 21.0  # eV / A^2
    mass: float = 1349.14  # eV fs^2 / A^2
    a_lattice: float = 1.22  # A
    hbar: float = HBAR  # eV fs
    n_sites: int = 4

    def __post_init__(self):
        for name in ("t0", "k_spring", "mass", "a_lattice", "hbar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        # alpha = 0 is allowed: it decouples electrons from the lattice
        if self.alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")
        if self.n_sites < 2 or self.n_sites % 2:
            raise ValueError(f"n_sites must be even and >= 2, got {self.n_sites}")

    def with_(self, **changes) -> "SshParams":
        return replace(self, **changes)

    @property
    def free_sites(self) -> np.ndarray:
        """Indices of the unclamped sites."""
        return np.arange(1, self.n_sites - 1)


def clamp_mask(n_sites: int) -> np.ndarray:
    mask = np.zeros(n_sites, dtype=bool)
    mask[[0, -1]] = True
    return mask


@dataclass
class NuclearPhase:
    """Classical lattice state: displacements ``u`` (A) and momenta ``p`` (eV fs / A)."""

    u: np.ndarray
    p: np.ndarray
    clamp_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.u.shape != self.p.shape:
            raise ValueError(f"u and p shapes differ: {self.u.shape} vs {self.p.shape}")
        if self.clamp_mask is None:
            self.clamp_mask = clamp_mask(self.u.shape[-1])
        if np.any(self.u[..., self.clamp_mask] != 0) or np.any(self.p[..., self.clamp_mask] != 0):
            raise ValueError("clamped sites must have zero displacement and momentum")

    @classmethod
    def at_rest(cls, u) -> "NuclearPhase":
        u = np.asarray(u, dtype=float)
        return cls(u=u, p=np.zeros_like(u))

    def copy(self) -> "NuclearPhase":
        return NuclearPhase(self.u.copy(), self.p.copy(), self.clamp_mask.copy())


def _check_length(params: SshParams, u: np.ndarray) -> None:
    if u.shape[-1] != params.n_sites:
        raise ValueError(f"expected {params.n_sites} displacements, got {u.shape[-1]}")


def hoppings(params: SshParams, u) -> np.ndarray:
    """Bond hopping elements ``-t0 + alpha (u[n+1] - u[n])``, shape ``(..., n_sites - 1)``."""
    u = np.asarray(u, dtype=float)
    _check_length(params, u)
    return -params.t0 + params.alpha * np.diff(u, axis=-1)


def build_h_e(params: SshParams, u) -> np.ndarray:
    """Single-particle electronic Hamiltonian in the site basis.

    Accepts a single displacement vector or a stack of them (leading batch axes),
    and returns real symmetric tridiagonal matrices with zero diagonal.
    """
    t = hoppings(params, u)
    n = params.n_sites
    h = np.zeros(t.shape[:-1] + (n, n))
    i = np.arange(n - 1)
    h[..., i, i + 1] = t
    h[..., i + 1, i] = t
    return h


def h_e_gradient(params: SshParams) -> list[sp.csr_matrix]:
    """Derivatives ``dH_e/du_n`` for every site, as sparse matrices.

    Independent of geometry because the hopping is linear in the displacements.
    """
    n = params.n_sites
    a = params.alpha
    out = []
    for site in range(n):
        rows, cols, vals = [], [], []
        if site > 0:  # bond (site-1, site) lengthens with u[site]
            rows += [site - 1, site]
            cols += [site, site - 1]
            vals += [a, a]
        if site < n - 1:  # bond (site, site+1) shortens with u[site]
            rows += [site, site + 1]
            cols += [site + 1, site]
            vals += [-a, -a]
        out.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
    return out


def bond_orders(gamma: np.ndarray) -> np.ndarray:
    """Spin-summed bond orders ``2 Re gamma[n, n+1]`` from a site-basis 1-RDM (batched)."""
    return 2.0 * np.real(np.diagonal(gamma, offset=1, axis1=-2, axis2=-1))


def bond_gradient_to_sites(g_bond: np.ndarray) -> np.ndarray:
    """Map a derivative with respect to bond extensions onto site displacements."""
    shape = g_bond.shape[:-1] + (g_bond.shape[-1] + 1,)
    g = np.zeros(shape)
    g[..., 1:] += g_bond
    g[..., :-1] -= g_bond
    return g


def electronic_energy(params: SshParams, u, gamma) -> np.ndarray:
    """``Tr[H_e(u) gamma]`` for a spin-summed site 1-RDM."""
    h = build_h_e(params, u)
    return np.real(np.einsum("...ij,...ji->...", h, gamma))


def electronic_force(params: SshParams, gamma) -> np.ndarray:
    """Hellmann-Feynman force ``-Tr[gamma dH_e/du_n]`` on every site (eV/A)."""
    return -params.alpha * bond_gradient_to_sites(bond_orders(gamma))


def lattice_energy_and_force(params: SshParams, phase: NuclearPhase):
    """Spring energy, kinetic energy and spring force of the lattice.

    Returns
    -------
    spring : float or ndarray
        ``(K/2) sum (u[n+1] - u[n])^2`` in eV.
    kinetic : float or ndarray
        ``sum p^2 / 2M`` in eV.
    force : ndarray
        Negative gradient of the spring energy, per site (eV/A).
    """
    _check_length(params, phase.u)
    d = np.diff(phase.u, axis=-1)
    spring = 0.5 * params.k_spring * np.sum(d**2, axis=-1)
    kinetic = np.sum(phase.p**2, axis=-1) / (2.0 * params.mass)
    force = -params.k_spring * bond_gradient_to_sites(d)
    return spring, kinetic, force


def chiral_operator(n_sites: int) -> np.ndarray:
    """``diag((-1)^n)``; conjugating a bipartite hopping matrix with it flips its sign."""
    return np.diag((-1.0) ** np.arange(n_sites))


def mirror(u) -> np.ndarray:
    """Spatial reflection of a displacement field, ``n -> N-1-n`` with ``u -> -u``."""
    return -np.asarray(u)[..., ::-1]
