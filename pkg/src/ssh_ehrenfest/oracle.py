"""Brute-force fixed-particle-number Fock-space reference for small chains.

Nothing here uses the Slater-Condon machinery of :mod:`electronic`: many-body
vectors are expanded in site determinants via minors of the orbital matrix,
operators are applied bit by bit with explicit fermion signs, and propagation
uses dense matrix exponentials of the second-quantized Hamiltonian.

Spin-orbital ``(site, spin)`` has index ``site`` for spin up and
``n_sites + site`` for spin down; basis states are
``prod c+`` in ascending spin-orbital order acting on the vacuum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.linalg import expm

from .model import SshParams, build_h_e, electronic_force, lattice_energy_and_force, NuclearPhase

DEFAULT_CAP = 10_000


class BasisTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class FockBasis:
    n_sites: int
    n_up: int
    n_down: int
    states: tuple[int, ...]
    index: dict = field(repr=False, compare=False, hash=False)

    @property
    def dim(self) -> int:
        return len(self.states)


def enumerate_states(n_sites: int, n_up: int, n_down: int, cap: int = DEFAULT_CAP) -> FockBasis:
    """All determinants with ``n_up`` up and ``n_down`` down electrons, in a fixed order."""
    if not (0 <= n_up <= n_sites and 0 <= n_down <= n_sites):
        raise ValueError("infeasible electron counts")
    dim = comb(n_sites, n_up) * comb(n_sites, n_down)
    if dim > cap:
        raise BasisTooLargeError(f"Fock dimension {dim} exceeds cap {cap}")
    states = []
    for up in itertools.combinations(range(n_sites), n_up):
        for down in itertools.combinations(range(n_sites), n_down):
            bits = sum(1 << k for k in up) | sum(1 << (n_sites + k) for k in down)
            states.append(bits)
    states = tuple(states)
    return FockBasis(n_sites, n_up, n_down, states, {s: i for i, s in enumerate(states)})


def _annihilate(bits: int, k: int):
    if not bits >> k & 1:
        return 0, bits
    parity = bin(bits & ((1 << k) - 1)).count("1") & 1
    return (-1 if parity else 1), bits & ~(1 << k)


def _create(bits: int, k: int):
    if bits >> k & 1:
        return 0, bits
    parity = bin(bits & ((1 << k) - 1)).count("1") & 1
    return (-1 if parity else 1), bits | (1 << k)


def _apply_string(bits: int, ops):
    """``ops`` is a list of ``("c" | "a", spin_orbital)`` in written order (rightmost acts first)."""
    sign = 1
    for kind, k in reversed(ops):
        s, bits = (_create if kind == "c" else _annihilate)(bits, k)
        if s == 0:
            return 0, bits
        sign *= s
    return sign, bits


def lift_one_body(h: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Second-quantized ``sum_{pq,s} h[p,q] c+_{ps} c_{qs}`` as a dense matrix."""
    n = basis.n_sites
    out = np.zeros((basis.dim, basis.dim), dtype=np.result_type(h, float))
    for j, bits in enumerate(basis.states):
        for spin in (0, n):
            for p in range(n):
                for q in range(n):
                    if h[p, q] == 0:
                        continue
                    s, nb = _apply_string(bits, [("c", p + spin), ("a", q + spin)])
                    if s:
                        out[basis.index[nb], j] += s * h[p, q]
    return out


def determinant_vector(orbitals: np.ndarray, occ_up, occ_down, basis: FockBasis) -> np.ndarray:
    """Site-basis expansion of ``prod_{k in up} a+_k prod_{k in down} a+_k |0>``.

    With ``a+_k = sum_p C[p, k] c+_p`` the coefficient of a site determinant is
    the product of the up and down minors of ``C``.
    """
    n = basis.n_sites
    c = np.asarray(orbitals)
    vec = np.zeros(basis.dim, dtype=complex)
    up_cols = list(occ_up)
    down_cols = list(occ_down)
    for i, bits in enumerate(basis.states):
        up_sites = [k for k in range(n) if bits >> k & 1]
        down_sites = [k for k in range(n) if bits >> (n + k) & 1]
        a = np.linalg.det(c[np.ix_(up_sites, up_cols)]) if up_cols else 1.0
        b = np.linalg.det(c[np.ix_(down_sites, down_cols)]) if down_cols else 1.0
        vec[i] = a * b
    return vec


def superposition_vector(state, basis: FockBasis) -> np.ndarray:
    """Fock-space vector of a :class:`~ssh_ehrenfest.electronic.SuperpositionState`."""
    vec = np.zeros(basis.dim, dtype=complex)
    for b, d in zip(state.amplitudes, state.determinants):
        vec += b * determinant_vector(state.orbitals, d.occ_up, d.occ_down, basis)
    return vec


@dataclass
class _OperatorTable:
    keys: np.ndarray  # flattened element index
    rows: np.ndarray  # result state index i
    cols: np.ndarray  # source state index j
    signs: np.ndarray


_TABLES: dict = {}


def _tables(basis: FockBasis):
    key = (basis.n_sites, basis.n_up, basis.n_down)
    if key in _TABLES:
        return _TABLES[key]
    n = basis.n_sites
    spins = (0, n)
    one = ([], [], [], [])
    two = ([], [], [], [])
    for j, bits in enumerate(basis.states):
        for sp in spins:
            for p in range(n):
                for q in range(n):
                    s, nb = _apply_string(bits, [("c", p + sp), ("a", q + sp)])
                    if s:
                        # operator form: gamma[q, p] = <c+_p c_q>
                        one[0].append(q * n + p)
                        one[1].append(basis.index[nb])
                        one[2].append(j)
                        one[3].append(s)
        for s1, s2 in itertools.product(spins, spins):
            for p, q, r, s in itertools.product(range(n), repeat=4):
                sg, nb = _apply_string(bits, [("c", p + s1), ("c", q + s2), ("a", r + s2), ("a", s + s1)])
                if sg:
                    two[0].append(((p * n + q) * n + r) * n + s)
                    two[1].append(basis.index[nb])
                    two[2].append(j)
                    two[3].append(sg)
    out = tuple(_OperatorTable(*(np.array(x) for x in t)) for t in (one, two))
    _TABLES[key] = out
    return out


def brute_force_rdms(psi_or_rho: np.ndarray, basis: FockBasis):
    """Spin-summed 1-RDM (operator form) and 2-RDM from a Fock vector or density matrix.

    Returns ``gamma[p, q] = sum_s <c+_{qs} c_{ps}>`` and
    ``Gamma[p, q, r, s] = 1/2 sum_{s,s'} <c+_{ps} c+_{qs'} c_{rs'} c_{ss}>``.
    """
    x = np.asarray(psi_or_rho)
    n = basis.n_sites
    one, two = _tables(basis)

    def expect(tab, size):
        if x.ndim == 1:
            vals = tab.signs * np.conj(x[tab.rows]) * x[tab.cols]
        else:
            # Tr(O rho) = sum_ij O_ij rho_ji
            vals = tab.signs * x[tab.cols, tab.rows]
        out = np.zeros(size, dtype=complex)
        np.add.at(out, tab.keys, vals)
        return out

    gamma = expect(one, n * n).reshape(n, n)
    gamma2 = 0.5 * expect(two, n**4).reshape(n, n, n, n)
    return gamma, gamma2


def full_ci_propagate(psi0: np.ndarray, geometries, dt: float, params: SshParams, basis: FockBasis) -> np.ndarray:
    """Exact many-body propagation along a prescribed nuclear path.

    Step ``k`` applies ``expm(-i H[geometries[k]] dt / hbar)``; pass the
    half-step geometries to mirror the midpoint integrator. Returns the vectors
    before the first and after every step.
    """
    out = [np.asarray(psi0, dtype=complex)]
    for u in geometries:
        hmb = lift_one_body(build_h_e(params, u), basis)
        out.append(expm(-1j * hmb * dt / params.hbar) @ out[-1])
    return np.array(out)


def full_ci_ehrenfest(psi0: np.ndarray, u0, p0, params: SshParams, basis: FockBasis, dt: float, n_steps: int):
    """Self-consistent Ehrenfest run with the electrons carried as a Fock vector.

    Same velocity-Verlet / midpoint-exponential scheme as the determinant
    engine, but forces come from brute-force RDMs.
    """
    mask = np.zeros(params.n_sites, dtype=bool)
    mask[[0, -1]] = True

    def force(u, psi):
        gamma, _ = brute_force_rdms(psi, basis)
        _, _, fs = lattice_energy_and_force(params, NuclearPhase.at_rest(u))
        f = electronic_force(params, gamma) + fs
        f[mask] = 0.0
        return f

    u = np.array(u0, dtype=float)
    p = np.array(p0, dtype=float)
    psi = np.asarray(psi0, dtype=complex)
    us, ps, psis = [u.copy()], [p.copy()], [psi.copy()]
    f = force(u, psi)
    for _ in range(n_steps):
        p = p + 0.5 * dt * f
        u_new = u + dt * p / params.mass
        hmb = lift_one_body(build_h_e(params, 0.5 * (u + u_new)), basis)
        psi = expm(-1j * hmb * dt / params.hbar) @ psi
        u = u_new
        f = force(u, psi)
        p = p + 0.5 * dt * f
        us.append(u.copy())
        ps.append(p.copy())
        psis.append(psi.copy())
    return np.array(us), np.array(ps), np.array(psis)


def occupation_classes(orbital_energies: np.ndarray, n_up: int, n_down: int) -> list[tuple[str, float, int]]:
    """Group all determinants over eigenorbitals by spin-summed occupation.

    Returns ``(label, energy, multiplicity)`` sorted by energy, then label.
    """
    n = len(orbital_energies)
    basis = enumerate_states(n, n_up, n_down)
    classes: dict[str, list] = {}
    for bits in basis.states:
        occ = [(bits >> k & 1) + (bits >> (n + k) & 1) for k in range(n)]
        label = "(" + "".join(map(str, occ)) + ")"
        energy = float(np.dot(occ, orbital_energies))
        classes.setdefault(label, [energy, 0])[1] += 1
    return sorted(((lb, e, m) for lb, (e, m) in classes.items()), key=lambda x: (round(x[1], 8), x[0]))


def many_body_spectrum(params: SshParams, u, n_up: int, n_down: int) -> np.ndarray:
    """Eigenvalues of the second-quantized electronic Hamiltonian at geometry ``u``."""
    basis = enumerate_states(params.n_sites, n_up, n_down)
    return np.linalg.eigvalsh(lift_one_body(build_h_e(params, u), basis))
