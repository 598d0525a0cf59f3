"""Many-electron states as superpositions of Slater determinants.

All determinants of a :class:`SuperpositionState` are built from one shared,
orthonormal orbital set (the columns of ``orbitals``). Because the electronic
Hamiltonian is one-body, such a state stays of this form under time evolution:
the orbitals rotate and the amplitudes do not change.

Conventions
-----------
Spin-orbital ``k`` (spin up) has index ``k`` and ``k`` (spin down) has index
``n_orb + k``. A determinant is ``prod_{up asc} a+_k prod_{down asc} a+_k |0>``.

``Rdm1`` matrices are stored in operator form, ``gamma[p, q] = sum_s <c+_{qs} c_{ps}>``,
so that ``gamma = sum_k n_k |phi_k><phi_k|`` for a single determinant.
``Rdm2`` tensors are ``Gamma[p, q, r, s] = 1/2 sum_{s,s'} <c+_{ps} c+_{qs'} c_{rs'} c_{ss}>``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

DENSE_RDM2_MAX_SITES = 32


@dataclass(frozen=True, order=True)
class Determinant:
    occ_up: tuple[int, ...]
    occ_down: tuple[int, ...]

    def __post_init__(self):
        up = tuple(sorted(int(k) for k in self.occ_up))
        down = tuple(sorted(int(k) for k in self.occ_down))
        if len(set(up)) != len(up) or len(set(down)) != len(down):
            raise ValueError(f"repeated orbital in determinant {up} / {down}")
        if any(k < 0 for k in up + down):
            raise ValueError("orbital indices must be non-negative")
        object.__setattr__(self, "occ_up", up)
        object.__setattr__(self, "occ_down", down)

    @property
    def n_electrons(self) -> int:
        return len(self.occ_up) + len(self.occ_down)

    def occupations(self, n_orb: int) -> np.ndarray:
        """Spin-summed occupation of each orbital."""
        occ = np.zeros(n_orb, dtype=int)
        occ[list(self.occ_up)] += 1
        occ[list(self.occ_down)] += 1
        return occ

    def label(self, n_orb: int) -> str:
        return "(" + "".join(str(o) for o in self.occupations(n_orb)) + ")"

    def spin_orbitals(self, n_orb: int) -> tuple[int, ...]:
        return self.occ_up + tuple(n_orb + k for k in self.occ_down)

    def bits(self, n_orb: int) -> int:
        out = 0
        for k in self.spin_orbitals(n_orb):
            out |= 1 << k
        return out

    @classmethod
    def from_bits(cls, bits: int, n_orb: int) -> "Determinant":
        up = [k for k in range(n_orb) if bits >> k & 1]
        down = [k for k in range(n_orb) if bits >> (n_orb + k) & 1]
        return cls(tuple(up), tuple(down))

    @classmethod
    def ground(cls, n_sites: int, n_electrons: int | None = None) -> "Determinant":
        """Closed-shell ground configuration: lowest ``n_electrons/2`` orbitals in each spin."""
        n_electrons = n_sites if n_electrons is None else n_electrons
        if n_electrons % 2:
            raise ValueError("closed-shell ground state needs an even electron count")
        occ = tuple(range(n_electrons // 2))
        return cls(occ, occ)

    @classmethod
    def from_label(cls, label: str, n_orb: int | None = None) -> "Determinant":
        """Parse a spin-summed occupation label such as ``"(2110)"``.

        Doubly occupied orbitals go into both channels. Singly occupied orbitals
        fill the spin-down channel from the bottom until it holds half the
        electrons; the rest are spin up. For single excitations of the closed-shell
        ground state this puts the excitation in the spin-up channel.

        With ``n_orb`` larger than the label, the label describes a window of
        orbitals centred on the HOMO/LUMO gap; orbitals below it are doubly
        occupied and those above it empty.
        """
        occ = label_occupations(label, n_orb)
        n_e = sum(occ)
        if n_e % 2:
            raise ValueError(f"label {label!r} has an odd electron count")
        doubles = [k for k, o in enumerate(occ) if o == 2]
        singles = [k for k, o in enumerate(occ) if o == 1]
        n_down_single = n_e // 2 - len(doubles)
        down = sorted(doubles + singles[:n_down_single])
        up = sorted(doubles + singles[n_down_single:])
        return cls(tuple(up), tuple(down))


def label_occupations(label: str, n_orb: int | None = None) -> list[int]:
    """Spin-summed occupations of a (possibly windowed) label over ``n_orb`` orbitals."""
    digits = label.strip().strip("()").replace(" ", "").replace(",", "")
    if not digits or any(ch not in "012" for ch in digits):
        raise ValueError(f"bad occupation label {label!r}")
    occ = [int(ch) for ch in digits]
    if n_orb is None or n_orb == len(occ):
        return occ
    if len(occ) > n_orb or len(occ) % 2 or n_orb % 2:
        raise ValueError(f"label {label!r} cannot be centred in {n_orb} orbitals")
    pad = (n_orb - len(occ)) // 2
    return [2] * pad + occ + [0] * pad


# fermion sign helpers on spin-orbital bit strings


def _apply(ops: Sequence[tuple[int, bool]], bits: int) -> tuple[int, int]:
    """Apply ``ops`` (rightmost first) to a determinant bit string.

    Each op is ``(spin_orbital, create)``. Returns ``(sign, new_bits)`` with
    ``sign == 0`` if the result vanishes.
    """
    sign = 1
    for k, create in reversed(ops):
        occupied = bits >> k & 1
        if occupied == create:
            return 0, 0
        if (bits & ((1 << k) - 1)).bit_count() % 2:
            sign = -sign
        bits ^= 1 << k
    return sign, bits


def excite(det: Determinant, n_orb: int, excitations) -> tuple[int, Determinant]:
    """Apply ``c+_to c_from`` for each ``(from, to, spin)``; returns ``(sign, determinant)``."""
    bits = det.bits(n_orb)
    sign = 1
    for src, dst, spin in excitations:
        off = 0 if spin in ("up", "u", 0, +1, "+") else n_orb
        s, bits = _apply([(dst + off, True), (src + off, False)], bits)
        if s == 0:
            raise ValueError(f"invalid excitation {src}->{dst} (spin {spin}) from {det.label(n_orb)}")
        sign *= s
    return sign, Determinant.from_bits(bits, n_orb)


@dataclass(frozen=True)
class SuperpositionState:
    """Normalized superposition ``sum_i b_i |D_i>`` over a shared orbital set."""

    orbitals: np.ndarray
    amplitudes: np.ndarray
    determinants: tuple[Determinant, ...]

    def __post_init__(self):
        orb = np.asarray(self.orbitals, dtype=complex)
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        dets = tuple(self.determinants)
        if orb.ndim != 2 or orb.shape[0] != orb.shape[1]:
            raise ValueError("orbitals must be a square matrix")
        if len(dets) != len(amps) or not dets:
            raise ValueError("need one amplitude per determinant")
        if len(set(dets)) != len(dets):
            raise ValueError("determinants must be pairwise distinct")
        norm = np.sum(np.abs(amps) ** 2)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"amplitudes not normalized: sum |b|^2 = {norm}")
        n = orb.shape[0]
        for d in dets:
            if max(d.occ_up + d.occ_down, default=-1) >= n:
                raise ValueError(f"determinant {d} exceeds {n} orbitals")
        defect = np.abs(orb.conj().T @ orb - np.eye(n)).max()
        if defect > 1e-10:
            raise ValueError(f"orbitals not orthonormal (defect {defect:.2e})")
        object.__setattr__(self, "orbitals", orb)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "determinants", dets)

    @property
    def n_orb(self) -> int:
        return self.orbitals.shape[0]

    @property
    def n_electrons(self) -> int:
        return self.determinants[0].n_electrons

    @property
    def terms(self):
        return list(zip(self.amplitudes, self.determinants))

    def with_orbitals(self, orbitals) -> "SuperpositionState":
        return SuperpositionState(orbitals, self.amplitudes, self.determinants)

    def labels(self) -> list[str]:
        return [d.label(self.n_orb) for d in self.determinants]


def build_excited_state(
    ground_occ: Determinant,
    excitations,
    amplitudes,
    orbitals,
) -> SuperpositionState:
    """Superposition of excitations of ``ground_occ``.

    Parameters
    ----------
    ground_occ : Determinant
        Reference configuration (normally the closed-shell ground state).
    excitations : list
        One entry per term. Each entry is ``None`` (the reference itself), a
        ``(from_orbital, to_orbital, spin)`` tuple, or a list of such tuples.
        The fermionic sign of ``c+_to c_from`` is folded into the amplitude.
    amplitudes : sequence of complex
        Term amplitudes; must be normalized.
    orbitals : ndarray
        Shared orbital matrix, columns in ascending orbital energy.
    """
    n_orb = len(orbitals)
    amps = np.asarray(amplitudes, dtype=complex)
    if len(amps) != len(excitations):
        raise ValueError("need one amplitude per excitation entry")
    dets, signed = [], []
    for b, exc in zip(amps, excitations):
        if exc is None:
            exc = []
        elif len(exc) == 3 and not isinstance(exc[0], (tuple, list)):
            exc = [exc]
        sign, det = excite(ground_occ, n_orb, exc)
        dets.append(det)
        signed.append(sign * b)
    return SuperpositionState(orbitals, np.array(signed), tuple(dets))


def state_from_labels(labels: Sequence[str], amplitudes, orbitals) -> SuperpositionState:
    """Superposition of canonical determinants given by occupation labels."""
    n = len(orbitals)
    dets = tuple(Determinant.from_label(lb, n) for lb in labels)
    return SuperpositionState(orbitals, amplitudes, dets)


# transition density matrices in the orbital basis


def _one_body_transition(bits_i: int, bits_j: int, n_orb: int):
    """Nonzero ``<D_i| a+_l a_k |D_j>`` as ``(k, l, value)`` over spatial orbitals, spin-summed."""
    removed = bits_j & ~bits_i
    added = bits_i & ~bits_j
    nr = removed.bit_count()
    if nr > 1:
        return []
    out = []
    if nr == 0:
        for so in range(2 * n_orb):
            if bits_j >> so & 1:
                out.append((so % n_orb, so % n_orb, 1.0))
        return out
    k = removed.bit_length() - 1
    l = added.bit_length() - 1
    if (k < n_orb) != (l < n_orb):
        return []
    sign, _ = _apply([(l, True), (k, False)], bits_j)
    return [(k % n_orb, l % n_orb, float(sign))]


def _two_body_transition(bits_i: int, bits_j: int, n_orb: int):
    """Nonzero spin-summed ``<D_i| a+_p a+_q a_r a_s |D_j>`` as ``(p, q, r, s, value)``.

    Only spin patterns with ``spin(p) == spin(s)`` and ``spin(q) == spin(r)``
    are kept, as required by the spin-summed two-body density.
    """
    removed = bits_j & ~bits_i
    added = bits_i & ~bits_j
    nr = removed.bit_count()
    if nr > 2:
        return []
    rem = [k for k in range(2 * n_orb) if removed >> k & 1]
    add = [k for k in range(2 * n_orb) if added >> k & 1]
    both = bits_j & bits_i
    common = [k for k in range(2 * n_orb) if both >> k & 1]
    out = []
    for extra in itertools.combinations(common, 2 - nr):
        ann = rem + list(extra)
        cre = add + list(extra)
        for r, s in itertools.permutations(ann, 2):
            for p, q in itertools.permutations(cre, 2):
                if (p < n_orb) != (s < n_orb) or (q < n_orb) != (r < n_orb):
                    continue
                sign, res = _apply([(p, True), (q, True), (r, False), (s, False)], bits_j)
                if sign:
                    out.append((p % n_orb, q % n_orb, r % n_orb, s % n_orb, float(sign)))
    return out


def one_body_transition_matrix(d_i: Determinant, d_j: Determinant, n_orb: int) -> np.ndarray:
    """``T[k, l] = <D_i| sum_s a+_{ls} a_{ks} |D_j>`` in the orbital basis."""
    t = np.zeros((n_orb, n_orb))
    for k, l, v in _one_body_transition(d_i.bits(n_orb), d_j.bits(n_orb), n_orb):
        t[k, l] += v
    return t


def two_body_transition_elements(d_i: Determinant, d_j: Determinant, n_orb: int) -> dict:
    """``1/2 <D_i| a+_p a+_q a_r a_s |D_j>`` (spin-summed) as a sparse dict keyed by ``(p, q, r, s)``."""
    out: dict = {}
    for p, q, r, s, v in _two_body_transition(d_i.bits(n_orb), d_j.bits(n_orb), n_orb):
        out[(p, q, r, s)] = out.get((p, q, r, s), 0.0) + 0.5 * v
    return out


def slater_condon_one_body(d_i: Determinant, d_j: Determinant, a: np.ndarray) -> complex:
    """``<D_i| sum_{kl,s} A_kl a+_{ks} a_{ls} |D_j>`` for a spin-free one-body operator."""
    a = np.asarray(a)
    t = one_body_transition_matrix(d_i, d_j, a.shape[0])
    return complex(np.sum(a * t.T))


def one_body_rdm_orbital(state: SuperpositionState) -> np.ndarray:
    """Spin-summed 1-RDM of ``state`` in its own orbital basis (operator form)."""
    n = state.n_orb
    gamma = np.zeros((n, n), dtype=complex)
    bits = [d.bits(n) for d in state.determinants]
    b = state.amplitudes
    for i, j in itertools.product(range(len(bits)), repeat=2):
        w = np.conj(b[i]) * b[j]
        if w == 0:
            continue
        for k, l, v in _one_body_transition(bits[i], bits[j], n):
            gamma[k, l] += w * v
    return gamma


def two_body_rdm_elements(state: SuperpositionState) -> dict[tuple[int, int, int, int], complex]:
    """Nonzero orbital-basis 2-RDM elements ``Gamma[p, q, r, s]`` as a sparse dict."""
    n = state.n_orb
    out: dict[tuple[int, int, int, int], complex] = {}
    bits = [d.bits(n) for d in state.determinants]
    b = state.amplitudes
    for i, j in itertools.product(range(len(bits)), repeat=2):
        w = 0.5 * np.conj(b[i]) * b[j]
        if w == 0:
            continue
        for p, q, r, s, v in _two_body_transition(bits[i], bits[j], n):
            key = (p, q, r, s)
            out[key] = out.get(key, 0.0) + w * v
    return out


def two_body_rdm_orbital(state: SuperpositionState) -> np.ndarray:
    n = state.n_orb
    if n > DENSE_RDM2_MAX_SITES:
        raise ValueError(f"dense 2-RDM limited to {DENSE_RDM2_MAX_SITES} orbitals; use two_body_rdm_elements")
    g = np.zeros((n, n, n, n), dtype=complex)
    for key, v in two_body_rdm_elements(state).items():
        g[key] += v
    return g


def rdm1_to_site(gamma_orb: np.ndarray, orbitals: np.ndarray) -> np.ndarray:
    """Rotate an operator-form 1-RDM from the orbital to the site basis (batched over orbitals)."""
    return orbitals @ gamma_orb @ np.conj(np.swapaxes(orbitals, -1, -2))


def rdm2_to_site(gamma2_orb: np.ndarray, orbitals: np.ndarray) -> np.ndarray:
    """Rotate a 2-RDM tensor to the site basis (``orbitals`` may carry a batch axis)."""
    c = orbitals
    cc = np.conj(c)
    return np.einsum("...pi,...qj,...rk,...sl,ijkl->...pqrs", cc, cc, c, c, gamma2_orb, optimize=True)


def one_body_rdm(state: SuperpositionState) -> np.ndarray:
    """Spin-summed site-basis 1-RDM, including cross-determinant coherences."""
    return rdm1_to_site(one_body_rdm_orbital(state), state.orbitals)


def two_body_rdm(state: SuperpositionState) -> np.ndarray:
    """Spin-summed site-basis 2-RDM as a dense rank-4 tensor."""
    return rdm2_to_site(two_body_rdm_orbital(state), state.orbitals)


def two_body_purity(state: SuperpositionState) -> float:
    """``Tr Gamma^2`` of a pure state, without materializing the tensor.

    The purity is invariant under the unitary orbital rotation, so the sparse
    orbital-basis elements suffice.
    """
    return float(sum(abs(v) ** 2 for v in two_body_rdm_elements(state).values()))


def determinant_energy(det: Determinant, energies: np.ndarray) -> float:
    """Energy of a determinant built from eigenorbitals with the given energies."""
    return float(det.occupations(len(energies)) @ np.asarray(energies))


class AdiabaticBasis(NamedTuple):
    energies: np.ndarray
    orbitals: np.ndarray
    order: np.ndarray


def fix_phases(vectors: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Deterministic column phases, batched over leading axes.

    With ``reference`` each column is made to have a real positive overlap
    with the matching reference column. Otherwise the first component of
    (near-)maximal magnitude is made real positive.
    """
    v = np.array(vectors)
    if reference is not None:
        ov = np.einsum("...ik,...ik->...k", np.conj(reference), v)
    else:
        mag = np.abs(v)
        near_max = mag >= mag.max(axis=-2, keepdims=True) * (1 - 1e-8) - 1e-14
        idx = np.argmax(near_max, axis=-2)
        ov = np.take_along_axis(v, idx[..., None, :], axis=-2)[..., 0, :]
    mag = np.abs(ov)
    phase = np.where(mag > 0, np.conj(ov) / np.where(mag > 0, mag, 1), 1)
    if np.isrealobj(v):
        phase = np.real(phase)
    return v * phase[..., None, :]


def adiabatic_basis(h_e: np.ndarray, reference: np.ndarray | None = None, degeneracy_tol: float = 1e-9) -> AdiabaticBasis:
    """Eigenpairs of a single-particle Hamiltonian in ascending order with fixed phases.

    When ``reference`` is given, degenerate subspaces are rotated to maximal
    overlap with the reference columns before the phase is fixed.
    """
    e, v = np.linalg.eigh(h_e)
    n = len(e)
    if reference is not None:
        v = v.astype(np.result_type(v, reference))
        start = 0
        while start < n:
            stop = start + 1
            while stop < n and e[stop] - e[stop - 1] < degeneracy_tol:
                stop += 1
            if stop - start > 1:
                block = v[:, start:stop]
                ref = reference[:, start:stop]
                # orthogonal Procrustes: rotation of block closest to ref
                w, _, zh = np.linalg.svd(block.conj().T @ ref)
                v[:, start:stop] = block @ (w @ zh)
            start = stop
    v = fix_phases(v, reference)
    return AdiabaticBasis(e, v, np.arange(n))


_LEVEL = re.compile(r"^(HOMO|LUMO)\s*([+-]\s*\d+)?$", re.IGNORECASE)


def level_index(name: str, n_sites: int, n_electrons: int | None = None) -> int:
    """Resolve ``HOMO``, ``HOMO-1``, ``LUMO+1`` or a bare integer to an orbital index."""
    n_electrons = n_sites if n_electrons is None else n_electrons
    name = name.strip()
    if re.fullmatch(r"\d+", name):
        return int(name)
    m = _LEVEL.match(name)
    if not m:
        raise ValueError(f"unknown orbital name {name!r}")
    homo = n_electrons // 2 - 1
    base = homo if m.group(1).upper() == "HOMO" else homo + 1
    shift = int(m.group(2).replace(" ", "")) if m.group(2) else 0
    idx = base + shift
    if not 0 <= idx < n_sites:
        raise ValueError(f"orbital {name} out of range for {n_sites} sites")
    return idx
