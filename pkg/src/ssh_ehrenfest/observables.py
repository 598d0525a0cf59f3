"""Populations, purities and coherence models derived from trajectory records.

Orbital populations are projected per trajectory onto that trajectory's own
adiabatic basis and averaged afterwards. Density matrices are averaged in the
site basis, the only frame shared by all trajectories.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .electronic import (
    Determinant,
    adiabatic_basis,
    label_occupations,
    one_body_transition_matrix,
    rdm1_to_site,
    rdm2_to_site,
    two_body_transition_elements,
)
from .model import SshParams, build_h_e

MODELS = ("M1", "M2", "M3")


class IllConditionedTriadError(ValueError):
    pass


def orbital_populations(rdm1_site: np.ndarray, u, params: SshParams, reference: np.ndarray | None = None) -> np.ndarray:
    """Spin-summed populations of the adiabatic orbitals of ``build_h_e(u)``, ascending energy.

    Leading axes of ``rdm1_site`` and ``u`` are batch axes. ``reference`` (single
    geometry only) resolves degenerate subspaces by continuity.
    """
    gamma = np.asarray(rdm1_site)
    h = build_h_e(params, u)
    if h.ndim == 2:
        v = adiabatic_basis(h, reference).orbitals
    else:
        v = np.linalg.eigh(h)[1]
    return np.real(np.einsum("...ki,...kl,...li->...i", np.conj(v), gamma, v))


def triad_occupations(triad, n_orb: int) -> np.ndarray:
    """Occupation vectors of the triad labels as columns, shape ``(n_orb, 3)``."""
    return np.array([label_occupations(lb, n_orb) for lb in triad], dtype=float).T


@dataclass(frozen=True)
class StatePopulations:
    p: np.ndarray  # (..., 3) populations of the triad states
    residual: np.ndarray  # (...) norm of the occupation misfit

    @property
    def p0(self):
        return self.p[..., 0]

    @property
    def p1(self):
        return self.p[..., 1]

    @property
    def p2(self):
        return self.p[..., 2]


def reconstruct_state_populations(pops, triad, max_condition: float = 1e8) -> StatePopulations:
    """Least-squares weights ``p`` of the triad states with ``sum p = 1``.

    Solves ``min |A p - n|`` subject to ``sum p = 1`` through its KKT system,
    where the columns of ``A`` are the triad occupation vectors.
    """
    n = np.asarray(pops, dtype=float)
    a = triad_occupations(triad, n.shape[-1])
    aug = np.vstack([a, np.ones((1, a.shape[1]))])
    sv = np.linalg.svd(aug, compute_uv=False)
    if sv[-1] == 0 or sv[0] / sv[-1] > max_condition:
        raise IllConditionedTriadError(f"triad {list(triad)} is not linearly independent")
    k = a.shape[1]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = a.T @ a
    kkt[:k, k] = kkt[k, :k] = 1.0
    rhs = np.concatenate([n @ a, np.ones(n.shape[:-1] + (1,))], axis=-1)
    sol = np.linalg.solve(kkt, rhs[..., None])[..., 0]
    p = sol[..., :k]
    residual = np.linalg.norm(p @ a.T - n, axis=-1)
    return StatePopulations(p, residual)


def purity(rdm, rank: int | None = None):
    """Sum of squared magnitudes of all elements (``Tr X^2`` for Hermitian ``X``).

    ``rank`` is 1 for one-body and 2 for two-body objects; leading axes beyond
    ``2 * rank`` are treated as a batch. Inferred from ``ndim`` when omitted.
    """
    x = np.asarray(rdm)
    if rank is None:
        if x.ndim not in (2, 4):
            raise ValueError("cannot infer rank; pass rank=1 or rank=2")
        rank = x.ndim // 2
    axes = tuple(range(-2 * rank, 0))
    out = np.sum(np.abs(x) ** 2, axis=axes)
    return float(out) if out.ndim == 0 else out


def model_density_matrices(p) -> dict[str, np.ndarray]:
    """Triad-basis density matrices of the three coherence models.

    ``c_k = sqrt(p_k)`` with real positive phases. M1 is the pure state
    ``sum c_k |k>``, M2 keeps only the coherence between the second and third
    states, M3 is diagonal.
    """
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    c = np.sqrt(p)
    m1 = c[..., :, None] * c[..., None, :]
    m2 = m1.copy()
    m2[..., 0, 1:] = 0.0
    m2[..., 1:, 0] = 0.0
    m3 = np.zeros_like(m1)
    idx = np.arange(p.shape[-1])
    m3[..., idx, idx] = p
    return {"M1": m1, "M2": m2, "M3": m3}


@dataclass
class TriadDensities:
    """Transition densities ``T_ij`` between triad determinants in the orbital basis.

    A triad-basis density matrix ``R`` maps to ``gamma = sum_ij R[j, i] T1[i, j]``
    (and likewise for the two-body density). Purities of any such mixture follow
    from the Gram matrices ``G[ij, kl] = <T_ij, T_kl>``; they are invariant under
    the orbital rotation to the site basis.
    """

    triad: tuple[str, ...]
    n_orb: int
    determinants: tuple[Determinant, ...] = field(init=False)
    t1: np.ndarray = field(init=False, repr=False)
    t2: list = field(init=False, repr=False)
    gram1: np.ndarray = field(init=False, repr=False)
    gram2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.determinants = tuple(Determinant.from_label(lb, self.n_orb) for lb in self.triad)
        k = len(self.determinants)
        pairs = list(itertools.product(range(k), repeat=2))
        self.t1 = np.array([one_body_transition_matrix(self.determinants[i], self.determinants[j], self.n_orb) for i, j in pairs])
        self.t2 = [two_body_transition_elements(self.determinants[i], self.determinants[j], self.n_orb) for i, j in pairs]
        flat = self.t1.reshape(len(pairs), -1)
        self.gram1 = flat @ flat.T
        g2 = np.zeros((len(pairs), len(pairs)))
        for a, b in itertools.product(range(len(pairs)), repeat=2):
            ta, tb = self.t2[a], self.t2[b]
            g2[a, b] = sum(v * tb[key] for key, v in ta.items() if key in tb)
        self.gram2 = g2

    def _coeffs(self, rho):
        # weight of T_ij is R[j, i]
        return np.swapaxes(np.asarray(rho), -1, -2).reshape(np.shape(rho)[:-2] + (-1,))

    def purities(self, rho):
        """``(P1, P2)`` of the mixture with triad density matrix ``rho``."""
        w = self._coeffs(rho)
        p1 = np.real(np.einsum("...a,ab,...b->...", np.conj(w), self.gram1, w))
        p2 = np.real(np.einsum("...a,ab,...b->...", np.conj(w), self.gram2, w))
        return p1, p2

    def rdm1(self, rho, orbitals):
        """Site-basis 1-RDM of the mixture over the given orbitals."""
        gamma = np.einsum("a,akl->kl", self._coeffs(rho), self.t1)
        return rdm1_to_site(gamma, orbitals)

    def rdm2(self, rho, orbitals):
        w = self._coeffs(rho)
        n = self.n_orb
        g = np.zeros((n, n, n, n), dtype=complex)
        for wa, ta in zip(w, self.t2):
            for key, v in ta.items():
                g[key] += wa * v
        return rdm2_to_site(g, orbitals)


def model_purities(pops: StatePopulations | np.ndarray, triad, u=None, params: SshParams | None = None) -> dict[tuple[str, str], np.ndarray]:
    """P1 and P2 of the M1/M2/M3 models for the given triad state populations.

    The models are built from the triad determinants over the adiabatic
    orbitals at ``u``. Purities do not depend on that orbital choice, so ``u``
    only matters for :func:`model_rdms`; it is accepted for symmetry.
    """
    p = pops.p if isinstance(pops, StatePopulations) else np.asarray(pops, dtype=float)
    n_orb = params.n_sites if params is not None else len(label_occupations(triad[0]))
    dens = TriadDensities(tuple(triad), n_orb)
    out = {}
    for name, rho in model_density_matrices(p).items():
        p1, p2 = dens.purities(rho)
        out[(name, "P1")] = p1
        out[(name, "P2")] = p2
    return out


def model_rdms(p, triad, u, params: SshParams) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Site-basis ``(rdm1, rdm2)`` of each model at a single geometry ``u``."""
    orbitals = adiabatic_basis(build_h_e(params, u)).orbitals
    dens = TriadDensities(tuple(triad), params.n_sites)
    return {name: (dens.rdm1(rho, orbitals), dens.rdm2(rho, orbitals)) for name, rho in model_density_matrices(p).items()}


@dataclass
class EnsembleSums:
    """Running sums of per-trajectory records on a shared time grid.

    Merging is addition, so any reduction tree gives the same result up to
    floating-point reassociation; :meth:`merge` applied in a fixed order is
    bit-reproducible.
    """

    time: np.ndarray
    populations: np.ndarray
    rdm1: np.ndarray
    u: np.ndarray
    rdm2: np.ndarray | None = None
    count: int = 0
    failed: list = field(default_factory=list)

    @classmethod
    def zeros(cls, time, n_sites: int, with_rdm2: bool = False) -> "EnsembleSums":
        t = len(time)
        return cls(
            np.asarray(time, dtype=float),
            np.zeros((t, n_sites)),
            np.zeros((t, n_sites, n_sites), dtype=complex),
            np.zeros((t, n_sites)),
            np.zeros((t,) + (n_sites,) * 4, dtype=complex) if with_rdm2 else None,
        )

    def add_batch(self, rdm1, populations, u, alive, rdm2=None, indices=None) -> None:
        """Add records with a trajectory axis second: ``rdm1`` is ``(T, n_traj, N, N)``."""
        alive = np.asarray(alive, dtype=bool)
        self.rdm1 += np.sum(np.asarray(rdm1)[:, alive], axis=1)
        self.populations += np.sum(np.asarray(populations)[:, alive], axis=1)
        self.u += np.sum(np.asarray(u)[:, alive], axis=1)
        if self.rdm2 is not None:
            if rdm2 is None:
                raise ValueError("two-body records required")
            self.rdm2 += np.sum(np.asarray(rdm2)[:, alive], axis=1)
        self.count += int(alive.sum())
        if indices is not None:
            self.failed.extend(int(i) for i in np.asarray(indices)[~alive])

    def merge(self, other: "EnsembleSums") -> "EnsembleSums":
        if not np.allclose(self.time, other.time):
            raise ValueError("records do not share a time grid")
        rdm2 = None if self.rdm2 is None or other.rdm2 is None else self.rdm2 + other.rdm2
        return EnsembleSums(
            self.time,
            self.populations + other.populations,
            self.rdm1 + other.rdm1,
            self.u + other.u,
            rdm2,
            self.count + other.count,
            sorted(self.failed + other.failed),
        )

    def mean(self) -> "EnsembleMean":
        if self.count == 0:
            raise ValueError("no surviving trajectories")
        c = self.count
        return EnsembleMean(
            self.time,
            self.populations / c,
            self.rdm1 / c,
            self.u / c,
            None if self.rdm2 is None else self.rdm2 / c,
            c,
            list(self.failed),
        )


@dataclass
class EnsembleMean:
    time: np.ndarray
    populations: np.ndarray
    rdm1: np.ndarray
    u: np.ndarray
    rdm2: np.ndarray | None
    n_traj: int
    failed: list


def ensemble_reduce(records) -> EnsembleMean:
    """Average per-trajectory records over the trajectories that survived.

    Each record is a dict with ``time``, ``rdm1``, ``populations`` and ``u``
    (optionally ``rdm2``) and an optional boolean ``alive``. Records are summed
    in the given order.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    first = records[0]
    n = first["rdm1"].shape[-1]
    sums = EnsembleSums.zeros(first["time"], n, with_rdm2="rdm2" in first)
    for i, rec in enumerate(records):
        if not np.array_equal(rec["time"], first["time"]):
            raise ValueError("records do not share a time grid")
        alive = np.array([rec.get("alive", True)])
        sums.add_batch(
            rec["rdm1"][:, None], rec["populations"][:, None], rec["u"][:, None], alive,
            None if sums.rdm2 is None else rec["rdm2"][:, None], indices=[i],
        )
    return sums.mean()


@dataclass
class Analysis:
    time: np.ndarray
    populations: np.ndarray
    states: StatePopulations | None
    p1: np.ndarray
    p2: np.ndarray | None
    models: dict | None
    n_traj: int


def analyze(mean: EnsembleMean, params: SshParams, triad=None) -> Analysis:
    """Purities of the ensemble density and, given a triad, state populations and model curves."""
    p1 = purity(mean.rdm1, rank=1)
    p2 = None if mean.rdm2 is None else purity(mean.rdm2, rank=2)
    states = models = None
    if triad is not None:
        states = reconstruct_state_populations(mean.populations, triad)
        models = model_purities(states, triad, mean.u, params)
    return Analysis(mean.time, mean.populations, states, p1, p2, models, mean.n_traj)
