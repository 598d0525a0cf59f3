"""Ehrenfest propagation of SSH chains.

Nuclei follow velocity Verlet on the mean-field force. The electronic state is
a superposition of determinants over one orbital set; the orbitals are advanced
with the exact single-particle propagator at the half-step geometry and the
determinant amplitudes stay fixed, which is exact for a one-body Hamiltonian.

:class:`TrajectoryBatch` holds many independent trajectories sharing the same
initial electronic configuration (amplitudes and determinants) and is what the
ensemble runner uses. The single-trajectory API below is a thin layer on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .electronic import (
    Determinant,
    SuperpositionState,
    adiabatic_basis,
    one_body_rdm,
    one_body_rdm_orbital,
    one_body_transition_matrix,
    rdm1_to_site,
    rdm2_to_site,
    two_body_rdm_orbital,
)
from .model import (
    NuclearPhase,
    SshParams,
    build_h_e,
    electronic_energy,
    electronic_force,
    h_e_gradient,
    lattice_energy_and_force,
)


class MonitorViolation(RuntimeError):
    """A trajectory broke its energy or orthonormality monitor."""


class SingularCouplingError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.01  # fs
    t_max: float = 1000.0  # fs
    record_stride: int = 100  # steps between records
    energy_tol: float = 1e-4  # eV per ps
    orthonormality_tol: float = 1e-8

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.record_stride + 1

    def energy_window(self, t: float) -> float:
        """Largest admissible |E(t) - E(0)| at time ``t`` (fs)."""
        return self.energy_tol * max(1.0, t / 1000.0)


def active_orbitals(determinants) -> np.ndarray:
    """Orbitals occupied in at least one determinant; the rest never enter the density."""
    occ = set()
    for d in determinants:
        occ.update(d.occ_up)
        occ.update(d.occ_down)
    return np.array(sorted(occ), dtype=np.int64)


def _reindex(det: Determinant, mapping: dict[int, int]) -> Determinant:
    return Determinant(tuple(mapping[k] for k in det.occ_up), tuple(mapping[k] for k in det.occ_down))


@dataclass
class TrajectoryBatch:
    """Independent trajectories sharing amplitudes and determinants.

    Only the active orbital columns are stored and propagated: ``orbitals`` has
    shape ``(n_traj, n_sites, n_active)``.
    """

    params: SshParams
    u: np.ndarray
    p: np.ndarray
    orbitals: np.ndarray
    amplitudes: np.ndarray
    determinants: tuple[Determinant, ...]
    active: np.ndarray
    time: float = 0.0
    steps: int = 0
    alive: np.ndarray = None
    energy0: np.ndarray = None
    with_rdm2: bool = False
    _g1: np.ndarray = field(default=None, repr=False)
    _g2: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n_traj = self.u.shape[0]
        self.u = np.ascontiguousarray(self.u, dtype=float)
        self.p = np.ascontiguousarray(self.p, dtype=float)
        self.orbitals = np.ascontiguousarray(self.orbitals, dtype=complex)
        if self.alive is None:
            self.alive = np.ones(n_traj, dtype=bool)
        mapping = {int(k): i for i, k in enumerate(self.active)}
        local = tuple(_reindex(d, mapping) for d in self.determinants)
        # density matrices in the active-orbital basis are constants of motion
        proxy = SuperpositionState(np.eye(len(self.active)), self.amplitudes, local)
        self._g1 = one_body_rdm_orbital(proxy)
        self._sparse = _kernels.sparse_rdm(self._g1)
        if self.with_rdm2:
            self._g2 = two_body_rdm_orbital(proxy)
        self._work = _kernels.make_work(self.params.n_sites, len(self.active))
        if self.energy0 is None:
            self.energy0 = self.energies()

    @classmethod
    def from_states(cls, params: SshParams, phases, states, with_rdm2: bool = False) -> "TrajectoryBatch":
        """Stack trajectories whose states share amplitudes and determinants."""
        first = states[0]
        for s in states[1:]:
            if s.determinants != first.determinants or not np.array_equal(s.amplitudes, first.amplitudes):
                raise ValueError("all states in a batch must share amplitudes and determinants")
        act = active_orbitals(first.determinants)
        return cls(
            params=params,
            u=np.array([ph.u for ph in phases]),
            p=np.array([ph.p for ph in phases]),
            orbitals=np.array([s.orbitals[:, act] for s in states]),
            amplitudes=first.amplitudes,
            determinants=first.determinants,
            active=act,
            with_rdm2=with_rdm2,
        )

    @property
    def n_traj(self) -> int:
        return self.u.shape[0]

    def advance(self, n_steps: int, dt: float) -> np.ndarray:
        """Propagate alive trajectories ``n_steps`` steps; returns kernel status codes."""
        prm = self.params
        rows, cols, vals = self._sparse
        status = _kernels.propagate(
            self.u, self.p, self.orbitals, rows, cols, vals,
            prm.t0, prm.alpha, prm.k_spring, prm.mass, prm.hbar,
            float(dt), int(n_steps), self.alive, self._work,
        )
        self.alive &= status == 0
        self.time += n_steps * dt
        self.steps += n_steps
        return status

    def rdm1(self) -> np.ndarray:
        """Site-basis spin-summed 1-RDM of every trajectory, ``(n_traj, N, N)``."""
        return rdm1_to_site(self._g1, self.orbitals)

    def rdm2(self) -> np.ndarray:
        if self._g2 is None:
            raise ValueError("batch was created without two-body density")
        return rdm2_to_site(self._g2, self.orbitals)

    def energies(self) -> np.ndarray:
        """Total Ehrenfest energy per trajectory (eV)."""
        spring, kinetic, _ = lattice_energy_and_force(self.params, NuclearPhase(self.u, self.p))
        return electronic_energy(self.params, self.u, self.rdm1()) + spring + kinetic

    def orthonormality_defect(self) -> np.ndarray:
        c = self.orbitals
        s = np.conj(np.swapaxes(c, -1, -2)) @ c
        return np.abs(s - np.eye(c.shape[-1])).max(axis=(-2, -1))

    def adiabatic_populations(self, gamma: np.ndarray | None = None) -> np.ndarray:
        """Spin-summed populations of the instantaneous adiabatic orbitals, ascending energy."""
        gamma = self.rdm1() if gamma is None else gamma
        _, v = np.linalg.eigh(build_h_e(self.params, self.u))
        return np.real(np.einsum("tki,tkl,tli->ti", v, gamma, v))

    def check_monitors(self, cfg: IntegratorConfig) -> np.ndarray:
        """Flag trajectories outside the monitor window; returns the newly failed mask."""
        drift = np.abs(self.energies() - self.energy0)
        bad = (drift > cfg.energy_window(self.time)) | (self.orthonormality_defect() > cfg.orthonormality_tol)
        bad |= ~np.isfinite(drift)
        newly = bad & self.alive
        self.alive &= ~bad
        return newly

    def full_orbitals(self, index: int) -> np.ndarray:
        """Active orbitals of one trajectory embedded in an ``N x N`` matrix (inactive columns zero)."""
        c = np.zeros((self.params.n_sites, self.params.n_sites), dtype=complex)
        c[:, self.active] = self.orbitals[index]
        return c


@dataclass
class Trajectory:
    """One Ehrenfest trajectory: lattice phase, electronic state and monitors."""

    phase: NuclearPhase
    state: SuperpositionState
    params: SshParams
    time: float = 0.0
    energy0: float | None = None

    def __post_init__(self):
        if self.energy0 is None:
            self.energy0 = self.energy

    @property
    def energy(self) -> float:
        gamma = one_body_rdm(self.state)
        spring, kinetic, _ = lattice_energy_and_force(self.params, self.phase)
        return float(electronic_energy(self.params, self.phase.u, gamma) + spring + kinetic)

    @property
    def monitors(self) -> dict:
        c = self.state.orbitals
        return {
            "energy": self.energy,
            "norm": float(np.sum(np.abs(self.state.amplitudes) ** 2)),
            "orthonormality_defect": float(np.abs(c.conj().T @ c - np.eye(len(c))).max()),
        }

    def to_batch(self, with_rdm2: bool = False) -> TrajectoryBatch:
        b = TrajectoryBatch.from_states(self.params, [self.phase], [self.state], with_rdm2=with_rdm2)
        b.time = self.time
        b.energy0 = np.array([self.energy0])
        return b


def mean_field_force(traj: Trajectory) -> np.ndarray:
    """Ehrenfest force ``-<phi| dH_SSH/du_n |phi>`` per site; zero on clamped sites."""
    gamma = one_body_rdm(traj.state)
    _, _, f_spring = lattice_energy_and_force(traj.params, traj.phase)
    f = electronic_force(traj.params, gamma) + f_spring
    f[..., traj.phase.clamp_mask] = 0.0
    return f


def step(traj: Trajectory, dt: float) -> Trajectory:
    """One velocity-Verlet / exact-exponential step. Negative ``dt`` runs backwards."""
    if traj.state.n_orb != traj.params.n_sites:
        raise ValueError("state and params disagree on the number of sites")
    c = traj.state.orbitals.copy()
    u = traj.phase.u[None].copy()
    p = traj.phase.p[None].copy()
    cc = np.ascontiguousarray(c[None])
    g1 = _kernels.sparse_rdm(one_body_rdm_orbital(traj.state.with_orbitals(np.eye(len(c)))))
    prm = traj.params
    status = _kernels.propagate(
        u, p, cc, *g1, prm.t0, prm.alpha, prm.k_spring, prm.mass, prm.hbar,
        float(dt), 1, np.ones(1, dtype=bool), _kernels.make_work(prm.n_sites, prm.n_sites),
    )
    if status[0]:
        raise MonitorViolation("single-particle eigensolver failed")
    return Trajectory(
        NuclearPhase(u[0], p[0], traj.phase.clamp_mask),
        SuperpositionState(cc[0], traj.state.amplitudes, traj.state.determinants),
        traj.params,
        traj.time + dt,
        traj.energy0,
    )


def reference_step(traj: Trajectory, dt: float) -> Trajectory:
    """Plain numpy version of :func:`step` (full eigendecomposition); used to cross-check the kernel."""
    prm = traj.params
    f = mean_field_force(traj)
    p_half = traj.phase.p + 0.5 * dt * f
    u_new = traj.phase.u + dt * p_half / prm.mass
    eps, v = np.linalg.eigh(build_h_e(prm, 0.5 * (traj.phase.u + u_new)))
    prop = (v * np.exp(-1j * eps * dt / prm.hbar)) @ v.T
    state = traj.state.with_orbitals(prop @ traj.state.orbitals)
    mid = Trajectory(NuclearPhase(u_new, p_half, traj.phase.clamp_mask), state, prm, traj.time + dt, traj.energy0)
    p_new = p_half + 0.5 * dt * mean_field_force(mid)
    return Trajectory(NuclearPhase(u_new, p_new, traj.phase.clamp_mask), state, prm, traj.time + dt, traj.energy0)


RECORDABLE = ("rdm1", "populations", "rdm2", "energy", "u", "orthonormality")


def run_trajectory(init: Trajectory, cfg: IntegratorConfig, observers=("rdm1", "populations", "energy")) -> dict:
    """Propagate one trajectory and return its records at every ``record_stride`` steps.

    ``observers`` chooses among ``"rdm1"``, ``"populations"``, ``"rdm2"``,
    ``"energy"``, ``"u"`` and ``"orthonormality"``. Raises
    :class:`MonitorViolation` if a monitor fails.
    """
    unknown = set(observers) - set(RECORDABLE)
    if unknown:
        raise ValueError(f"unknown observers {sorted(unknown)}")
    batch = init.to_batch(with_rdm2="rdm2" in observers)
    records = record_batch(batch, cfg, observers)
    if not batch.alive[0]:
        raise MonitorViolation(f"trajectory failed its monitors at t = {records['failed_at']:.2f} fs")
    return {k: (v[:, 0] if isinstance(v, np.ndarray) and v.ndim > 1 else v) for k, v in records.items() if k != "failed_at"}


def record_batch(batch: TrajectoryBatch, cfg: IntegratorConfig, observers) -> dict:
    """Run a batch to ``cfg.t_max``, storing per-trajectory records (small batches only)."""
    out = {k: [] for k in observers}
    times = []
    failed_at = np.nan

    def snap():
        times.append(batch.time)
        g = batch.rdm1()
        if "rdm1" in out:
            out["rdm1"].append(g)
        if "populations" in out:
            out["populations"].append(batch.adiabatic_populations(g))
        if "rdm2" in out:
            out["rdm2"].append(batch.rdm2())
        if "energy" in out:
            out["energy"].append(batch.energies())
        if "u" in out:
            out["u"].append(batch.u.copy())
        if "orthonormality" in out:
            out["orthonormality"].append(batch.orthonormality_defect())

    snap()
    for _ in range(cfg.n_records - 1):
        batch.advance(cfg.record_stride, cfg.dt)
        if batch.check_monitors(cfg).any() and np.isnan(failed_at):
            failed_at = batch.time
        snap()
    rec = {k: np.array(v) for k, v in out.items()}
    rec["time"] = np.array(times)
    rec["failed_at"] = failed_at
    return rec


def nonadiabatic_coupling(traj: Trajectory, state_pair, degeneracy_tol: float = 1e-9) -> complex:
    """Nonadiabatic coupling between two many-body adiabatic states (eV).

    ``V_ik = i hbar sum_n udot_n <Phi_i| dH_e/du_n |Phi_k> / (E_i - E_k)``,
    with the states given as determinants (or occupation labels) over the
    instantaneous adiabatic orbitals. ``V`` is Hermitian; for real orbitals it
    is purely imaginary and antisymmetric.
    """
    prm = traj.params
    d_i, d_k = (Determinant.from_label(s, prm.n_sites) if isinstance(s, str) else s for s in state_pair)
    eps, v = adiabatic_basis(build_h_e(prm, traj.phase.u))[:2]
    udot = traj.phase.p / prm.mass
    if d_i == d_k:
        return 0j
    dh = sum(ud * g.toarray() for ud, g in zip(udot, h_e_gradient(prm)))
    dh_orb = v.T @ dh @ v
    t = one_body_transition_matrix(d_i, d_k, prm.n_sites)
    numerator = complex(np.sum(dh_orb * t.T))
    gap = float(d_i.occupations(prm.n_sites) @ eps - d_k.occupations(prm.n_sites) @ eps)
    if abs(gap) < degeneracy_tol:
        if abs(numerator) < 1e-12:
            return 0j
        raise SingularCouplingError(f"degenerate states with nonzero coupling numerator {numerator:.3e}")
    return 1j * prm.hbar * numerator / gap


def derivative_coupling(traj: Trajectory, state_pair) -> complex:
    """``udot . <Phi_i| grad Phi_k>``, anti-Hermitian in the state pair."""
    return nonadiabatic_coupling(traj, state_pair) / (-1j * traj.params.hbar)
