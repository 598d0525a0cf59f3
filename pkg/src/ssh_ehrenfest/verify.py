"""Cross-checks of the determinant engine against the Fock-space oracle."""

from __future__ import annotations

import numpy as np

from .dynamics import Trajectory, step
from .electronic import (
    Determinant,
    SuperpositionState,
    build_excited_state,
    one_body_rdm,
    slater_condon_one_body,
    two_body_rdm,
)
from .groundstate import hessian_and_modes, optimize_geometry, sample_wigner, trajectory_rng
from .electronic import adiabatic_basis
from .model import SshParams, build_h_e
from .oracle import (
    brute_force_rdms,
    determinant_vector,
    enumerate_states,
    full_ci_ehrenfest,
    full_ci_propagate,
    lift_one_body,
    many_body_spectrum,
    occupation_classes,
    superposition_vector,
)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_superposition(rng: np.random.Generator, n_sites: int = 4, n_det: int = 3) -> SuperpositionState:
    """Random complex superposition of distinct neutral determinants over random orbitals."""
    basis = enumerate_states(n_sites, n_sites // 2, n_sites // 2)
    picks = rng.choice(basis.dim, size=n_det, replace=False)
    dets = tuple(Determinant.from_bits(basis.states[i], n_sites) for i in picks)
    b = rng.standard_normal(n_det) + 1j * rng.standard_normal(n_det)
    return SuperpositionState(random_unitary(rng, n_sites), b / np.linalg.norm(b), dets)


def vibret_state(params: SshParams, u) -> SuperpositionState:
    """Equal-weight HOMO->LUMO / HOMO->LUMO+1 superposition over the adiabatic orbitals at ``u``."""
    h = params.n_sites // 2 - 1
    orb = adiabatic_basis(build_h_e(params, u)).orbitals.astype(complex)
    return build_excited_state(Determinant.ground(params.n_sites), [(h, h + 1, "up"), (h, h + 2, "up")], [2**-0.5, 2**-0.5], orb)


def rdm_agreement(rng, n_random: int = 100) -> tuple[float, float]:
    """Largest element-wise RDM1/RDM2 differences over random N=4 states."""
    basis = enumerate_states(4, 2, 2)
    e1 = e2 = 0.0
    for _ in range(n_random):
        st = random_superposition(rng, 4, int(rng.integers(1, 5)))
        g1, g2 = brute_force_rdms(superposition_vector(st, basis), basis)
        e1 = max(e1, float(np.abs(g1 - one_body_rdm(st)).max()))
        e2 = max(e2, float(np.abs(g2 - two_body_rdm(st)).max()))
    return e1, e2


def propagation_overlap(params: SshParams, t_total: float = 100.0, dt: float = 0.05, seed: int = 0) -> float:
    """Minimum overlap between the engine and full-CI propagation along the engine's nuclear path."""
    geom = optimize_geometry(params)
    modes = hessian_and_modes(params, geom)
    phase = sample_wigner(modes, params, geom, trajectory_rng(seed, 0))
    traj = Trajectory(phase, vibret_state(params, phase.u), params)
    basis = enumerate_states(params.n_sites, params.n_sites // 2, params.n_sites // 2)
    psi = superposition_vector(traj.state, basis)
    worst = 1.0
    n_steps = int(round(t_total / dt))
    for _ in range(n_steps):
        nxt = step(traj, dt)
        # the engine exponentiates at the midpoint geometry
        psi = full_ci_propagate(psi, [0.5 * (traj.phase.u + nxt.phase.u)], dt, params, basis)[-1]
        traj = nxt
        ov = abs(np.vdot(superposition_vector(traj.state, basis), psi))
        worst = min(worst, ov)
    return worst


def ehrenfest_agreement(params: SshParams, n_steps: int = 200, dt: float = 0.05, seed: int = 1) -> float:
    """Largest displacement difference between the engine and a self-consistent full-CI Ehrenfest run."""
    geom = optimize_geometry(params)
    modes = hessian_and_modes(params, geom)
    phase = sample_wigner(modes, params, geom, trajectory_rng(seed, 0))
    traj = Trajectory(phase, vibret_state(params, phase.u), params)
    basis = enumerate_states(params.n_sites, params.n_sites // 2, params.n_sites // 2)
    us, _, _ = full_ci_ehrenfest(superposition_vector(traj.state, basis), phase.u, phase.p, params, basis, dt, n_steps)
    worst = 0.0
    for k in range(n_steps):
        traj = step(traj, dt)
        worst = max(worst, float(np.abs(traj.phase.u - us[k + 1]).max()))
    return worst


def slater_condon_agreement(rng, n_random: int = 50) -> float:
    basis = enumerate_states(4, 2, 2)
    worst = 0.0
    for _ in range(n_random):
        c = random_unitary(rng, 4)
        a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        i, j = rng.choice(basis.dim, size=2)
        di, dj = (Determinant.from_bits(basis.states[k], 4) for k in (i, j))
        vi = determinant_vector(c, di.occ_up, di.occ_down, basis)
        vj = determinant_vector(c, dj.occ_up, dj.occ_down, basis)
        # the operator sum A_kl a+_k a_l in the site basis is C A C^H
        ref = np.vdot(vi, lift_one_body(c @ a @ c.conj().T, basis) @ vj)
        worst = max(worst, abs(ref - slater_condon_one_body(di, dj, a)))
    return float(worst)


REFERENCE_CLASS_ENERGIES = [-11.95, -7.78, -5.97, -5.97, -4.17, -3.61, -1.81, -1.81, 0.0, 0.0, 0.0, 1.81, 1.81, 3.61, 4.17, 5.97, 5.97, 7.78, 11.95]


def run_checks(seed: int = 0, n_random: int = 100):
    """Yield ``(name, passed, detail)`` for each oracle cross-check."""
    rng = np.random.default_rng(seed)
    prm = SshParams()
    geom = optimize_geometry(prm)
    classes = occupation_classes(geom.orbital_energies, 2, 2)
    energies = np.array([e for _, e, _ in classes])
    err = float(np.abs(np.sort(energies) - np.sort(REFERENCE_CLASS_ENERGIES)).max()) if len(classes) == 19 else np.inf
    yield "occupation classes", len(classes) == 19 and err <= 0.02, f"{len(classes)} classes, max |dE| vs reference = {err:.4f} eV"
    spec = many_body_spectrum(prm, geom.u_star, 2, 2)
    expanded = np.sort(np.repeat(energies, [m for _, _, m in classes]))
    gap = float(np.abs(spec - expanded).max())
    yield "class energies vs Fock spectrum", gap < 1e-10, f"max |dE| = {gap:.2e} eV"
    e1, e2 = rdm_agreement(rng, n_random)
    yield "RDM1/RDM2 element-wise", max(e1, e2) < 1e-10, f"{n_random} random states, max |d rdm1| = {e1:.2e}, |d rdm2| = {e2:.2e}"
    sc = slater_condon_agreement(rng)
    yield "Slater-Condon one-body", sc < 1e-10, f"max |d| = {sc:.2e}"
    ov = propagation_overlap(prm)
    yield "determinant lift over 100 fs", ov >= 1 - 1e-8, f"min overlap = {ov:.12f}"
    du = ehrenfest_agreement(prm)
    yield "self-consistent Ehrenfest, 10 fs", du < 1e-10, f"max |du| = {du:.2e} A"
