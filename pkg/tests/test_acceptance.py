"""Acceptance criteria. Each test prints one ``PASS``/``FAIL criterion N`` line.

The ensemble runs are shared between criteria through module fixtures and take
roughly 15 minutes on one core. Run this file alone with ``pytest -s
tests/test_acceptance.py``.
"""

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.signal import find_peaks

from conftest import ACCEPTANCE_LINES
from ssh_ehrenfest.config import load_config
from ssh_ehrenfest.dynamics import TrajectoryBatch
from ssh_ehrenfest.ensemble import initial_conditions, prepare, run_ensemble
from ssh_ehrenfest.groundstate import hessian_and_modes, optimize_geometry, sample_normal_coordinates, trajectory_rng
from ssh_ehrenfest.model import SshParams, build_h_e, chiral_operator
from ssh_ehrenfest.oracle import occupation_classes
from ssh_ehrenfest.verify import REFERENCE_CLASS_ENERGIES, propagation_overlap, random_superposition, rdm_agreement

SEED = 20261017
FS_PER_RECORD = 10.0


def report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, line


def ensemble(**kw):
    dt = float(kw.pop("dt", 0.05))
    base = {"seed": SEED, "dt": dt, "record_stride": int(round(FS_PER_RECORD / dt)), "chunk_size": 64}
    base.update(kw)
    return run_ensemble(load_config(None, {k: str(v) for k, v in base.items()}), write=False)


@pytest.fixture(scope="module")
def vibret4():
    # shared by the timescale and incoherence criteria: same initial state, N = 4
    return ensemble(n_traj=1000, t_max=14_000, record_rdm2="true")


@pytest.fixture(scope="module")
def vibret20():
    return ensemble(n_sites=20, n_traj=500, t_max=4000)


def test_criterion_1_class_energies():
    prm = SshParams()
    geom = optimize_geometry(prm)
    classes = occupation_classes(geom.orbital_energies, 2, 2)
    e = np.sort([c[1] for c in classes])
    err = float(np.abs(e - np.sort(REFERENCE_CLASS_ENERGIES)).max()) if len(classes) == 19 else np.inf
    u2 = abs(geom.u_star[1])
    ok = len(classes) == 19 and err <= 0.02 and abs(u2 - 0.0847) <= 0.002
    report(1, ok, f"{len(classes)} classes, max |E - reference| = {err:.4f} eV (tol 0.02), |u_2| = {u2:.5f} A (0.0847 +/- 0.002)")


def test_criterion_2_long_chain():
    geom = optimize_geometry(SshParams(n_sites=100))
    bonds = np.diff(geom.u_star)[10:-10]
    alternates = bool(np.all(np.sign(bonds[1:]) == -np.sign(bonds[:-1])))
    amp = float(np.abs(bonds).min())
    ok = abs(geom.gap - 1.3) <= 0.1 and alternates and amp > 1e-3
    report(2, ok, f"N=100 gap = {geom.gap:.3f} eV (1.3 +/- 0.1), interior bond changes alternate: {alternates}, min |du| = {amp:.4f} A")


def _extrema(y, prominence):
    lo, _ = find_peaks(-y, prominence=prominence)
    hi, _ = find_peaks(y, prominence=prominence)
    return lo, hi


@pytest.mark.slow
def test_criterion_3_vibret_n4(vibret4):
    mean, res = vibret4
    t = res.time
    lumo1 = res.populations[:, 3]
    homo1 = res.populations[:, 0]
    p1 = res.states.p[:, 1]
    lo, _ = _extrema(lumo1, 0.05)
    first = lo[0]
    transferred = 1 - lumo1[first] / lumo1[0]
    t_first = t[first] / 1000
    # a full cycle: p1 falls below 20 % of its start and climbs back above 80 %
    cycles, low, ends = 0, False, []
    for k in range(len(t)):
        if not low and p1[k] < 0.2 * p1[0]:
            low = True
        elif low and p1[k] > 0.8 * p1[0]:
            low = False
            cycles += 1
            ends.append(t[k] / 1000)
    within8 = sum(e <= 8.0 for e in ends)
    ok = transferred >= 0.9 and homo1[first] <= 1.55 and abs(t_first - 3) <= 1 and cycles >= 2
    report(
        3, ok,
        f"N=4, {res.n_traj} traj, {t[-1] / 1000:.0f} ps: first transfer at {t_first:.2f} ps (3 +/- 1), "
        f"LUMO+1 emptied by {100 * transferred:.1f} %, HOMO-1 = {homo1[first]:.3f}; "
        f"{cycles} full cycles (completed at {', '.join(f'{e:.2f}' for e in ends)} ps; {within8} within 8 ps)",
    )


@pytest.mark.slow
def test_criterion_4_vibret_n20(vibret20):
    mean, res = vibret20
    t = res.time
    lumo1 = res.populations[:, 11]
    lo, hi = _extrema(lumo1, 0.02)
    ext = np.sort(np.concatenate([lo, hi]))
    ext = ext[t[ext] <= 3000]
    half = np.diff(t[ext])
    period = 2 * float(half.mean()) / 1000 if len(half) else np.nan
    visible = t[ext[-1]] / 1000 if len(ext) else 0.0
    ok = abs(period - 0.7) <= 0.3 and len(ext) >= 3 and visible >= 2.0
    report(
        4, ok,
        f"N=20, {res.n_traj} traj, 4 ps: LUMO+1 extrema at {', '.join(f'{x / 1000:.2f}' for x in t[ext])} ps, "
        f"period = {period:.2f} ps (0.7 +/- 0.3), last visible extremum {visible:.2f} ps",
    )


@pytest.mark.slow
def test_criterion_5_incoherence(vibret4):
    mean, res = vibret4
    t = res.time
    p2 = res.p2
    m = res.models
    k200 = int(np.searchsorted(t, 200.0))
    excess = p2[0] - m[("M3", "P2")][0]
    drop = p2[0] - p2[k200]
    sharp = drop >= 0.5 * excess
    w = t > 300.0
    dist = {name: float(np.sqrt(trapezoid((p2[w] - m[(name, "P2")][w]) ** 2, t[w]) / (t[w][-1] - t[w][0]))) for name in ("M1", "M2", "M3")}
    closest = min(dist, key=dist.get)
    p1_gap = float(np.abs(m[("M2", "P1")] - m[("M3", "P1")]).max())
    ok = sharp and closest == "M3" and p1_gap < 1e-10
    report(
        5, ok,
        f"P2 {p2[0]:.3f} -> {p2[k200]:.3f} by 200 fs (drop {drop:.3f}, half excess {0.5 * excess:.3f}); "
        f"rms distance t>300 fs: M1 {dist['M1']:.4f}, M2 {dist['M2']:.4f}, M3 {dist['M3']:.4f}; max |M2_P1 - M3_P1| = {p1_gap:.1e}",
    )


def test_criterion_6_robust_superposition():
    mean, res = ensemble(n_traj=500, t_max=1000, initial_state="(2101)+(1210)", triad="", record_rdm2="true")
    p2 = res.p2
    dev = float(np.abs(p2 / p2[0] - 1).max())
    ok = dev <= 0.02 and abs(p2[0] - 5.0) <= 0.05 and p2.min() > 4.5
    report(6, ok, f"(2101)+(1210) state, {res.n_traj} traj, 1 ps: P2(0) = {p2[0]:.4f} (coherent 5.0, incoherent 4.5), max relative change {100 * dev:.2f} % (tol 2 %), min P2 {p2.min():.4f}")


def test_criterion_7_negative_controls():
    worst = {}
    for name, state in (("|b1|^2=0", "HOMO->LUMO"), ("|b1|^2=1", "HOMO->LUMO+1")):
        mean, res = ensemble(n_traj=500, t_max=5000, initial_state=state)
        worst[name] = float(np.abs(res.populations - res.populations[0]).max())
    ok = all(v <= 0.05 for v in worst.values())
    report(7, ok, "max orbital population change over 5 ps: " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + " (tol 0.05)")


def test_criterion_8_oracle():
    ov = propagation_overlap(SshParams(), t_total=100.0, dt=0.05)
    e1, e2 = rdm_agreement(np.random.default_rng(SEED), 100)
    ok = ov >= 1 - 1e-8 and max(e1, e2) <= 1e-10
    report(8, ok, f"min overlap over 100 fs = {ov:.12f} (>= 1 - 1e-8); RDM1/RDM2 max error on 100 states = {e1:.1e} / {e2:.1e} (tol 1e-10)")


def test_criterion_9_properties():
    rng = np.random.default_rng(SEED)
    checks = {}
    # chiral spectrum symmetry at random geometries
    worst = 0.0
    for n in (4, 6, 20):
        prm = SshParams(n_sites=n)
        s = chiral_operator(n)
        for _ in range(50):
            u = rng.normal(0, 0.1, n)
            h = build_h_e(prm, u)
            eps = np.linalg.eigvalsh(h)
            worst = max(worst, float(np.abs(eps + eps[::-1]).max()), float(np.abs(s @ h @ s + h).max()))
    checks["chiral"] = (worst < 1e-12, f"+/-eps asymmetry {worst:.1e}")
    # energy drift and orthonormality over 1e5 steps (1 ps at dt = 0.01 fs), then 10 ps drift at dt = 0.05 fs
    cfg = load_config(None, {"seed": str(SEED)})
    setup = prepare(cfg)
    ph, st = initial_conditions(setup, range(16))
    b = TrajectoryBatch.from_states(cfg.params, ph, st)
    b.advance(100_000, 0.01)
    ortho = float(b.orthonormality_defect().max())
    drift1 = float(np.abs(b.energies() - b.energy0).max())
    b = TrajectoryBatch.from_states(cfg.params, ph, st)
    e = [b.energies()]
    for _ in range(20):
        b.advance(10_000, 0.05)
        e.append(b.energies())
    e = np.array(e)
    tt = np.arange(len(e)) * 0.5  # ps
    slope = float(np.abs(np.polyfit(tt, e - e[0], 1)[0]).max())
    dev10 = float(np.abs(e - e[0]).max()) / 10.0
    checks["energy"] = (drift1 < 1e-4 and slope < 1e-4 and dev10 < 1e-4, f"|dE| over 1 ps {drift1:.1e} eV, 10 ps slope {slope:.1e} eV/ps, max|dE|/10 ps {dev10:.1e} eV/ps")
    checks["unitarity"] = (ortho < 1e-8, f"orthonormality defect after 1e5 steps {ortho:.1e}")
    # Wigner sampler variances within 4 standard errors
    prm = SshParams()
    geom = optimize_geometry(prm)
    modes = hessian_and_modes(prm, geom)
    n = 200_000
    q, p = sample_normal_coordinates(modes, prm, trajectory_rng(SEED, 0), size=n)
    zq = np.abs(q.var(0) / (prm.hbar / (2 * prm.mass * modes.frequencies)) - 1) / np.sqrt(2 / n)
    zp = np.abs(p.var(0) / (prm.hbar * prm.mass * modes.frequencies / 2) - 1) / np.sqrt(2 / n)
    zmax = float(max(zq.max(), zp.max()))
    checks["wigner"] = (zmax < 4, f"variance z-score {zmax:.2f}")
    # two-body density trace and contraction
    from ssh_ehrenfest.electronic import one_body_rdm, two_body_rdm

    err = 0.0
    for _ in range(50):
        s = random_superposition(rng, 4, int(rng.integers(1, 5)))
        g1, g2 = one_body_rdm(s), two_body_rdm(s)
        err = max(err, abs(np.einsum("pqqp->", g2) - 6), float(np.abs(np.einsum("pqqs->ps", g2) - 1.5 * g1.T).max()))
        big = g2.reshape(16, 16)
        err = max(err, float(np.abs(big - big.conj().T).max()))
    checks["rdm2"] = (err < 1e-10, f"trace/contraction error {err:.1e}")
    # seeded bit reproducibility
    a, _ = ensemble(n_traj=8, t_max=50)
    c, _ = ensemble(n_traj=8, t_max=50)
    same = np.array_equal(a.rdm1, c.rdm1) and np.array_equal(a.rdm2, c.rdm2) and np.array_equal(a.populations, c.populations)
    checks["reproducible"] = (same, f"identical seeded reruns: {same}")
    ok = all(v[0] for v in checks.values())
    report(9, ok, "; ".join(f"{k}: {v[1]}" for k, v in checks.items()))


if __name__ == "__main__":
    raise SystemExit(pytest.main(["-s", "-v", __file__]))
