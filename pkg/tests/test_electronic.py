import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssh_ehrenfest.electronic import (
    Determinant,
    SuperpositionState,
    adiabatic_basis,
    build_excited_state,
    determinant_energy,
    label_occupations,
    level_index,
    one_body_rdm,
    one_body_rdm_orbital,
    one_body_transition_matrix,
    slater_condon_one_body,
    state_from_labels,
    two_body_purity,
    two_body_rdm,
)
from ssh_ehrenfest.model import SshParams, build_h_e
from ssh_ehrenfest.oracle import brute_force_rdms, enumerate_states, superposition_vector
from ssh_ehrenfest.verify import random_superposition, random_unitary


def _adiabatic(params, u):
    return adiabatic_basis(build_h_e(params, u)).orbitals.astype(complex)


def test_labels_roundtrip():
    for lb in ["(2200)", "(2110)", "(2101)", "(1210)", "(1111)", "(0022)"]:
        assert Determinant.from_label(lb).label(4) == lb
    d = Determinant.from_label("(2110)")
    assert d.occ_down == (0, 1) and d.occ_up == (0, 2)
    with pytest.raises(ValueError):
        Determinant.from_label("(2130)")
    with pytest.raises(ValueError):
        Determinant.from_label("(2100)")


def test_window_labels():
    assert label_occupations("(2110)", 8) == [2, 2, 2, 1, 1, 0, 0, 0]
    d = Determinant.from_label("(2101)", 20)
    occ = d.occupations(20)
    assert occ.sum() == 20 and list(occ[8:12]) == [2, 1, 0, 1]
    with pytest.raises(ValueError):
        label_occupations("(210)", 8)


def test_level_index():
    assert level_index("HOMO", 4) == 1
    assert level_index("LUMO+1", 4) == 3
    assert level_index("HOMO-1", 20) == 8
    assert level_index("2", 4) == 2
    with pytest.raises(ValueError):
        level_index("LUMO+5", 4)


def test_ground_state(params4, geom4):
    st_ = build_excited_state(Determinant.ground(4), [None], [1.0], _adiabatic(params4, geom4.u_star))
    assert st_.labels() == ["(2200)"]
    rho = one_body_rdm(st_)
    assert np.trace(rho).real == pytest.approx(4)
    assert np.allclose(rho @ rho, 2 * rho, atol=1e-12)
    assert np.sum(np.abs(rho) ** 2) == pytest.approx(8)


def test_vibret_initial_state(params4, geom4):
    orb = _adiabatic(params4, geom4.u_star)
    st_ = build_excited_state(Determinant.ground(4), [(1, 2, "up"), (1, 3, "up")], [2**-0.5, 2**-0.5], orb)
    assert st_.labels() == ["(2110)", "(2101)"]
    assert np.allclose(np.abs(st_.amplitudes) ** 2, [0.5, 0.5])
    g = one_body_rdm_orbital(st_)
    assert np.allclose(np.diag(g).real, [2, 1, 0.5, 0.5])
    # LUMO / LUMO+1 coherence
    assert abs(g[2, 3]) == pytest.approx(0.5)
    rho = one_body_rdm(st_)
    n = np.real(np.diag(orb.conj().T @ rho @ orb))
    assert np.allclose(n, [2, 1, 0.5, 0.5])


def test_robust_state_labels(params4, geom4):
    orb = _adiabatic(params4, geom4.u_star)
    st_ = build_excited_state(Determinant.ground(4), [(1, 3, "up"), (0, 2, "up")], [2**-0.5, 2**-0.5], orb)
    assert st_.labels() == ["(2101)", "(1210)"]
    # the HOMO-1 -> LUMO excitation carries a fermion sign relative to the canonical ordering
    canon = state_from_labels(["(2101)", "(1210)"], [2**-0.5, 2**-0.5], orb)
    assert canon.determinants == st_.determinants
    assert np.allclose(st_.amplitudes, [2**-0.5, -(2**-0.5)])


def test_invalid_excitations(params4):
    orb = np.eye(4, dtype=complex)
    with pytest.raises(ValueError):
        build_excited_state(Determinant.ground(4), [(2, 3, "up")], [1.0], orb)
    with pytest.raises(ValueError):
        build_excited_state(Determinant.ground(4), [(1, 0, "up")], [1.0], orb)
    with pytest.raises(ValueError):
        build_excited_state(Determinant.ground(4), [(1, 2, "up"), (1, 3, "up")], [1.0, 1.0], orb)


def test_state_validation():
    d = Determinant.ground(4)
    with pytest.raises(ValueError):
        SuperpositionState(np.eye(4), [0.5], (d,))
    with pytest.raises(ValueError):
        SuperpositionState(np.eye(4), [2**-0.5, 2**-0.5], (d, d))
    with pytest.raises(ValueError):
        SuperpositionState(np.ones((4, 4)), [1.0], (d,))


def test_slater_condon_rules(rng):
    a = rng.normal(size=(4, 4))
    g = Determinant.from_label("(2200)")
    assert slater_condon_one_body(g, g, np.eye(4)) == pytest.approx(4)
    assert slater_condon_one_body(g, g, a) == pytest.approx(2 * (a[0, 0] + a[1, 1]))
    d1, d2 = Determinant.from_label("(2101)"), Determinant.from_label("(1210)")
    assert slater_condon_one_body(d1, d2, a) == 0
    assert np.all(one_body_transition_matrix(d1, d2, 4) == 0)
    d0 = Determinant.from_label("(2110)")
    assert abs(slater_condon_one_body(d0, d1, a)) == pytest.approx(abs(a[2, 3]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rdms_match_oracle(seed):
    rng = np.random.default_rng(seed)
    state = random_superposition(rng, 4, int(rng.integers(1, 6)))
    basis = enumerate_states(4, 2, 2)
    g1, g2 = brute_force_rdms(superposition_vector(state, basis), basis)
    assert np.allclose(one_body_rdm(state), g1, atol=1e-12)
    assert np.allclose(two_body_rdm(state), g2, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([4, 6]))
def test_rdm_invariants(seed, n):
    rng = np.random.default_rng(seed)
    state = random_superposition(rng, n, int(rng.integers(1, 5)))
    rho = one_body_rdm(state)
    gam = two_body_rdm(state)
    ne = n
    assert np.allclose(rho, rho.conj().T, atol=1e-12)
    assert np.trace(rho).real == pytest.approx(ne)
    w = np.linalg.eigvalsh(rho)
    assert w.min() > -1e-8 and w.max() < 2 + 1e-8
    # Gamma[p,q,r,s] = conj(Gamma[s,r,q,p])
    assert np.allclose(gam, np.conj(gam.transpose(3, 2, 1, 0)), atol=1e-12)
    assert np.einsum("pqqp->", gam).real == pytest.approx(ne * (ne - 1) / 2)
    contraction = np.einsum("pqqs->ps", gam)
    assert np.allclose(contraction, (ne - 1) / 2 * rho.T, atol=1e-10)
    assert two_body_purity(state) == pytest.approx(np.sum(np.abs(gam) ** 2))


def test_degenerate_pair_at_every_geometry(params4, rng):
    for _ in range(20):
        u = np.zeros(4)
        u[1:3] = rng.normal(0, 0.1, 2)
        eps = adiabatic_basis(build_h_e(params4, u)).energies
        e1 = determinant_energy(Determinant.from_label("(2101)"), eps)
        e2 = determinant_energy(Determinant.from_label("(1210)"), eps)
        assert abs(e1 - e2) < 1e-10


def test_adiabatic_basis(params4, geom4, rng):
    res = adiabatic_basis(build_h_e(params4, geom4.u_star))
    assert np.allclose(res.energies, [-3.8897, -2.0842, 2.0842, 3.8897], atol=1e-3)
    # deterministic; the first component of (near-)maximal magnitude is positive
    again = adiabatic_basis(build_h_e(params4, geom4.u_star))
    assert np.array_equal(res.orbitals, again.orbitals)
    v = res.orbitals
    mag = np.abs(v)
    first = np.argmax(mag >= mag.max(axis=0) * (1 - 1e-8), axis=0)
    assert np.all(v[first, np.arange(4)] > 0)
    for _ in range(10):
        u = rng.normal(0, 0.1, 6)
        e = adiabatic_basis(build_h_e(SshParams(n_sites=6), u)).energies
        assert np.allclose(e, -e[::-1], atol=1e-12)


def test_adiabatic_basis_degenerate_continuity():
    # a matrix with a degenerate pair: the reference selects the rotation inside the pair
    h = np.diag([-1.0, 0.0, 0.0, 1.0])
    ref = np.eye(4)
    c, s = np.cos(0.3), np.sin(0.3)
    ref[:, 1:3] = np.array([[0, 0], [c, -s], [s, c], [0, 0]])
    v = adiabatic_basis(h, reference=ref).orbitals
    assert np.allclose(np.abs(v[:, 1:3]), np.abs(ref[:, 1:3]), atol=1e-12)
    assert np.allclose(np.einsum("ik,ik->k", ref, v), 1.0)


def test_two_particle_selection_rule(rng):
    # one-body RDM cross terms vanish between determinants differing by two spin-orbitals
    orb = random_unitary(rng, 4)
    a = state_from_labels(["(2101)", "(1210)"], [2**-0.5, 2**-0.5], orb)
    b = state_from_labels(["(2101)", "(1210)"], [2**-0.5, -(2**-0.5)], orb)
    assert np.allclose(one_body_rdm(a), one_body_rdm(b), atol=1e-14)
    assert not np.allclose(two_body_rdm(a), two_body_rdm(b))
