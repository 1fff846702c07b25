import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccdegree.fockspace import (ANNIHILATE, CREATE, DeterminantSpace, Excitation, Integrals,
                                OrbitalBasis, antisymmetrize, apply_excitation, apply_ladder,
                                apply_string, check_hermitian, fci_solve, hamiltonian_matrix,
                                hermitize, occupied, operator_matrix)
from ccdegree.models import hubbard_integrals, random_integrals

from oracles import jw_excitation, jw_hamiltonian

masks = st.integers(min_value=0, max_value=(1 << 8) - 1)
orbitals = st.integers(min_value=0, max_value=7)


def test_reference_is_first_and_sorted():
    space = DeterminantSpace(OrbitalBasis(6, 3))
    assert space.dets[0] == 0b000111
    assert list(space.dets) == sorted(space.dets)
    assert space.dim == 20


def test_basis_validation():
    with pytest.raises(ValueError):
        OrbitalBasis(3, 4)
    with pytest.raises(ValueError):
        OrbitalBasis(30, 2)


def test_ladder_phase_counts_lower_occupied():
    # orbitals 0 and 2 occupied, create on 3: two occupied below
    assert apply_ladder(3, CREATE, 0b0101) == (1, 0b1101)
    # annihilate 2: one occupied below
    assert apply_ladder(2, ANNIHILATE, 0b0101) == (-1, 0b0001)
    assert apply_ladder(2, CREATE, 0b0101) is None
    assert apply_ladder(1, ANNIHILATE, 0b0101) is None


def test_excitation_string_phase_in_mask_basis():
    # a+_2 a_0 on orbitals {0,1}: annihilating 0 has no sign, creating 2 passes orbital 1
    assert apply_excitation(Excitation((0,), (2,)), 0b011) == (-1, 0b110)


def test_excitation_validation():
    with pytest.raises(ValueError):
        Excitation((1, 0), (2, 3))
    with pytest.raises(ValueError):
        Excitation((0,), (0,))
    with pytest.raises(ValueError):
        Excitation((0,), (2, 3))
    assert Excitation((0, 1), (2, 3)).rank == 2
    assert Excitation().rank == 0


@given(masks, orbitals, orbitals)
def test_anticommutation(det, p, q):
    # {a_p, a+_q} = delta_pq on every determinant
    def apply(ops):
        r = apply_string(ops, det)
        return {} if r is None else {r[1]: r[0]}

    acc = {}
    for ops in ([(p, ANNIHILATE), (q, CREATE)], [(q, CREATE), (p, ANNIHILATE)]):
        for m, s in apply(ops).items():
            acc[m] = acc.get(m, 0) + s
    acc = {m: s for m, s in acc.items() if s}
    assert acc == ({det: 1} if p == q else {})


@given(masks, orbitals, orbitals)
def test_creators_anticommute(det, p, q):
    r1 = apply_string([(p, CREATE), (q, CREATE)], det)
    r2 = apply_string([(q, CREATE), (p, CREATE)], det)
    if r1 is None or r2 is None:
        assert r1 is None and r2 is None
    else:
        assert r1[1] == r2[1] and r1[0] == -r2[0]


@given(masks)
def test_occupied_roundtrip(det):
    assert sum(1 << p for p in occupied(det)) == det


@pytest.mark.parametrize("K,N,seed", [(4, 2, 0), (5, 2, 3), (6, 3, 7), (5, 3, 11)])
def test_hamiltonian_matches_kronecker_construction(K, N, seed):
    ints = random_integrals(K, seed, 1.0)
    H = hamiltonian_matrix(ints, DeterminantSpace(OrbitalBasis(K, N)))
    assert np.max(np.abs(H - jw_hamiltonian(ints.h, ints.W, N))) <= 1e-13


def test_excitation_operators_match_kronecker_construction():
    basis = OrbitalBasis(5, 2)
    space = DeterminantSpace(basis)
    for I, A in [((0,), (3,)), ((1,), (2,)), ((0, 1), (2, 4))]:
        x = Excitation(I, A)
        M = operator_matrix([(1.0, x.ladder_string())], space)
        assert np.array_equal(M, jw_excitation(I, A, 5, 2))


def test_complex_hamiltonian_is_hermitian():
    rng = np.random.default_rng(4)
    K = 4
    h = rng.standard_normal((K, K)) + 1j * rng.standard_normal((K, K))
    W = rng.standard_normal((K,) * 4) + 1j * rng.standard_normal((K,) * 4)
    ints = hermitize(Integrals(h, W))
    H = hamiltonian_matrix(ints, DeterminantSpace(OrbitalBasis(K, 2)))
    assert check_hermitian(H) <= 1e-14
    assert np.max(np.abs(H - jw_hamiltonian(ints.h, ints.W, 2))) <= 1e-13


def test_antisymmetrize_properties():
    rng = np.random.default_rng(0)
    W = antisymmetrize(rng.standard_normal((3,) * 4))
    assert np.allclose(W, -W.transpose(1, 0, 2, 3))
    assert np.allclose(W, -W.transpose(0, 1, 3, 2))
    assert np.allclose(antisymmetrize(W), W)


def test_check_hermitian_rejects():
    with pytest.raises(ValueError):
        check_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        check_hermitian(np.zeros((2, 3)))


@pytest.mark.parametrize("U", [1.0, 4.0, 8.0])
def test_dimer_ground_energy_closed_form(U):
    H = hamiltonian_matrix(hubbard_integrals(2, 1.0, U), DeterminantSpace(OrbitalBasis(4, 2)))
    w, V = fci_solve(H)
    assert w[0] == pytest.approx((U - np.sqrt(U * U + 16)) / 2, abs=1e-12)
    assert np.allclose(V.T @ V, np.eye(len(w)))


def test_hubbard_chain_ground_energy_frozen():
    # four-site open chain, U = 2, half filling (value from the Kronecker oracle)
    ints = hubbard_integrals(4, 1.0, 2.0)
    E = jw_hamiltonian(ints.h, ints.W, 4)
    w_ref = np.linalg.eigvalsh(E)[0]
    assert w_ref == pytest.approx(-2.875942809005061, abs=1e-11)
    H = hamiltonian_matrix(ints, DeterminantSpace(OrbitalBasis(8, 4)))
    assert fci_solve(H)[0][0] == pytest.approx(w_ref, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_particle_number_conserved_property(seed):
    # the Hamiltonian commutes with number operator restricted to sector: its
    # spectrum on the N sector equals the N-block of the Kronecker operator
    ints = random_integrals(4, seed, 1.0)
    H = hamiltonian_matrix(ints, DeterminantSpace(OrbitalBasis(4, 2)))
    assert np.allclose(np.linalg.eigvalsh(H), np.linalg.eigvalsh(jw_hamiltonian(ints.h, ints.W, 2)))
